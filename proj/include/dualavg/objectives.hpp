#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "dualavg/feasible_set.hpp"
#include "dualavg/rng.hpp"

namespace dualavg {

// ---------------------------------------------------------------------------
// Power iteration

struct PowerIterationResult {
  double value = 0.0;  // largest eigenvalue of the PSD operator
  int iterations = 0;
  bool converged = false;
};

inline constexpr double kPowerTol = 1e-10;
inline constexpr int kPowerMaxIter = 10'000;

/// Largest eigenvalue of a symmetric positive semidefinite operator given
/// only through `apply(v)`. Stops when the Rayleigh quotient changes by at
/// most `tol` relative.
template <typename Apply>
PowerIterationResult power_iteration(Apply&& apply, Eigen::Index dim, std::uint64_t seed = 0x5eed,
                                     double tol = kPowerTol, int max_iter = kPowerMaxIter) {
  PowerIterationResult out;
  if (dim == 0) {
    out.converged = true;
    return out;
  }
  Rng rng = make_rng(seed);
  Vector v = standard_normal(dim, rng);
  v.normalize();
  double lambda = 0.0;
  for (int it = 1; it <= max_iter; ++it) {
    Vector w = apply(v);
    const double next = v.dot(w);
    const double len = w.norm();
    out.iterations = it;
    if (len == 0.0) {  // v lies in the kernel; the operator is zero on this start
      out.value = 0.0;
      out.converged = true;
      return out;
    }
    v = w / len;
    if (it > 1 && std::abs(next - lambda) <= tol * std::abs(next)) {
      out.value = next;
      out.converged = true;
      return out;
    }
    lambda = next;
  }
  out.value = lambda;
  return out;
}

// ---------------------------------------------------------------------------
// Local objectives

/// f(x) = -||M x||^2, the local term of distributed PCA.
struct PcaForm {
  Matrix m;
};

/// f(x) = 1/2 x^T A x + b^T x with symmetric A.
struct QuadraticForm {
  Matrix a;
  Vector b;
};

struct BlackBoxForm {
  Eigen::Index dim = 0;
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> gradient;
};

/// One agent's smooth objective with its gradient-Lipschitz constant.
class LocalObjective {
 public:
  using Form = std::variant<PcaForm, QuadraticForm, BlackBoxForm>;

  /// Lipschitz constant 2 * sigma_max(M)^2 from power iteration on M^T M.
  static LocalObjective pca(Matrix m) {
    auto pi = power_iteration([&](const Vector& v) -> Vector { return m.transpose() * (m * v); },
                              m.cols());
    LocalObjective out(PcaForm{std::move(m)}, 2.0 * pi.value);
    out.lipschitz_converged_ = pi.converged;
    return out;
  }

  /// Lipschitz constant sigma_max(A) from power iteration on A^2.
  static LocalObjective quadratic(Matrix a, Vector b) {
    if (a.rows() != a.cols()) throw DimensionError("quadratic form needs a square matrix");
    detail::require_dim(b.size(), a.rows(), "quadratic linear term");
    auto pi = power_iteration([&](const Vector& v) -> Vector { return a * (a * v); }, a.rows());
    LocalObjective out(QuadraticForm{std::move(a), std::move(b)}, std::sqrt(pi.value));
    out.lipschitz_converged_ = pi.converged;
    return out;
  }

  static LocalObjective black_box(Eigen::Index dim, std::function<double(const Vector&)> value,
                                  std::function<Vector(const Vector&)> gradient, double lipschitz) {
    return LocalObjective(BlackBoxForm{dim, std::move(value), std::move(gradient)}, lipschitz);
  }

  Eigen::Index dimension() const {
    return std::visit(
        [](const auto& f) -> Eigen::Index {
          using F = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<F, PcaForm>) return f.m.cols();
          else if constexpr (std::is_same_v<F, QuadraticForm>) return f.a.rows();
          else return f.dim;
        },
        form_);
  }

  double value(const Vector& x) const {
    detail::require_dim(x.size(), dimension(), "objective value");
    return std::visit(
        [&](const auto& f) -> double {
          using F = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<F, PcaForm>) return -(f.m * x).squaredNorm();
          else if constexpr (std::is_same_v<F, QuadraticForm>) return 0.5 * x.dot(f.a * x) + f.b.dot(x);
          else return f.value(x);
        },
        form_);
  }

  Vector gradient(const Vector& x) const {
    detail::require_dim(x.size(), dimension(), "objective gradient");
    return std::visit(
        [&](const auto& f) -> Vector {
          using F = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<F, PcaForm>) return -2.0 * (f.m.transpose() * (f.m * x));
          else if constexpr (std::is_same_v<F, QuadraticForm>) return f.a * x + f.b;
          else return f.gradient(x);
        },
        form_);
  }

  double lipschitz() const { return lipschitz_; }
  bool lipschitz_converged() const { return lipschitz_converged_; }
  const Form& form() const { return form_; }

  /// Hessian for the quadratic families (PCA included); empty for black boxes.
  std::optional<std::pair<Matrix, Vector>> as_quadratic() const {
    if (const auto* p = std::get_if<PcaForm>(&form_))
      return std::pair{Matrix(-2.0 * p->m.transpose() * p->m), Vector(Vector::Zero(p->m.cols()))};
    if (const auto* q = std::get_if<QuadraticForm>(&form_)) return std::pair{q->a, q->b};
    return std::nullopt;
  }

 private:
  LocalObjective(Form form, double lipschitz) : form_(std::move(form)), lipschitz_(lipschitz) {}

  Form form_;
  double lipschitz_ = 0.0;
  bool lipschitz_converged_ = true;
};

// ---------------------------------------------------------------------------
// Finite sums

/// Generation recipe, recorded so an instance can be rebuilt from its seed.
struct InstanceSpec {
  std::string family;  // "pca" or "quadratic"
  int n = 0;
  int rows = 0;  // pca only
  int dim = 0;
  std::uint64_t seed = 0;
  bool convex = true;  // quadratic only

  bool operator==(const InstanceSpec&) const = default;
};

inline constexpr const char* kPcaRowRule = "gaussian_then_divide_by_max(1,norm)";

/// f(x) = (1/n) sum_i f_i(x). The locals are stored without the 1/n factor.
class ObjectiveSplit {
 public:
  ObjectiveSplit() = default;
  explicit ObjectiveSplit(std::vector<LocalObjective> locals, std::optional<InstanceSpec> spec = {})
      : locals_(std::move(locals)), spec_(std::move(spec)) {
    if (locals_.empty()) throw std::invalid_argument("objective split needs at least one agent");
    for (const auto& f : locals_) detail::require_dim(f.dimension(), locals_.front().dimension(), "local objective");
  }

  std::size_t size() const { return locals_.size(); }
  Eigen::Index dimension() const { return locals_.front().dimension(); }
  const LocalObjective& local(std::size_t i) const { return locals_.at(i); }
  const std::vector<LocalObjective>& locals() const { return locals_; }
  const std::optional<InstanceSpec>& spec() const { return spec_; }

  /// Common Lipschitz constant max_i L_i.
  double lipschitz() const {
    double l = 0.0;
    for (const auto& f : locals_) l = std::max(l, f.lipschitz());
    return l;
  }

  double value(const Vector& x) const {
    double sum = 0.0;
    for (const auto& f : locals_) sum += f.value(x);
    return sum / static_cast<double>(locals_.size());
  }

  Vector gradient(const Vector& x) const {
    Vector sum = Vector::Zero(dimension());
    for (const auto& f : locals_) sum += f.gradient(x);
    return sum / static_cast<double>(locals_.size());
  }

  /// (mean Hessian, mean linear term) when every local is quadratic.
  std::optional<std::pair<Matrix, Vector>> aggregate_quadratic() const {
    Matrix a = Matrix::Zero(dimension(), dimension());
    Vector b = Vector::Zero(dimension());
    for (const auto& f : locals_) {
      auto q = f.as_quadratic();
      if (!q) return std::nullopt;
      a += q->first;
      b += q->second;
    }
    const double n = static_cast<double>(locals_.size());
    return std::pair{Matrix(a / n), Vector(b / n)};
  }

 private:
  std::vector<LocalObjective> locals_;
  std::optional<InstanceSpec> spec_;
};

/// Distributed PCA: agent i holds M_i (rows x dim) whose rows are i.i.d.
/// standard normal divided by max(1, row norm), so every row has norm <= 1.
inline ObjectiveSplit pca_instance(int n, int rows, int dim, std::uint64_t seed) {
  if (n < 1 || rows < 1 || dim < 1) throw std::invalid_argument("pca_instance: n, rows, dim must be >= 1");
  std::vector<LocalObjective> locals;
  locals.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(i));
    Matrix m = standard_normal(rows, dim, rng);
    for (Eigen::Index r = 0; r < m.rows(); ++r) m.row(r) /= std::max(1.0, m.row(r).norm());
    locals.push_back(LocalObjective::pca(std::move(m)));
  }
  return ObjectiveSplit(std::move(locals), InstanceSpec{"pca", n, rows, dim, seed, false});
}

/// Random symmetric quadratics f_i = 1/2 x^T A_i x + b_i^T x. A_i = Q diag(l) Q^T
/// with Q Haar-orthogonal; l ~ U[0, 1] (convex) or, when `convex` is false, the
/// first eigenvalue replaced by a draw from U[-0.5, -0.2].
inline ObjectiveSplit quadratic_instance(int n, int dim, std::uint64_t seed, bool convex) {
  if (n < 1 || dim < 1) throw std::invalid_argument("quadratic_instance: n, dim must be >= 1");
  std::vector<LocalObjective> locals;
  locals.reserve(static_cast<std::size_t>(n));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    Rng rng = make_rng(seed ^ 0xA5A5A5A5ULL, static_cast<std::uint64_t>(i));
    Eigen::HouseholderQR<Matrix> qr(standard_normal(dim, dim, rng));
    Matrix q = qr.householderQ();
    Vector eig(dim);
    for (int k = 0; k < dim; ++k) eig[k] = unit(rng);
    if (!convex) eig[0] = -0.2 - 0.3 * unit(rng);
    Matrix a = q * eig.asDiagonal() * q.transpose();
    a = 0.5 * (a + a.transpose()).eval();
    Vector b = standard_normal(dim, rng) / std::sqrt(static_cast<double>(dim));
    locals.push_back(LocalObjective::quadratic(std::move(a), std::move(b)));
  }
  return ObjectiveSplit(std::move(locals), InstanceSpec{"quadratic", n, 0, dim, seed, convex});
}

// ---------------------------------------------------------------------------
// Lipschitz estimation and gradient checks

struct LipschitzEstimate {
  double value = 0.0;
  bool exact = false;      // from the operator norm rather than sampling
  bool converged = true;   // false when power iteration hit its cap
};

inline constexpr int kLipschitzPairs = 10'000;
inline constexpr double kLipschitzSafety = 1.1;

/// Operator norm for quadratic forms, otherwise 1.1 x the largest observed
/// difference quotient of the gradient over random feasible pairs.
inline LipschitzEstimate lipschitz_estimate(const LocalObjective& f, const FeasibleSet& set,
                                            std::uint64_t seed = 0) {
  if (!std::holds_alternative<BlackBoxForm>(f.form()))
    return {f.lipschitz(), true, f.lipschitz_converged()};
  Rng rng = make_rng(seed, 0x11b);
  double best = 0.0;
  for (int k = 0; k < kLipschitzPairs; ++k) {
    const Vector x = sample_point(set, rng);
    const Vector y = sample_point(set, rng);
    const double dist = (x - y).norm();
    if (dist == 0.0) continue;
    best = std::max(best, (f.gradient(x) - f.gradient(y)).norm() / dist);
  }
  return {kLipschitzSafety * best, false, true};
}

inline LipschitzEstimate lipschitz_estimate(const ObjectiveSplit& split, const FeasibleSet& set,
                                            std::uint64_t seed = 0) {
  LipschitzEstimate out{0.0, true, true};
  for (std::size_t i = 0; i < split.size(); ++i) {
    auto e = lipschitz_estimate(split.local(i), set, stream_seed(seed, i));
    out.value = std::max(out.value, e.value);
    out.exact = out.exact && e.exact;
    out.converged = out.converged && e.converged;
  }
  return out;
}

/// Central-difference gradient with step 1e-6 (1 + ||x||).
template <typename F>
Vector finite_difference_gradient(const F& f, const Vector& x) {
  const double h = 1e-6 * (1.0 + x.norm());
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    probe[k] = x[k] + h;
    const double up = f.value(probe);
    probe[k] = x[k] - h;
    const double down = f.value(probe);
    probe[k] = x[k];
    g[k] = (up - down) / (2.0 * h);
  }
  return g;
}

/// ||g_fd - g|| / max(1, ||g||).
template <typename F>
double gradient_check(const F& f, const Vector& x) {
  const Vector g = f.gradient(x);
  return (finite_difference_gradient(f, x) - g).norm() / std::max(1.0, g.norm());
}

// ---------------------------------------------------------------------------
// Reference values

/// Sound lower bound on min f over the set: each quadratic local satisfies
/// f_i(x) >= -||A_i|| R^2 / 2 - ||b_i|| R with R = max ||x|| over the set
/// (for PCA this is -sigma_max(M_i)^2 R^2).
inline double objective_lower_bound(const ObjectiveSplit& split, const FeasibleSet& set) {
  const double r = max_norm(set);
  if (!std::isfinite(r)) throw std::invalid_argument("objective_lower_bound needs a bounded set");
  double sum = 0.0;
  for (const auto& f : split.locals()) {
    auto q = f.as_quadratic();
    if (!q) throw std::invalid_argument("objective_lower_bound needs quadratic locals");
    sum += -0.5 * f.lipschitz() * r * r - q->second.norm() * r;
  }
  return sum / static_cast<double>(split.size());
}

struct OracleResult {
  Vector x;
  double value = 0.0;
  long iterations = 0;
  bool converged = false;
};

/// Projected gradient descent with step 1/L on the aggregated objective,
/// stopping once an iterate moves less than `tol`. Used as the reference
/// minimizer for convex instances.
inline OracleResult projected_gradient_oracle(const ObjectiveSplit& split, const FeasibleSet& set,
                                              const Vector& x0, long max_iter = 1'000'000,
                                              double tol = 1e-10) {
  const auto quad = split.aggregate_quadratic();
  const double step = 1.0 / split.lipschitz();
  auto grad = [&](const Vector& x) -> Vector {
    return quad ? Vector(quad->first * x + quad->second) : split.gradient(x);
  };
  OracleResult out;
  out.x = project(set, x0);
  for (long k = 1; k <= max_iter; ++k) {
    Vector next = project(set, out.x - step * grad(out.x));
    const double moved = (next - out.x).norm();
    out.x = std::move(next);
    out.iterations = k;
    if (moved <= tol) {
      out.converged = true;
      break;
    }
  }
  out.value = split.value(out.x);
  return out;
}

/// Initial point of the PCA experiment: a standard normal vector projected
/// onto the feasible set.
inline Vector random_initial_point(const FeasibleSet& set, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x1217);
  return project(set, standard_normal(set.dimension(), rng));
}

}  // namespace dualavg
