#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "dualavg/errors.hpp"
#include "dualavg/feasible_set.hpp"
#include "dualavg/rng.hpp"
#include "dualavg/table.hpp"

namespace dualavg {

// ---------------------------------------------------------------------------
// Graphs and mixing models

/// Undirected simple graph on nodes 0..n-1 listing the links that may activate.
class Supergraph {
 public:
  Supergraph(int n, std::vector<std::pair<int, int>> edges) : n_(n) {
    if (n < 1) throw std::invalid_argument("supergraph needs at least one node");
    std::set<std::pair<int, int>> seen;
    for (auto [u, v] : edges) {
      if (u < 0 || v < 0 || u >= n || v >= n) throw std::invalid_argument("edge endpoint out of range");
      if (u == v) throw std::invalid_argument("self-loops are not allowed");
      if (!seen.insert(std::minmax(u, v)).second) throw std::invalid_argument("duplicate edge");
      edges_.emplace_back(std::min(u, v), std::max(u, v));
    }
  }

  static Supergraph complete(int n) {
    std::vector<std::pair<int, int>> e;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) e.emplace_back(i, j);
    return Supergraph(n, std::move(e));
  }

  int nodes() const { return n_; }
  const std::vector<std::pair<int, int>>& edges() const { return edges_; }

  int max_degree() const {
    std::vector<int> deg(static_cast<std::size_t>(n_), 0);
    for (auto [u, v] : edges_) {
      ++deg[static_cast<std::size_t>(u)];
      ++deg[static_cast<std::size_t>(v)];
    }
    return deg.empty() ? 0 : *std::max_element(deg.begin(), deg.end());
  }

 private:
  int n_;
  std::vector<std::pair<int, int>> edges_;
};

/// Each edge active independently with probability p; P = I - Laplacian / tau.
struct BernoulliEdges {
  Supergraph graph;
  double p = 0.1;
  double tau = 0.0;  // Laplacian scale; defaults to n
};

/// One uniformly chosen edge averages its endpoints.
struct Gossip {
  Supergraph graph;
};

/// P = 11^T / n every round.
struct PerfectAveraging {
  int n = 1;
};

/// The same matrix every round.
struct StaticMatrix {
  Matrix p;
};

class MixingModel {
 public:
  using Variant = std::variant<BernoulliEdges, Gossip, PerfectAveraging, StaticMatrix>;

  static MixingModel bernoulli(Supergraph g, double p, std::optional<double> tau = {}) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("activation probability must lie in [0, 1]");
    const double t = tau.value_or(static_cast<double>(g.nodes()));
    if (!(t > 0.0)) throw std::invalid_argument("Laplacian scale tau must be positive");
    if (static_cast<double>(g.max_degree()) > t)
      throw std::invalid_argument("tau below the supergraph's max degree gives a negative diagonal");
    return MixingModel(BernoulliEdges{std::move(g), p, t});
  }

  static MixingModel gossip(Supergraph g) {
    if (g.edges().empty()) throw std::invalid_argument("gossip needs at least one edge");
    return MixingModel(Gossip{std::move(g)});
  }

  static MixingModel perfect(int n) {
    if (n < 1) throw std::invalid_argument("perfect averaging needs n >= 1");
    return MixingModel(PerfectAveraging{n});
  }

  static MixingModel fixed(Matrix p) {
    if (p.rows() != p.cols() || p.rows() == 0) throw DimensionError("static mixing matrix must be square");
    return MixingModel(StaticMatrix{std::move(p)});
  }

  const Variant& variant() const { return model_; }

  int nodes() const {
    return std::visit(
        [](const auto& m) -> int {
          using M = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<M, BernoulliEdges> || std::is_same_v<M, Gossip>) return m.graph.nodes();
          else if constexpr (std::is_same_v<M, PerfectAveraging>) return m.n;
          else return static_cast<int>(m.p.rows());
        },
        model_);
  }

  /// True when every draw yields the same matrix.
  bool deterministic() const {
    if (const auto* b = std::get_if<BernoulliEdges>(&model_)) return b->p == 0.0 || b->p == 1.0 || b->graph.edges().empty();
    if (const auto* g = std::get_if<Gossip>(&model_)) return g->graph.edges().size() == 1;
    return true;
  }

  std::string name() const {
    return std::visit(
        [](const auto& m) -> std::string {
          using M = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<M, BernoulliEdges>) return "bernoulli";
          else if constexpr (std::is_same_v<M, Gossip>) return "gossip";
          else if constexpr (std::is_same_v<M, PerfectAveraging>) return "perfect";
          else return "static";
        },
        model_);
  }

 private:
  explicit MixingModel(Variant v) : model_(std::move(v)) {}
  Variant model_;
};

/// One realization of the mixing matrix.
struct MixingMatrix {
  Matrix entries;
  std::vector<std::vector<int>> active_neighbors;  // per node, excluding itself

  int nodes() const { return static_cast<int>(entries.rows()); }
};

inline bool verify_doubly_stochastic(const Matrix& p, double tol = 1e-12) {
  if (p.rows() != p.cols() || p.rows() == 0) return false;
  if (!p.allFinite() || (p.array() < -tol).any()) return false;
  const Vector ones = Vector::Ones(p.rows());
  return ((p * ones).array() - 1.0).abs().maxCoeff() <= tol &&
         ((p.transpose() * ones).array() - 1.0).abs().maxCoeff() <= tol;
}

namespace detail {

inline MixingMatrix from_active_edges(int n, const std::vector<std::pair<int, int>>& active, double tau) {
  MixingMatrix out{Matrix::Zero(n, n), std::vector<std::vector<int>>(static_cast<std::size_t>(n))};
  std::vector<int> degree(static_cast<std::size_t>(n), 0);
  for (auto [u, v] : active) {
    out.entries(u, v) = 1.0 / tau;
    out.entries(v, u) = 1.0 / tau;
    ++degree[static_cast<std::size_t>(u)];
    ++degree[static_cast<std::size_t>(v)];
    out.active_neighbors[static_cast<std::size_t>(u)].push_back(v);
    out.active_neighbors[static_cast<std::size_t>(v)].push_back(u);
  }
  for (int i = 0; i < n; ++i) {
    // (tau - deg) / tau rather than 1 - deg / tau: exact 1/n on the complete graph with tau = n.
    const double diag = (tau - degree[static_cast<std::size_t>(i)]) / tau;
    if (diag < 0.0) throw NumericalError("Laplacian weights produce a negative diagonal entry");
    out.entries(i, i) = diag;
  }
  for (auto& nb : out.active_neighbors) std::sort(nb.begin(), nb.end());
  return out;
}

inline std::vector<std::vector<int>> neighbors_of(const Matrix& p) {
  std::vector<std::vector<int>> nb(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = 0; j < p.cols(); ++j)
      if (i != j && (p(i, j) != 0.0 || p(j, i) != 0.0)) nb[static_cast<std::size_t>(i)].push_back(static_cast<int>(j));
  return nb;
}

}  // namespace detail

/// Draws P^(t). Bernoulli: each edge independently active with probability p,
/// P = I - Laplacian(active)/tau. Gossip: one uniform edge {i, j},
/// P = I - (e_i - e_j)(e_i - e_j)^T / 2.
inline MixingMatrix sample_matrix(const MixingModel& model, Rng& rng) {
  return std::visit(
      [&](const auto& m) -> MixingMatrix {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, BernoulliEdges>) {
          std::bernoulli_distribution coin(m.p);
          std::vector<std::pair<int, int>> active;
          for (const auto& e : m.graph.edges())
            if (coin(rng)) active.push_back(e);
          return detail::from_active_edges(m.graph.nodes(), active, m.tau);
        } else if constexpr (std::is_same_v<M, Gossip>) {
          std::uniform_int_distribution<std::size_t> pick(0, m.graph.edges().size() - 1);
          const auto [u, v] = m.graph.edges()[pick(rng)];
          return detail::from_active_edges(m.graph.nodes(), {{u, v}}, 2.0);
        } else if constexpr (std::is_same_v<M, PerfectAveraging>) {
          MixingMatrix out{Matrix::Constant(m.n, m.n, 1.0 / m.n), {}};
          out.active_neighbors = detail::neighbors_of(out.entries);
          return out;
        } else {
          return MixingMatrix{m.p, detail::neighbors_of(m.p)};
        }
      },
      model.variant());
}

inline void write_matrix_csv(std::ostream& os, const Matrix& p) {
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.cols(); ++j) os << (j ? "," : "") << format_double(p(i, j));
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Spectral diagnostics

struct BetaEstimate {
  double beta = 0.0;
  double spread = 0.0;  // |beta(first half) - beta(second half)|
  double first_half = 0.0;
  double second_half = 0.0;
  long samples = 0;
  bool deterministic = false;
  bool flagged = false;  // beta >= 1: the network does not contract (or too few samples)
  std::string message;
};

inline constexpr long kDefaultBetaSamples = 20'000;

namespace detail {

/// sqrt(lambda_max(S)) for a symmetric PSD accumulator S.
inline double sqrt_top_eigenvalue(const Matrix& s) {
  if (s.rows() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(s, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

}  // namespace detail

/// beta = sqrt(rho(E[P^T P] - 11^T/n)), estimated by averaging
/// (P - J)^T (P - J) over independent draws (J = 11^T/n; equal to P^T P - J
/// for doubly stochastic P, and PSD by construction). Deterministic models
/// use a single exact draw.
inline BetaEstimate beta_estimate(const MixingModel& model, long samples, Rng& rng) {
  if (samples < 1) throw std::invalid_argument("beta_estimate needs samples >= 1");
  const int n = model.nodes();
  const Matrix j = Matrix::Constant(n, n, 1.0 / n);
  BetaEstimate out;
  auto gram = [&](const MixingMatrix& p) -> Matrix {
    const Matrix d = p.entries - j;
    return d.transpose() * d;
  };
  if (model.deterministic()) {
    out.deterministic = true;
    out.samples = 1;
    out.beta = detail::sqrt_top_eigenvalue(gram(sample_matrix(model, rng)));
    out.first_half = out.second_half = out.beta;
  } else {
    const long half = samples / 2;
    Matrix first = Matrix::Zero(n, n), second = Matrix::Zero(n, n);
    for (long k = 0; k < samples; ++k) (k < half ? first : second) += gram(sample_matrix(model, rng));
    out.samples = samples;
    out.beta = detail::sqrt_top_eigenvalue((first + second) / static_cast<double>(samples));
    if (half > 0) {
      out.first_half = detail::sqrt_top_eigenvalue(first / static_cast<double>(half));
      out.second_half = detail::sqrt_top_eigenvalue(second / static_cast<double>(samples - half));
      out.spread = std::abs(out.first_half - out.second_half);
    } else {
      out.first_half = out.second_half = out.beta;
    }
  }
  out.flagged = out.beta >= 1.0 - 1e-12;
  if (out.flagged) out.message = "beta >= 1: assumption violated or under-sampled";
  return out;
}

/// Spectral radius of M = [[beta, beta], [aL(beta + 1), beta(aL + 1)]].
/// M is entrywise nonnegative, so rho is its larger (real) eigenvalue
/// (tr + sqrt(tr^2 - 4 det)) / 2; the discriminant is expanded as
/// aL beta (beta aL + 4 beta + 4) to stay nonnegative in floating point.
inline double rho_M(double a, double lipschitz, double beta) {
  const double al = a * lipschitz;
  const double trace = beta * (al + 2.0);
  const double disc = al * beta * (beta * al + 4.0 * beta + 4.0);
  return 0.5 * (trace + std::sqrt(disc));
}

struct DdaStepsizeCertificate {
  bool feasible = false;
  double a_max = 0.0;     // shrunk by (1 - 1e-6), the value to use
  double a_limit = 0.0;   // bisection limit before shrinking
  double lipschitz = 0.0;
  double beta = 0.0;
  double rho_at_a_max = 0.0;
  double beta_step_bound = std::numeric_limits<double>::infinity();  // (1 - beta)^2 / (2 beta L)
  std::string message;
};

inline constexpr int kCertifyBisections = 60;
inline constexpr double kCertifyShrink = 1e-6;
inline constexpr double kCertifyFloor = 1e-12;

/// Whether `a` satisfies the distributed rate conditions for (L, beta):
/// rho(M) < 1, 1/a > L max{1/2 + 4/(3(1 - rho(M))), 2 beta/(1 - beta)^2} and,
/// for beta > 0, a < (1 - beta)^2 / (2 beta L).
inline bool dda_stepsize_admissible(double a, double lipschitz, double beta) {
  if (!(a > 0.0) || !(beta >= 0.0 && beta < 1.0)) return false;
  const double rho = rho_M(a, lipschitz, beta);
  if (!(rho < 1.0)) return false;
  const double need = lipschitz * std::max(0.5 + 4.0 / (3.0 * (1.0 - rho)),
                                           2.0 * beta / ((1.0 - beta) * (1.0 - beta)));
  if (!(1.0 / a > need)) return false;
  if (beta > 0.0 && !(a < (1.0 - beta) * (1.0 - beta) / (2.0 * beta * lipschitz))) return false;
  return true;
}

/// Largest admissible a by bisection on (0, 2/L]. The admissible set is an
/// interval because rho(M) grows with a.
inline DdaStepsizeCertificate certify_stepsize_dda(double lipschitz, double beta) {
  if (!(lipschitz > 0.0)) throw std::invalid_argument("certify_stepsize_dda: L must be positive");
  DdaStepsizeCertificate c;
  c.lipschitz = lipschitz;
  c.beta = beta;
  if (beta > 0.0 && beta < 1.0) c.beta_step_bound = (1.0 - beta) * (1.0 - beta) / (2.0 * beta * lipschitz);
  if (!(beta >= 0.0 && beta < 1.0)) {
    c.beta_step_bound = 0.0;
    c.message = "infeasible: beta must lie in [0, 1) (got " + format_double(beta) + ")";
    return c;
  }
  double lo = 0.0, hi = 2.0 / lipschitz;
  if (dda_stepsize_admissible(hi, lipschitz, beta)) {
    lo = hi;
  } else {
    for (int k = 0; k < kCertifyBisections; ++k) {
      const double mid = 0.5 * (lo + hi);
      (dda_stepsize_admissible(mid, lipschitz, beta) ? lo : hi) = mid;
    }
  }
  c.a_limit = lo;
  if (lo < kCertifyFloor) {
    c.message = "infeasible: no admissible step size above " + format_double(kCertifyFloor) +
                " (beta too close to 1)";
    return c;
  }
  c.feasible = true;
  c.a_max = lo * (1.0 - kCertifyShrink);
  c.rho_at_a_max = rho_M(c.a_max, lipschitz, beta);
  std::ostringstream msg;
  msg << "a_max=" << c.a_max << " rho(M)=" << c.rho_at_a_max;
  c.message = msg.str();
  return c;
}

}  // namespace dualavg
