#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dualavg/cda.hpp"
#include "dualavg/monitor.hpp"
#include "dualavg/network.hpp"
#include "dualavg/objectives.hpp"
#include "dualavg/proximal.hpp"
#include "dualavg/table.hpp"

namespace dualavg {

/// One agent's view of a DDA snapshot.
struct AgentState {
  Vector x;       // primal iterate, mirror_map(-z)
  Vector z;       // local estimate of the dual sum
  Vector s;       // gradient tracker
  Vector g_prev;  // grad f_i(x), reused by the next tracker update
};

struct RoundMetrics {
  double cost = 0.0;                   // f(y)
  double grad_map_sq = 0.0;            // ||G_a(y, z_bar)||^2
  double consensus_err_sq = 0.0;       // sum_i ||x_i - x_bar||^2
  double deviation_sq = 0.0;           // sum_i ||x_i - y||^2
  double residual = 0.0;               // n grad_map_sq + deviation_sq
  double change_plus_consensus = 0.0;  // ||x^t - x^{t-1}|| + ||x^t - 1 (x) x_bar^t||, stacked norms
};

/// Network-wide DDA snapshot. Agent i lives in column i of x, z, s and grad.
struct DdaState {
  long t = 0;
  Matrix x;
  Matrix z;
  Matrix s;
  Matrix grad;  // grad f_i(x_i^t)
  Vector z_bar;
  Vector y;  // mirror_map(-z_bar)
  RoundMetrics metrics;
  bool projected_start = false;  // the supplied center was infeasible and got projected

  int agents() const { return static_cast<int>(x.cols()); }

  AgentState agent(int i) const { return {x.col(i), z.col(i), s.col(i), grad.col(i)}; }

  Vector s_bar() const { return s.rowwise().mean(); }
  Vector g_bar() const { return grad.rowwise().mean(); }
};

namespace detail {

inline Matrix local_gradients(const ObjectiveSplit& obj, const Matrix& x) {
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.cols(); ++i) g.col(i) = obj.local(static_cast<std::size_t>(i)).gradient(x.col(i));
  return g;
}

inline RoundMetrics dda_metrics(const DdaState& s, const Matrix* previous_x, const ObjectiveSplit& obj,
                                const ProximalSetup& prox, const FeasibleSet& set) {
  RoundMetrics m;
  m.cost = obj.value(s.y);
  m.grad_map_sq = gradient_mapping(s.y, s.z_bar, obj, prox, set).squaredNorm();
  const Vector x_bar = s.x.rowwise().mean();
  m.consensus_err_sq = (s.x.colwise() - x_bar).squaredNorm();
  m.deviation_sq = (s.x.colwise() - s.y).squaredNorm();
  m.residual = static_cast<double>(s.x.cols()) * m.grad_map_sq + m.deviation_sq;
  const double change = previous_x ? (s.x - *previous_x).norm() : 0.0;
  m.change_plus_consensus = change + std::sqrt(m.consensus_err_sq);
  return m;
}

}  // namespace detail

/// Sum_i ||grad f_i(x0) - g_bar(x0)||^2, the initial gradient dispersion.
inline double pi_squared(const ObjectiveSplit& obj, const Vector& x0) {
  Matrix g(x0.size(), static_cast<Eigen::Index>(obj.size()));
  for (std::size_t i = 0; i < obj.size(); ++i) g.col(static_cast<Eigen::Index>(i)) = obj.local(i).gradient(x0);
  return (g.colwise() - g.rowwise().mean()).squaredNorm();
}

/// x_i = x0 (the prox center), z_i = 0, s_i = grad f_i(x0), y = x0.
inline DdaState dda_init(const ObjectiveSplit& obj, const ProximalSetup& prox, const FeasibleSet& set) {
  if (!set.is_compact()) throw std::invalid_argument("distributed dual averaging needs a compact feasible set");
  detail::require_dim(obj.dimension(), set.dimension(), "dda objective");
  detail::require_dim(prox.dimension(), set.dimension(), "dda proximal center");
  const auto n = static_cast<Eigen::Index>(obj.size());
  const auto m = set.dimension();
  DdaState s;
  Vector x0 = prox.center();
  if (!contains(set, x0)) {
    x0 = project(set, x0);
    s.projected_start = true;
  }
  s.x = x0.replicate(1, n);
  s.z = Matrix::Zero(m, n);
  s.grad = detail::local_gradients(obj, s.x);
  s.s = s.grad;
  s.z_bar = Vector::Zero(m);
  s.y = mirror_map(prox, set, -s.z_bar);
  s.metrics = detail::dda_metrics(s, nullptr, obj, prox, set);
  return s;
}

/// One synchronous round with mixing matrix P:
///   z_i' = sum_j p_ij (z_j + s_j)
///   x_i' = mirror_map(-z_i')
///   s_i' = sum_j p_ij s_j + grad f_i(x_i') - grad f_i(x_i)
inline DdaState dda_round(const DdaState& state, const Matrix& p, const ObjectiveSplit& obj,
                          const ProximalSetup& prox, const FeasibleSet& set) {
  if (p.rows() != state.x.cols() || p.cols() != state.x.cols())
    throw DimensionError("mixing matrix size does not match the number of agents");
  if (!verify_doubly_stochastic(p)) throw std::invalid_argument("mixing matrix is not doubly stochastic");
  DdaState next;
  next.t = state.t + 1;
  next.projected_start = state.projected_start;
  const Matrix pt = p.transpose();
  next.z = (state.z + state.s) * pt;
  next.x.resize(state.x.rows(), state.x.cols());
  for (Eigen::Index i = 0; i < next.x.cols(); ++i) next.x.col(i) = mirror_map(prox, set, -next.z.col(i));
  next.grad = detail::local_gradients(obj, next.x);
  next.s = state.s * pt + (next.grad - state.grad);
  next.z_bar = next.z.rowwise().mean();
  next.y = mirror_map(prox, set, -next.z_bar);
  next.metrics = detail::dda_metrics(next, &state.x, obj, prox, set);
  return next;
}

inline DdaState dda_round(const DdaState& state, const MixingMatrix& p, const ObjectiveSplit& obj,
                          const ProximalSetup& prox, const FeasibleSet& set) {
  return dda_round(state, p.entries, obj, prox, set);
}

/// Rate constant of the distributed O(1/t) bound, with f* replaced by a lower
/// bound (which can only enlarge C):
///   C = (2 pi^2 / (3L(1 - rho)) + n (f(y0) - f_lower))
///       / min{3L(1 - rho)/8, a - a^2 L/2 - 4 a^2 L / (3(1 - rho))}
/// with rho = rho(M) at (a, L, beta).
inline double theorem2_C(double lipschitz, double beta, double a, double pi_sq, double f_y0, double f_lower,
                         int n) {
  const double rho = rho_M(a, lipschitz, beta);
  if (!(rho < 1.0)) throw InfeasibleError("theorem2_C: rho(M) >= 1 at this step size");
  const double gap = 1.0 - rho;
  const double denom = std::min(3.0 * lipschitz * gap / 8.0,
                                a - a * a * lipschitz / 2.0 - 4.0 * a * a * lipschitz / (3.0 * gap));
  if (!(denom > 0.0)) throw InfeasibleError("theorem2_C: step size violates the rate condition");
  return (2.0 * pi_sq / (3.0 * lipschitz * gap) + n * (f_y0 - f_lower)) / denom;
}

struct DdaOptions {
  long rounds = 1000;
  std::uint64_t network_seed = 0;
  std::optional<double> beta;     // estimated from the model when absent
  std::optional<double> f_lower;  // enables the C/t column
  bool monitors = true;
};

struct DdaRecord {
  long t = 0;
  RoundMetrics m;
  double min_residual = 0.0;
  double c_over_t = 0.0;  // C / (t + 1): the bound on min_residual at this row
};

inline constexpr double kStationaryResidual = 1e-16;
inline constexpr double kConsensusSpreadTol = 1e-7;

struct DdaTrace {
  std::vector<DdaRecord> records;
  double beta = 0.0;
  double rho_m = std::numeric_limits<double>::quiet_NaN();
  double pi_sq = 0.0;
  double f_y0 = 0.0;
  double C = std::numeric_limits<double>::quiet_NaN();
  bool stepsize_certified = false;  // a meets the distributed rate conditions for (L, beta)
  std::vector<Monitor> monitors;
  bool aborted = false;
  std::string abort_reason;
  std::optional<long> stationary_at;  // first round closing a 10-round window of residual <= 1e-16
  double stationary_spread = 0.0;     // max_ij ||x_i - x_j|| at that round
  DdaState final_state;

  static std::vector<std::string> columns() {
    return {"t", "cost", "grad_map_sq", "consensus_err_sq", "deviation_sq", "residual", "min_residual",
            "C_over_t", "change_plus_consensus"};
  }

  Table table() const {
    Table t{columns(), {}};
    t.rows.reserve(records.size());
    for (const auto& r : records)
      t.rows.push_back({static_cast<double>(r.t), r.m.cost, r.m.grad_map_sq, r.m.consensus_err_sq, r.m.deviation_sq,
                        r.m.residual, r.min_residual, r.c_over_t, r.m.change_plus_consensus});
    return t;
  }
};

namespace detail {

inline bool finite_state(const DdaState& s) {
  return s.x.allFinite() && s.z.allFinite() && s.s.allFinite() && s.grad.allFinite() && s.y.allFinite() &&
         std::isfinite(s.metrics.cost) && std::isfinite(s.metrics.residual);
}

inline double max_pairwise_distance(const Matrix& x) {
  double best = 0.0;
  for (Eigen::Index i = 0; i < x.cols(); ++i)
    for (Eigen::Index j = i + 1; j < x.cols(); ++j) best = std::max(best, (x.col(i) - x.col(j)).norm());
  return best;
}

}  // namespace detail

/// Runs DDA for `rounds` rounds over fresh draws of `model` and records the
/// metrics of every state t = 0..rounds. With monitors on, checks every round:
///  - tracking:    s_bar^t = g_bar^t                          (1e-10)
///  - dual_mean:   z_bar^t = z_bar^{t-1} + g_bar^{t-1}        (1e-10)
///  - deviation:   ||x_i - y|| <= a ||z_i - z_bar||            (1e-12)
///  - cost_step:   n (f(y^t) - f(y^{t-1})) <= ((L+eps)/2 - 1/a) n ||y^t - y^{t-1}||^2
///                   + L^2/(2 eps) sum_i ||y^{t-1} - x_i^{t-1}||^2,
///                 eps = 4L / (3 (1 - rho(M)))                 (1e-8)
///  - feasible:    every x_i and y in the set
///  - consensual_stationarity: once the residual stays <= 1e-16 for 10 rounds,
///                 all pairwise ||x_i - x_j|| <= 1e-7
/// A non-finite state aborts the run; the records up to the last good round are kept.
inline DdaTrace run_dda(const ObjectiveSplit& obj, const ProximalSetup& prox, const FeasibleSet& set,
                        const MixingModel& model, const DdaOptions& opt) {
  if (model.nodes() != static_cast<int>(obj.size()))
    throw DimensionError("mixing model size does not match the number of agents");
  const double a = prox.a();
  const double lip = obj.lipschitz();
  const int n = static_cast<int>(obj.size());

  DdaTrace trace;
  if (opt.beta) {
    trace.beta = *opt.beta;
  } else {
    Rng beta_rng = make_rng(opt.network_seed, 0xBE7A);
    trace.beta = beta_estimate(model, kDefaultBetaSamples, beta_rng).beta;
  }
  trace.stepsize_certified = dda_stepsize_admissible(a, lip, trace.beta);
  if (trace.beta >= 0.0 && trace.beta < 1.0) trace.rho_m = rho_M(a, lip, trace.beta);

  DdaState state = dda_init(obj, prox, set);
  trace.pi_sq = pi_squared(obj, state.x.col(0));
  trace.f_y0 = state.metrics.cost;
  if (opt.f_lower) {
    try {
      trace.C = theorem2_C(lip, trace.beta, a, trace.pi_sq, trace.f_y0, *opt.f_lower, n);
    } catch (const InfeasibleError&) {
      trace.C = std::numeric_limits<double>::quiet_NaN();
    }
  }
  const bool cost_step_on = opt.monitors && std::isfinite(trace.rho_m) && trace.rho_m < 1.0;
  const double eps = cost_step_on ? 4.0 * lip / (3.0 * (1.0 - trace.rho_m)) : 0.0;

  Monitor tracking{"tracking"}, dual_mean{"dual_mean"}, deviation{"deviation"}, cost_step{"cost_step"},
      feasible{"feasible"}, stationarity{"consensual_stationarity"};

  auto check_state = [&](const DdaState& s) {
    tracking.check_le(s.t, (s.s_bar() - s.g_bar()).norm(), 0.0, 1e-10);
    bool inside = contains(set, s.y);
    for (int i = 0; i < n; ++i) {
      inside = inside && contains(set, s.x.col(i));
      deviation.check_le(s.t, (s.x.col(i) - s.y).norm(), a * (s.z.col(i) - s.z_bar).norm(), 1e-12);
    }
    feasible.check_le(s.t, inside ? 0.0 : 1.0, 0.0, 0.0);
  };

  double running_min = std::numeric_limits<double>::infinity();
  long small_streak = 0;
  auto record = [&](const DdaState& s) {
    running_min = std::min(running_min, s.metrics.residual);
    trace.records.push_back({s.t, s.metrics, running_min, trace.C / static_cast<double>(s.t + 1)});
    small_streak = s.metrics.residual <= kStationaryResidual ? small_streak + 1 : 0;
    if (small_streak >= kStationaryWindow && !trace.stationary_at) {
      trace.stationary_at = s.t;
      trace.stationary_spread = detail::max_pairwise_distance(s.x);
      if (opt.monitors) stationarity.check_le(s.t, trace.stationary_spread, kConsensusSpreadTol, 0.0);
    }
  };

  if (opt.monitors) check_state(state);
  record(state);

  Rng rng = make_rng(opt.network_seed, 0);
  for (long t = 1; t <= opt.rounds; ++t) {
    const MixingMatrix p = sample_matrix(model, rng);
    DdaState next = dda_round(state, p, obj, prox, set);
    if (!detail::finite_state(next)) {
      trace.aborted = true;
      trace.abort_reason = "non-finite values at round " + std::to_string(t);
      break;
    }
    if (opt.monitors) {
      check_state(next);
      dual_mean.check_le(t, (next.z_bar - state.z_bar - state.g_bar()).norm(), 0.0, 1e-10);
      if (cost_step_on) {
        const double lhs = n * (next.metrics.cost - state.metrics.cost);
        const double dy_sq = (next.y - state.y).squaredNorm();
        const double rhs = ((lip + eps) / 2.0 - 1.0 / a) * n * dy_sq +
                           lip * lip / (2.0 * eps) * (state.x.colwise() - state.y).squaredNorm();
        cost_step.check_le(t, lhs, rhs, 1e-8);
      }
    }
    state = std::move(next);
    record(state);
  }
  if (opt.monitors) {
    trace.monitors = {tracking, dual_mean, deviation, feasible, stationarity};
    if (cost_step_on) trace.monitors.push_back(cost_step);
  }
  trace.final_state = std::move(state);
  return trace;
}

// ---------------------------------------------------------------------------
// Baseline: distributed projected gradient

struct DpgaOptions {
  long rounds = 1000;
  double eta = 1e-4;
  std::uint64_t network_seed = 0;
  std::optional<Matrix> initial;  // per-agent starting points (columns); defaults to x0 everywhere
};

struct DpgaRecord {
  long t = 0;
  double cost = 0.0;  // f(x_bar)
  double consensus_err_sq = 0.0;
  double change_plus_consensus = 0.0;
};

struct DpgaTrace {
  std::vector<DpgaRecord> records;
  bool diverged = false;  // cost rose more than 10x max(1, |f(x_bar^0)|) above its start
  Matrix final_x;

  Table table() const {
    Table t{{"t", "cost", "consensus_err_sq", "change_plus_consensus"}, {}};
    for (const auto& r : records)
      t.rows.push_back({static_cast<double>(r.t), r.cost, r.consensus_err_sq, r.change_plus_consensus});
    return t;
  }
};

/// x_i' = project(sum_j p_ij x_j - eta grad f_i(x_i)). A generic reconstruction
/// of a distributed projected-gradient method, used only as a comparison.
inline DpgaTrace dpga_baseline(const ObjectiveSplit& obj, const FeasibleSet& set, const Vector& x0,
                               const MixingModel& model, const DpgaOptions& opt) {
  if (!(opt.eta >= 0.0)) throw std::invalid_argument("dpga step size must be nonnegative");
  const auto n = static_cast<Eigen::Index>(obj.size());
  if (model.nodes() != n) throw DimensionError("mixing model size does not match the number of agents");
  Matrix x = opt.initial ? *opt.initial : Matrix(project(set, x0).replicate(1, n));
  detail::require_dim(x.rows(), set.dimension(), "dpga initial points");
  detail::require_dim(x.cols(), n, "dpga initial points");

  DpgaTrace trace;
  auto record = [&](long t, const Matrix& cur, const Matrix* prev) {
    const Vector x_bar = cur.rowwise().mean();
    DpgaRecord r;
    r.t = t;
    r.cost = obj.value(x_bar);
    r.consensus_err_sq = (cur.colwise() - x_bar).squaredNorm();
    r.change_plus_consensus = (prev ? (cur - *prev).norm() : 0.0) + std::sqrt(r.consensus_err_sq);
    trace.records.push_back(r);
  };
  record(0, x, nullptr);
  const double f0 = trace.records.front().cost;
  const double limit = f0 + 10.0 * std::max(1.0, std::abs(f0));

  Rng rng = make_rng(opt.network_seed, 0);
  for (long t = 1; t <= opt.rounds; ++t) {
    const MixingMatrix p = sample_matrix(model, rng);
    const Matrix mixed = x * p.entries.transpose();
    Matrix next(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < n; ++i)
      next.col(i) = project(set, mixed.col(i) - opt.eta * obj.local(static_cast<std::size_t>(i)).gradient(x.col(i)));
    record(t, next, &x);
    x = std::move(next);
    if (!(trace.records.back().cost <= limit)) trace.diverged = true;
  }
  trace.final_x = std::move(x);
  return trace;
}

}  // namespace dualavg
