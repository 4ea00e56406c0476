#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dualavg/monitor.hpp"
#include "dualavg/objectives.hpp"
#include "dualavg/proximal.hpp"
#include "dualavg/table.hpp"

namespace dualavg {

/// Centralized dual averaging iterate: x = mirror_map(-z), z = sum of past
/// global gradients.
struct CdaState {
  long t = 0;
  Vector x;
  Vector z;
  std::vector<double> f_history;
};

inline constexpr double kPairTol = 1e-9;
inline constexpr double kStationaryGradMap = 1e-10;
inline constexpr int kStationaryWindow = 10;

inline CdaState cda_init(const ObjectiveSplit& obj, const ProximalSetup& prox, const FeasibleSet& set) {
  detail::require_dim(obj.dimension(), set.dimension(), "cda objective");
  CdaState s;
  s.z = Vector::Zero(set.dimension());
  s.x = mirror_map(prox, set, -s.z);
  s.f_history.push_back(obj.value(s.x));
  return s;
}

namespace detail {

inline void cda_advance(CdaState& state, const Vector& g, Vector next_x, const ObjectiveSplit& obj) {
  state.z += g;
  state.x = std::move(next_x);
  ++state.t;
  state.f_history.push_back(obj.value(state.x));
}

}  // namespace detail

/// z' = z + grad f(x), x' = mirror_map(-z').
inline CdaState cda_step(CdaState state, const ObjectiveSplit& obj, const ProximalSetup& prox,
                         const FeasibleSet& set) {
  detail::require_dim(state.x.size(), set.dimension(), "cda state");
  const Vector g = obj.gradient(state.x);
  if (!g.allFinite())
    throw NumericalError("non-finite gradient at CDA round " + std::to_string(state.t));
  Vector next_x = mirror_map(prox, set, -(state.z + g));
  detail::cda_advance(state, g, std::move(next_x), obj);
  return state;
}

/// G_a(x, z) = (mirror_map(-z) - mirror_map(-z - grad)) / a, with the
/// gradient supplied by the caller.
inline Vector gradient_mapping_with(const Vector& x, const Vector& z, const Vector& grad,
                                    const ProximalSetup& prox, const FeasibleSet& set) {
  const Vector here = mirror_map(prox, set, -z);
  const double gap = (here - x).norm();
  if (!(gap <= kPairTol))
    throw std::invalid_argument("gradient_mapping: x is not mirror_map(-z) (gap " + format_double(gap) + ")");
  return (here - mirror_map(prox, set, -z - grad)) / prox.a();
}

inline Vector gradient_mapping(const Vector& x, const Vector& z, const ObjectiveSplit& obj,
                               const ProximalSetup& prox, const FeasibleSet& set) {
  return gradient_mapping_with(x, z, obj.gradient(x), prox, set);
}

struct StepsizeReport {
  bool ok = false;
  double a = 0.0;
  double lipschitz = 0.0;
  double limit = 0.0;  // a must stay strictly below this
  std::string message;
};

/// Monotone descent needs a < 2/L.
inline StepsizeReport validate_stepsize_cda(double a, double lipschitz) {
  if (!(lipschitz > 0.0)) throw std::invalid_argument("validate_stepsize_cda: L must be positive");
  StepsizeReport r{a < 2.0 / lipschitz, a, lipschitz, 2.0 / lipschitz, {}};
  std::ostringstream msg;
  msg << "a=" << a << (r.ok ? " < " : " >= ") << "2/L=" << r.limit << " (L=" << lipschitz << ")";
  r.message = msg.str();
  return r;
}

struct CdaOptions {
  long rounds = 1000;
  std::optional<double> f_lower;  // lower bound on f*, enables the O(1/k) bound column
  bool early_stop = false;        // stop once ||G_a|| <= 1e-10 for 10 consecutive rounds
  bool monitors = true;
};

struct CdaRecord {
  long t = 0;
  double f = 0.0;
  double grad_map_sq = 0.0;      // ||G_a(x_t, z_t)||^2
  double min_grad_map_sq = 0.0;  // min over s <= t
  double bound = 0.0;            // 2 (f(x_0) - f_lower) / (a (2 - aL) t), nan where undefined
};

struct CdaTrace {
  std::vector<CdaRecord> records;
  StepsizeReport stepsize;
  std::vector<Monitor> monitors;
  CdaState final_state;
  bool stopped_early = false;
  long stationary_persistence = 0;  // trailing rounds with ||G_a|| <= 1e-10

  Table table() const {
    Table t{{"t", "f", "grad_map_sq", "min_grad_map_sq", "eq6_bound"}, {}};
    t.rows.reserve(records.size());
    for (const auto& r : records)
      t.rows.push_back({static_cast<double>(r.t), r.f, r.grad_map_sq, r.min_grad_map_sq, r.bound});
    return t;
  }
};

/// Runs `rounds` CDA steps and records f, ||G_a||^2 and its running minimum at
/// every visited state t = 0..rounds. With monitors on, checks every round:
///  - monotone:   f(x_{t+1}) <= f(x_t)
///  - descent:    <grad f(x_t), x_{t+1} - x_t> <= -||x_{t+1} - x_t||^2 / a
///  - decrease:   f(x_t) - f(x_{t+1}) >= a (2 - aL)/2 ||G_a||^2
///  - identity:   ||G_a|| from its definition equals ||x_t - x_{t+1}|| / a
///  - feasible:   x_t in the set
inline CdaTrace run_cda(const ObjectiveSplit& obj, const ProximalSetup& prox, const FeasibleSet& set,
                        const CdaOptions& opt) {
  const double a = prox.a();
  const double lip = obj.lipschitz();
  CdaTrace trace;
  trace.stepsize = validate_stepsize_cda(a, lip);

  Monitor monotone{"monotone"}, descent{"descent"}, decrease{"per_round_decrease"},
      identity{"grad_map_identity"}, feasible{"feasible"};

  const double denom = a * (2.0 - a * lip);
  auto bound_at = [&](long k, double f0) {
    if (!opt.f_lower || k == 0 || !(denom > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    return 2.0 * (f0 - *opt.f_lower) / (denom * static_cast<double>(k));
  };

  CdaState state = cda_init(obj, prox, set);
  const double f0 = state.f_history.front();
  double running_min = std::numeric_limits<double>::infinity();
  long small_streak = 0;

  for (long t = 0;; ++t) {
    const Vector g = obj.gradient(state.x);
    if (!g.allFinite()) throw NumericalError("non-finite gradient at CDA round " + std::to_string(t));
    const Vector next_x = mirror_map(prox, set, -(state.z + g));
    const Vector step = next_x - state.x;
    const double gm_sq = step.squaredNorm() / (a * a);
    running_min = std::min(running_min, gm_sq);
    trace.records.push_back({t, state.f_history.back(), gm_sq, running_min, bound_at(t, f0)});

    small_streak = std::sqrt(gm_sq) <= kStationaryGradMap ? small_streak + 1 : 0;
    if (opt.monitors) {
      feasible.check_le(t, contains(set, state.x) ? 0.0 : 1.0, 0.0, 0.0);
      const Vector gm = gradient_mapping_with(state.x, state.z, g, prox, set);
      identity.check_le(t, std::abs(gm.norm() - std::sqrt(gm_sq)), 0.0, 1e-9 * std::max(1.0, gm.norm()));
    }
    if (t >= opt.rounds) break;
    if (opt.early_stop && small_streak >= kStationaryWindow) {
      trace.stopped_early = true;
      break;
    }

    const double f_t = state.f_history.back();
    detail::cda_advance(state, g, next_x, obj);
    const double f_next = state.f_history.back();
    if (opt.monitors) {
      const double scale = std::max({1.0, std::abs(f_t), std::abs(f_next)});
      monotone.check_le(t, f_next, f_t, 1e-12 * scale);
      descent.check_le(t, g.dot(step), -step.squaredNorm() / a, 1e-10 * scale);
      decrease.check_le(t, 0.5 * denom * gm_sq, f_t - f_next, 1e-10 * scale);
    }
  }
  trace.stationary_persistence = small_streak;
  if (opt.monitors) trace.monitors = {monotone, descent, decrease, identity, feasible};
  trace.final_state = std::move(state);
  return trace;
}

}  // namespace dualavg
