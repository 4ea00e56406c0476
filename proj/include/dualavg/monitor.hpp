#pragma once

#include <algorithm>
#include <string>
#include <vector>

namespace dualavg {

/// Running tally of one per-round inequality check.
struct Monitor {
  std::string name;
  long checks = 0;
  long violations = 0;
  double worst_excess = 0.0;  // largest amount by which the inequality failed
  long first_violation = -1;  // round index

  /// Records `lhs <= rhs + tol` at round t.
  void check_le(long t, double lhs, double rhs, double tol) {
    ++checks;
    const double excess = lhs - rhs;
    if (!(excess <= tol)) {  // NaN counts as a violation
      ++violations;
      worst_excess = std::max(worst_excess, excess);
      if (first_violation < 0) first_violation = t;
    }
  }

  bool ok() const { return violations == 0; }
};

inline const Monitor* find_monitor(const std::vector<Monitor>& ms, const std::string& name) {
  for (const auto& m : ms)
    if (m.name == name) return &m;
  return nullptr;
}

}  // namespace dualavg
