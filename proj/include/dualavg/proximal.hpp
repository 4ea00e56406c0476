#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>

#include "dualavg/feasible_set.hpp"

namespace dualavg {

/// Quadratic proximal function d(x) = ||x - center||^2 / (2a).
///
/// d is (1/a)-strongly convex, vanishes at its center and is minimized there,
/// so `center` is the d-center of any set that contains it. The conjugate's
/// gradient over a set reduces to a Euclidean projection, see mirror_map().
class ProximalSetup {
 public:
  ProximalSetup(Vector center, double a) : center_(std::move(center)), a_(a) {
    if (!(a > 0.0) || !std::isfinite(a))
      throw std::invalid_argument("proximal parameter a must be positive and finite");
  }

  const Vector& center() const { return center_; }
  double a() const { return a_; }
  Eigen::Index dimension() const { return center_.size(); }

  double value(const Vector& x) const {
    detail::require_dim(x.size(), dimension(), "proximal value");
    return (x - center_).squaredNorm() / (2.0 * a_);
  }

  Vector gradient(const Vector& x) const {
    detail::require_dim(x.size(), dimension(), "proximal gradient");
    return (x - center_) / a_;
  }

 private:
  Vector center_;
  double a_;
};

/// argmax over the set of <z, x> - d(x). For quadratic d this is
/// project(set, center + a z).
inline Vector mirror_map(const ProximalSetup& prox, const FeasibleSet& set, const Vector& z) {
  detail::require_dim(z.size(), prox.dimension(), "mirror_map");
  detail::require_dim(set.dimension(), prox.dimension(), "mirror_map set");
  return project(set, prox.center() + prox.a() * z);
}

/// Anything with value(x) and gradient(x), e.g. ProximalSetup or a test stub.
template <typename D>
concept DifferentiableFunction = requires(const D& d, const Vector& x) {
  { d.value(x) } -> std::convertible_to<double>;
  { d.gradient(x) } -> std::convertible_to<Vector>;
};

/// Checks d(y) >= d(x) + <grad d(x), y - x> + ||y - x||^2 / (2a) at one pair,
/// up to 1e-10 (relative to the magnitude of the terms when they exceed 1).
template <DifferentiableFunction D>
bool strong_convexity_probe(const D& d, double a, const Vector& x, const Vector& y) {
  const Vector diff = y - x;
  const double lhs = d.value(y);
  const double rhs = d.value(x) + d.gradient(x).dot(diff) + diff.squaredNorm() / (2.0 * a);
  const double scale = std::max({1.0, std::abs(lhs), std::abs(rhs)});
  return lhs >= rhs - 1e-10 * scale;
}

inline bool strong_convexity_probe(const ProximalSetup& prox, const Vector& x, const Vector& y) {
  return strong_convexity_probe(prox, prox.a(), x, y);
}

}  // namespace dualavg
