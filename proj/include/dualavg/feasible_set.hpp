#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <variant>

#include <Eigen/Dense>

#include "dualavg/errors.hpp"
#include "dualavg/rng.hpp"

namespace dualavg {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Tolerance used by every membership test.
inline constexpr double kFeasibilityTol = 1e-12;

struct EuclideanBall {
  Vector center;
  double radius = 1.0;
};

struct Box {
  Vector lower;
  Vector upper;
};

/// Unconstrained R^m. Not compact: only the unconstrained gradient-mapping
/// identity uses it, and the distributed engine rejects it.
struct WholeSpace {
  Eigen::Index dimension = 0;
};

class FeasibleSet {
 public:
  using Variant = std::variant<EuclideanBall, Box, WholeSpace>;

  static FeasibleSet ball(Vector center, double radius) {
    if (!(radius > 0.0) || !std::isfinite(radius))
      throw std::invalid_argument("ball radius must be positive and finite");
    return FeasibleSet(EuclideanBall{std::move(center), radius});
  }

  static FeasibleSet ball(Eigen::Index dim, double radius) {
    return ball(Vector::Zero(dim), radius);
  }

  static FeasibleSet box(Vector lower, Vector upper) {
    detail::require_dim(upper.size(), lower.size(), "box upper bound");
    if ((lower.array() > upper.array()).any())
      throw std::invalid_argument("box requires lower <= upper componentwise");
    return FeasibleSet(Box{std::move(lower), std::move(upper)});
  }

  static FeasibleSet whole_space(Eigen::Index dim) { return FeasibleSet(WholeSpace{dim}); }

  const Variant& variant() const { return shape_; }

  Eigen::Index dimension() const {
    return std::visit(
        [](const auto& s) -> Eigen::Index {
          using S = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<S, EuclideanBall>) return s.center.size();
          else if constexpr (std::is_same_v<S, Box>) return s.lower.size();
          else return s.dimension;
        },
        shape_);
  }

  bool is_compact() const { return !std::holds_alternative<WholeSpace>(shape_); }

  std::string name() const {
    return std::visit(
        [](const auto& s) -> std::string {
          using S = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<S, EuclideanBall>) return "ball";
          else if constexpr (std::is_same_v<S, Box>) return "box";
          else return "whole_space";
        },
        shape_);
  }

 private:
  explicit FeasibleSet(Variant v) : shape_(std::move(v)) {}
  Variant shape_;
};

/// Euclidean projection onto the set.
inline Vector project(const FeasibleSet& set, const Vector& p) {
  detail::require_dim(p.size(), set.dimension(), "project");
  return std::visit(
      [&](const auto& s) -> Vector {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, EuclideanBall>) {
          Vector offset = p - s.center;
          const double dist = offset.norm();
          // rounding slack so boundary points map to themselves
          if (dist <= s.radius * (1.0 + 4.0 * std::numeric_limits<double>::epsilon())) return p;
          return s.center + offset * (s.radius / dist);
        } else if constexpr (std::is_same_v<S, Box>) {
          return p.cwiseMax(s.lower).cwiseMin(s.upper);
        } else {
          return p;
        }
      },
      set.variant());
}

inline bool contains(const FeasibleSet& set, const Vector& x, double tol = kFeasibilityTol) {
  detail::require_dim(x.size(), set.dimension(), "contains");
  if (!x.allFinite()) return false;
  return std::visit(
      [&](const auto& s) -> bool {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, EuclideanBall>) {
          return (x - s.center).norm() <= s.radius + tol * std::max(1.0, s.radius);
        } else if constexpr (std::is_same_v<S, Box>) {
          return ((x - s.lower).array() >= -tol).all() && ((s.upper - x).array() >= -tol).all();
        } else {
          return true;
        }
      },
      set.variant());
}

/// Random point of the set. Uniform for ball and box; WholeSpace draws from
/// the cube [-1, 1]^m.
inline Vector sample_point(const FeasibleSet& set, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  return std::visit(
      [&](const auto& s) -> Vector {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, EuclideanBall>) {
          const auto m = s.center.size();
          Vector dir = standard_normal(m, rng);
          const double len = dir.norm();
          if (len == 0.0) return s.center;
          const double r = s.radius * std::pow(unit(rng), 1.0 / static_cast<double>(m));
          return s.center + dir * (r / len);
        } else if constexpr (std::is_same_v<S, Box>) {
          Vector x(s.lower.size());
          for (Eigen::Index k = 0; k < x.size(); ++k)
            x[k] = s.lower[k] + unit(rng) * (s.upper[k] - s.lower[k]);
          return x;
        } else {
          Vector x(s.dimension);
          for (Eigen::Index k = 0; k < x.size(); ++k) x[k] = 2.0 * unit(rng) - 1.0;
          return x;
        }
      },
      set.variant());
}

/// Largest distance from the origin to a point of the set; infinite for WholeSpace.
inline double max_norm(const FeasibleSet& set) {
  return std::visit(
      [](const auto& s) -> double {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, EuclideanBall>) return s.center.norm() + s.radius;
        else if constexpr (std::is_same_v<S, Box>) return s.lower.cwiseAbs().cwiseMax(s.upper.cwiseAbs()).norm();
        else return std::numeric_limits<double>::infinity();
      },
      set.variant());
}

}  // namespace dualavg
