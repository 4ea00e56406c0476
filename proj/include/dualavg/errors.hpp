#pragma once

#include <stdexcept>
#include <string>

namespace dualavg {

/// Operands of incompatible dimension were combined.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A run produced non-finite values, or a numerical precondition failed.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid experiment configuration (maps to CLI exit code 2).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A step size or network violates the conditions a convergence bound needs.
class InfeasibleError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

namespace detail {

inline void require_dim(long got, long want, const char* what) {
  if (got != want) {
    throw DimensionError(std::string(what) + ": dimension " + std::to_string(got) +
                         ", expected " + std::to_string(want));
  }
}

}  // namespace detail
}  // namespace dualavg
