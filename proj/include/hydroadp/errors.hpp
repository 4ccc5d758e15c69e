#pragma once

#include <stdexcept>
#include <string>

namespace hydroadp {

// Bad or inconsistent configuration (files, dimensions, invariants).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Problems with input data (CSV contents, empty pools, missing years).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical failures (solver did not converge, fit failed).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace hydroadp
