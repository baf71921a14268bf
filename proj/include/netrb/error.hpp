#pragma once

#include <stdexcept>
#include <string>

namespace netrb {

/// Invalid user input: topology, coefficients, configuration files.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A computation that cannot proceed: failed factorization, divergence,
/// degenerate fits.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reading or writing an experiment artifact failed.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace netrb
