#pragma once

#include <stdexcept>
#include <string>

namespace kpl {

/// Malformed files, inconsistent dimensions, invalid configuration.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Divergence, collisions and solver breakdown.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace kpl
