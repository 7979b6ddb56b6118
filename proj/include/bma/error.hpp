#pragma once

#include <stdexcept>
#include <string>

namespace bma {

/// Invalid user input: malformed data, bad configuration, arguments outside
/// a function's domain. Maps to CLI exit code 1.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of a helper (e.g. |r| >= 1).
class DomainError : public InputError {
 public:
  using InputError::InputError;
};

/// A numerical procedure failed (non-finite posterior, non-convergence).
/// Maps to CLI exit code 2.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bma
