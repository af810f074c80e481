#pragma once

#include <stdexcept>
#include <string>

namespace eviadapt {

// Error categories map one-to-one onto CLI exit codes (see cli.hpp).

/// Bad configuration, bad arguments or a contract violation by the caller.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Operand shapes are incompatible for the requested operation.
class ShapeError : public UsageError {
 public:
  using UsageError::UsageError;
};

/// Malformed, missing or degenerate input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values produced during a computation.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace eviadapt
