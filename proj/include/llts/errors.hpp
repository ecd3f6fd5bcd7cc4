#pragma once

#include <stdexcept>
#include <string>

namespace llts {

/// Base of every error raised by the library. The CLI maps the concrete
/// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes disagree with an op's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced or consumed, divergence, gradient-check failure.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed files, missing directories, label/class-table mismatches.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Bad configuration keys or values.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace llts
