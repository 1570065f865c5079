#pragma once

#include <stdexcept>
#include <string>

namespace asentinel {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dimension mismatch, malformed probability vector, bad threshold, ...
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Request exceeds a hard size guard (e.g. too many actuators to enumerate).
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// A matrix that must be factorized (Cholesky, eigen square root) is not.
class FactorizationError : public Error {
 public:
  using Error::Error;
};

/// Numerical breakdown inside a per-mode computation.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, int mode)
      : Error(what + " (mode " + std::to_string(mode) + ")"), mode_(mode) {}

  int mode() const noexcept { return mode_; }

 private:
  int mode_;
};

}  // namespace asentinel
