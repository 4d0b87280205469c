#pragma once

#include <stdexcept>
#include <string>

namespace ensloss {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Mismatched vector / matrix sizes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or request (empty pools, bad counts, unknown names).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A loss or model produced a non-finite value where a finite one is required.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// Precondition of an operation was violated by its caller.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Training produced non-finite parameters or gradients.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

/// Malformed or unreadable input files.
class IngestionError : public Error {
 public:
  using Error::Error;
};

}  // namespace ensloss
