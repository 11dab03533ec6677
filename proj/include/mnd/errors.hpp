#pragma once

#include <stdexcept>
#include <string>

namespace mnd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or image sizes are incompatible with an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Input value outside the domain of an operation (sqrt of a negative, empty reduction).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// API misuse: backward on a non-scalar, class index out of range, empty groups.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameters or configuration keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Finite-difference evaluation produced a non-finite value.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// The attack objective became non-finite.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int iteration) : Error(what), iteration_(iteration) {}
  int iteration() const noexcept { return iteration_; }

 private:
  int iteration_;
};

/// Checkpoint or dataset file failed validation (magic, checksum, truncation).
class CorruptFileError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mnd
