#pragma once

#include <stdexcept>
#include <string>

namespace voxseg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor or volume shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration (model, sampler, loss, trainer).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File system failures, always carrying the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Header and payload of a container disagree.
class CorruptContainer : public IoError {
 public:
  using IoError::IoError;
};

/// File is readable but its format is not supported.
class UnsupportedFormat : public IoError {
 public:
  using IoError::IoError;
};

/// Data violates a documented invariant (e.g. a non-binary label mask).
class InvariantViolation : public Error {
 public:
  using Error::Error;
};

/// Input has no usable signal (zero variance, empty support, ...).
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

/// A metric or statistic is undefined for the given input.
class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

/// Numerical failure during optimization (NaN loss or gradient).
class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

}  // namespace voxseg
