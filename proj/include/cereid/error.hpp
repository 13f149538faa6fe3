#pragma once

#include <stdexcept>
#include <string>

namespace cereid {

/// Base class for every error raised by the library. The CLI maps config,
/// input, dataset and checkpoint errors to exit status 1, everything else to 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or hyper-parameter values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed caller input (indices out of range, non-finite values).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced inside a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A scene or dataset that cannot support the requested operation.
class DatasetError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint file problems: corrupt text, unknown version, mismatched shapes.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace cereid
