#ifndef MTCN_ERRORS_HPP
#define MTCN_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace mtcn {

/// Invalid shapes, hyperparameters or architecture descriptions.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN/Inf produced by a kernel or an optimizer step.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An operation was called on an object that is not ready for it
/// (missing forward cache, uninitialized running statistics).
class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad caller-supplied data: empty masks, mismatched batch sizes, lengths.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Problems with on-disk datasets, manifests and checkpoints.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a window is requested from a timestamp that has no image.
class AvailabilityError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace mtcn

#endif  // MTCN_ERRORS_HPP
