#pragma once

#include <stdexcept>
#include <string>

namespace mrnn {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand extents disagree with what an operation needs.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A configuration value is outside its legal range (even window, m <= 0, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input outside an operation's mathematical domain (all-masked softmax,
/// non-finite values, empty text).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Stateful component used before it was initialized.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Missing or malformed on-disk data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. backward from a non-scalar node.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Finite-difference harness detected a non-deterministic forward function.
class CheckError : public Error {
 public:
  using Error::Error;
};

}  // namespace mrnn
