#pragma once

#include <stdexcept>
#include <string>

namespace embvos {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A precondition that callers are responsible for was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A computation produced NaN or Inf where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Missing files, unreadable images, failed writes.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed checkpoint manifest, unknown format version, truncated blob.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid user-supplied configuration (unknown keys, out-of-range values).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace embvos
