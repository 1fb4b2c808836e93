#pragma once

#include <stdexcept>
#include <string>

namespace stconv {

/// Base of every exception the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand extents disagree with what the operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A window or index falls outside the tensor.
class BoundsError : public Error {
 public:
  using Error::Error;
};

/// Arguments violate a documented precondition.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Configuration cannot produce a valid model or run.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values reached the optimizer or the loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Internal bookkeeping is inconsistent (e.g. pool argmax outside its input).
class CorruptionError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure, always carries the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Binary container could not be decoded.
class FormatError : public Error {
 public:
  enum class Kind { kBadMagic, kBadVersion, kTruncated, kChecksum, kShape, kSyntax };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace stconv
