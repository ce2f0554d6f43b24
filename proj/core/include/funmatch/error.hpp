#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace funmatch {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor or parameter shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument or configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Filesystem or stream failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or value during training or a numeric routine.
class NumericError : public Error {
 public:
  using Error::Error;
};

enum class FormatErrorKind {
  bad_magic,
  version_mismatch,
  truncated,
  malformed,
};

/// Malformed binary input (checkpoints, IDX files).
class FormatError : public IoError {
 public:
  FormatError(FormatErrorKind kind, const std::string& what) : IoError(what), kind_(kind) {}

  FormatErrorKind kind() const noexcept { return kind_; }

 private:
  FormatErrorKind kind_;
};

}  // namespace funmatch
