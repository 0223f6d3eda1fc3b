#pragma once

#include <stdexcept>
#include <string>

namespace sembg {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor extents, channel/group divisibility violations.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration, architecture spec or branch plan.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Raised by transform when a branch width drops below its group count.
class ChannelUnderflowError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Missing or malformed dataset files.
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf in activations or losses, degenerate normalization statistics.
class NumericError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  enum class Kind { io, corrupt, version, arch_mismatch };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace sembg
