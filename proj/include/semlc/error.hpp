#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace semlc {

/// Failure categories. Each maps to a distinct process exit code in the CLI.
enum class ErrorKind {
  invalid_parameter,
  length_too_small,
  unstable_operator,
  shape_mismatch,
  data_format,
  diverged_loss,
  path_mismatch,
  zero_norm_filter,
  config,
  io,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_parameter: return "InvalidParameter";
    case ErrorKind::length_too_small: return "LengthTooSmall";
    case ErrorKind::unstable_operator: return "UnstableOperator";
    case ErrorKind::shape_mismatch: return "ShapeMismatch";
    case ErrorKind::data_format: return "DataFormatError";
    case ErrorKind::diverged_loss: return "DivergedLoss";
    case ErrorKind::path_mismatch: return "PathMismatch";
    case ErrorKind::zero_norm_filter: return "ZeroNormFilter";
    case ErrorKind::config: return "ConfigError";
    case ErrorKind::io: return "IOError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace semlc
