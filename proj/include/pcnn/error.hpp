#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pcnn {

// Categories double as the machine-readable error tag printed by the CLI.
enum class ErrorKind {
  invalid_shape,
  shape,
  config,
  data,
  label,
  parse,
  decode,
  corrupt_checkpoint,
  format,
  io,
  score,
  degenerate_filter,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_shape: return "invalid-shape";
    case ErrorKind::shape: return "shape";
    case ErrorKind::config: return "config";
    case ErrorKind::data: return "data";
    case ErrorKind::label: return "label";
    case ErrorKind::parse: return "parse";
    case ErrorKind::decode: return "decode";
    case ErrorKind::corrupt_checkpoint: return "corrupt-checkpoint";
    case ErrorKind::format: return "format";
    case ErrorKind::io: return "io";
    case ErrorKind::score: return "score";
    case ErrorKind::degenerate_filter: return "degenerate-filter";
  }
  return "unknown";
}

// Process exit code for each category; 0 is reserved for success.
inline int exit_code(ErrorKind kind) { return 10 + static_cast<int>(kind); }

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace pcnn
