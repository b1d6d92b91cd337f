#ifndef PDM_ERROR_HPP
#define PDM_ERROR_HPP

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pdm {

enum class ErrorCode {
  rejected_reading,
  storage,
  invalid_range,
  invalid_argument,
  not_found,
  parse,
  format,
  version,
  corruption,
  dimension,
  invalid_dataset,
  missing_stats,
  conflict,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::rejected_reading: return "rejected_reading";
    case ErrorCode::storage: return "storage";
    case ErrorCode::invalid_range: return "invalid_range";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::parse: return "parse";
    case ErrorCode::format: return "format";
    case ErrorCode::version: return "version";
    case ErrorCode::corruption: return "corruption";
    case ErrorCode::dimension: return "dimension";
    case ErrorCode::invalid_dataset: return "invalid_dataset";
    case ErrorCode::missing_stats: return "missing_stats";
    case ErrorCode::conflict: return "conflict";
  }
  return "unknown";
}

/// Every failure raised by the library. The code is the stable part; the
/// message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Parse failure that remembers the 1-based line it happened on.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& message)
      : Error(ErrorCode::parse, "line " + std::to_string(line) + ": " + message),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace pdm

#endif  // PDM_ERROR_HPP
