#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace impit {

/// Broad class of a failure; front ends map these to exit codes / HTTP status.
enum class ErrorKind {
  validation,  ///< bad input or configuration
  domain,      ///< mathematically undefined request (e.g. log of a negative sum)
  not_found,
  conflict,
  runtime,
};

/// The single exception type thrown by the library.
///
/// `code` is a short machine-readable reason (e.g. "gap", "log_domain") that
/// is stable across the CLI and the HTTP service.
class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, std::string code, const std::string &message)
      : std::runtime_error(message), kind_(kind), code_(std::move(code)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string &code() const noexcept { return code_; }

private:
  ErrorKind kind_;
  std::string code_;
};

[[noreturn]] inline void fail_validation(std::string code, const std::string &msg) {
  throw Error(ErrorKind::validation, std::move(code), msg);
}

[[noreturn]] inline void fail_domain(std::string code, const std::string &msg) {
  throw Error(ErrorKind::domain, std::move(code), msg);
}

inline const char *to_string(ErrorKind k) {
  switch (k) {
  case ErrorKind::validation: return "validation";
  case ErrorKind::domain: return "domain";
  case ErrorKind::not_found: return "not_found";
  case ErrorKind::conflict: return "conflict";
  case ErrorKind::runtime: return "runtime";
  }
  return "runtime";
}

} // namespace impit
