#pragma once

#include <stdexcept>
#include <string>

namespace eatkit {

/// Broad failure classes. The CLI maps these onto its exit codes.
enum class ErrorKind {
  validation,  // malformed input, out-of-range parameters
  io,          // unreadable / unwritable files
  solver,      // SDP infeasible, numerical failure, duality gap too large
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string code, const std::string& message)
      : std::runtime_error(message), kind_(kind), code_(std::move(code)) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// Short machine-readable identifier, e.g. "parse.syntax".
  const std::string& code() const noexcept { return code_; }

 private:
  ErrorKind kind_;
  std::string code_;
};

inline Error validation_error(std::string code, const std::string& msg) {
  return Error(ErrorKind::validation, std::move(code), msg);
}
inline Error io_error(std::string code, const std::string& msg) {
  return Error(ErrorKind::io, std::move(code), msg);
}
inline Error solver_error(std::string code, const std::string& msg) {
  return Error(ErrorKind::solver, std::move(code), msg);
}

}  // namespace eatkit
