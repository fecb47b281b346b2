#pragma once

#include <stdexcept>
#include <string>

namespace tabcpt {

// Broad failure classes. The CLI maps each one onto a stable exit code.
enum class ErrorKind {
  input,           // unreadable / malformed files, contract violations on data
  internal,        // invariant broken inside the library
  numerical,       // non-finite loss or gradient
  curation_guard,  // training corpus did not pass the contamination scan
  config,          // run configuration failed validation
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error input_error(const std::string& what) { return Error(ErrorKind::input, what); }
inline Error config_error(const std::string& what) { return Error(ErrorKind::config, what); }
inline Error numerical_error(const std::string& what) { return Error(ErrorKind::numerical, what); }
inline Error internal_error(const std::string& what) { return Error(ErrorKind::internal, what); }

}  // namespace tabcpt
