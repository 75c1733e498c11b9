#pragma once

#include <stdexcept>
#include <string>

namespace neurbf {

/// Error categories. The CLI maps these onto its exit codes.
enum class ErrorKind {
  config,    // invalid configuration or arguments
  io,        // unreadable/unwritable file, malformed container
  training,  // non-finite loss or gradient
  mesh,      // mesh rejected (not watertight, bad indices)
  logic,     // contract violation inside the library
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace neurbf
