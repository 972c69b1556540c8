#pragma once

#include <stdexcept>
#include <string>

namespace semstab {

// Thrown for every contract violation surfaced by the library. Callers that
// need to distinguish modules can inspect the message prefix ("corpus: ...").
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] inline void fail(const std::string& module, const std::string& message) {
  throw Error(module + ": " + message);
}

inline void require(bool condition, const std::string& module, const std::string& message) {
  if (!condition) fail(module, message);
}

}  // namespace semstab
