#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nfuse {

// Coarse failure class, reported by the CLI as a machine-parsable token.
enum class ErrorCategory {
  kShape,
  kArgument,
  kIo,
  kFormat,
  kData,
};

std::string_view to_string(ErrorCategory category);

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

[[noreturn]] inline void fail(ErrorCategory category, const std::string& what) {
  throw Error(category, what);
}

}  // namespace nfuse
