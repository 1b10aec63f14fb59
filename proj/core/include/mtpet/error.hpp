#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mtpet {

enum class ErrorKind {
  kUsage,
  kConfig,
  kNotFound,
  kMalformedSequence,
  kVocabulary,
  kArity,
  kRole,
  kCoverage,
  kCheckpoint,
  kData,
  kParse,
  kRateLimit,
  kIo,
  kNumerical,
};

std::string_view to_string(ErrorKind kind);

// Process exit code for a failure of this kind: 2 usage/config, 3 data,
// 4 numerical.
int exit_code(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  // Same kind, message prefixed with a stage/context label.
  Error with_context(std::string_view context) const {
    return Error(kind_, std::string(context) + ": " + what());
  }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace mtpet
