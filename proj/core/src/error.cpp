#include "mtpet/error.hpp"

namespace mtpet {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage: return "usage";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kNotFound: return "not-found";
    case ErrorKind::kMalformedSequence: return "malformed-sequence";
    case ErrorKind::kVocabulary: return "vocabulary";
    case ErrorKind::kArity: return "arity";
    case ErrorKind::kRole: return "role";
    case ErrorKind::kCoverage: return "coverage";
    case ErrorKind::kCheckpoint: return "checkpoint";
    case ErrorKind::kData: return "data";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kRateLimit: return "rate-limit";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kNumerical: return "numerical";
  }
  return "unknown";
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kData:
    case ErrorKind::kParse:
    case ErrorKind::kRateLimit:
    case ErrorKind::kIo:
      return 3;
    case ErrorKind::kNumerical:
      return 4;
    default:
      return 2;
  }
}

}  // namespace mtpet
