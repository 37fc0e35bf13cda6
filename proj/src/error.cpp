#include "selfret/error.hpp"

namespace selfret {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Format: return "FormatError";
    case ErrorKind::ManifestMismatch: return "ManifestMismatch";
    case ErrorKind::Data: return "DataError";
    case ErrorKind::DegenerateVector: return "DegenerateVector";
    case ErrorKind::Precondition: return "PreconditionError";
    case ErrorKind::Key: return "KeyError";
    case ErrorKind::Range: return "RangeError";
    case ErrorKind::Dim: return "DimError";
    case ErrorKind::IncompleteReview: return "IncompleteReview";
    case ErrorKind::Policy: return "PolicyError";
    case ErrorKind::Vocab: return "VocabError";
    case ErrorKind::Config: return "ConfigError";
    case ErrorKind::Training: return "TrainingError";
  }
  return "Error";
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Data:
    case ErrorKind::DegenerateVector:
      return 3;
    case ErrorKind::Policy:
    case ErrorKind::Training:
      return 4;
    default:
      return 2;
  }
}

}  // namespace selfret
