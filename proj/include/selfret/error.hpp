#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace selfret {

enum class ErrorKind {
  Format,
  ManifestMismatch,
  Data,
  DegenerateVector,
  Precondition,
  Key,
  Range,
  Dim,
  IncompleteReview,
  Policy,
  Vocab,
  Config,
  Training,
};

std::string_view to_string(ErrorKind kind);

// Process exit code for the CLI: 2 validation, 3 data, 4 training.
int exit_code(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

template <ErrorKind K>
class TypedError : public Error {
 public:
  explicit TypedError(const std::string& message) : Error(K, message) {}
};

using FormatError = TypedError<ErrorKind::Format>;
using ManifestMismatch = TypedError<ErrorKind::ManifestMismatch>;
using DataError = TypedError<ErrorKind::Data>;
using DegenerateVector = TypedError<ErrorKind::DegenerateVector>;
using PreconditionError = TypedError<ErrorKind::Precondition>;
using KeyError = TypedError<ErrorKind::Key>;
using RangeError = TypedError<ErrorKind::Range>;
using DimError = TypedError<ErrorKind::Dim>;
using IncompleteReview = TypedError<ErrorKind::IncompleteReview>;
using PolicyError = TypedError<ErrorKind::Policy>;
using VocabError = TypedError<ErrorKind::Vocab>;
using ConfigError = TypedError<ErrorKind::Config>;
using TrainingError = TypedError<ErrorKind::Training>;

}  // namespace selfret
