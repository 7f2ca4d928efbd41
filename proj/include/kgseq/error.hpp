#pragma once

#include <stdexcept>
#include <string>

namespace kgseq {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define KGSEQ_DEFINE_ERROR(Name)        \
  class Name : public Error {           \
   public:                              \
    using Error::Error;                 \
  }

KGSEQ_DEFINE_ERROR(DatasetFormatError);
KGSEQ_DEFINE_ERROR(EmptySplitError);
KGSEQ_DEFINE_ERROR(ArgumentError);
KGSEQ_DEFINE_ERROR(PreconditionError);
KGSEQ_DEFINE_ERROR(PackingError);
KGSEQ_DEFINE_ERROR(ConfigError);
KGSEQ_DEFINE_ERROR(InputError);
KGSEQ_DEFINE_ERROR(NumericError);
KGSEQ_DEFINE_ERROR(ModeError);
KGSEQ_DEFINE_ERROR(ConfigMismatchError);
KGSEQ_DEFINE_ERROR(CheckpointError);

#undef KGSEQ_DEFINE_ERROR

class UnknownIdentifierError : public Error {
 public:
  explicit UnknownIdentifierError(std::string identifier, const std::string& where)
      : Error("unknown identifier '" + identifier + "' in " + where), identifier_(std::move(identifier)) {}
  const std::string& identifier() const noexcept { return identifier_; }

 private:
  std::string identifier_;
};

/// Checkpoint whose manifest disagrees with its tensor data.
class CheckpointIntegrityError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

}  // namespace kgseq
