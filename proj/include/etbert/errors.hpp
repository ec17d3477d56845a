#pragma once

#include <stdexcept>
#include <string>

namespace etbert {

// Process exit codes; every thrown Error carries the one the CLI should use.
enum class ExitCode : int {
  ok = 0,
  usage = 1,
  io = 2,
  malformed = 3,
  incompatible = 4,
  insufficient = 5,
  internal = 70,
};

class Error : public std::runtime_error {
public:
  Error(ExitCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  ExitCode code() const { return code_; }

private:
  ExitCode code_;
};

#define ETBERT_ERROR(Name, Code)                                            \
  class Name : public Error {                                               \
  public:                                                                   \
    explicit Name(const std::string& msg) : Error(ExitCode::Code, msg) {}   \
  }

ETBERT_ERROR(UsageError, usage);
ETBERT_ERROR(IoError, io);

// malformed input data
ETBERT_ERROR(UnknownMagic, malformed);
ETBERT_ERROR(TruncatedRecord, malformed);
ETBERT_ERROR(UnsupportedLinkType, malformed);
ETBERT_ERROR(MalformedPacket, malformed);
ETBERT_ERROR(MalformedRecord, malformed);
ETBERT_ERROR(BadMagic, malformed);

// structurally valid but unusable together
ETBERT_ERROR(IdOutOfRange, incompatible);
ETBERT_ERROR(SpecialInPayload, incompatible);
ETBERT_ERROR(OverlapMismatch, incompatible);
ETBERT_ERROR(ShapeMismatch, incompatible);
ETBERT_ERROR(VersionUnsupported, incompatible);
ETBERT_ERROR(Incompatible, incompatible);
ETBERT_ERROR(LabelOutOfRange, incompatible);
ETBERT_ERROR(UntrainedHead, incompatible);

// not enough data to proceed
ETBERT_ERROR(TooShort, insufficient);
ETBERT_ERROR(SequenceTooShort, insufficient);
ETBERT_ERROR(BlockTooLong, insufficient);
ETBERT_ERROR(EmptyInput, insufficient);
ETBERT_ERROR(EmptyCorpus, insufficient);
ETBERT_ERROR(EmptyMatrix, insufficient);
ETBERT_ERROR(ClassEmpty, insufficient);
ETBERT_ERROR(InsufficientBursts, insufficient);

ETBERT_ERROR(InternalError, internal);

#undef ETBERT_ERROR

}  // namespace etbert
