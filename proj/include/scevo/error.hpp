#pragma once

#include <stdexcept>
#include <string>

namespace scevo {

enum class ErrorCode {
  kInvalidArgument,
  kNonPositiveDepth,
  kBehindCamera,
  kEmptyTracks,
  kEmptyReferenceSet,
  kDimensionMismatch,
  kEmptyFrame,
  kSingularSystem,
  kDivergedCost,
  kInfeasibleSpec,
  kUnknownPatch,
  kDegenerateConfiguration,
  kNoAssociations,
  kNoMotion,
  kMissingGroundTruth,
  kChecksumMismatch,
  kParse,
  kIo,
};

const char* to_string(ErrorCode code);

// All library failures are reported through this exception; the C API maps
// the code onto its status enum.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace scevo
