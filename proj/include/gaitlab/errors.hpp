#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gaitlab {

enum class ErrorKind {
  kEmptySilhouette,
  kDegenerateBody,
  kCorruptFrame,
  kDuplicateSequence,
  kUnknownSequence,
  kMissingClass,
  kEmptyManifest,
  kShapeMismatch,
  kIndivisibleHeight,
  kZeroNormVector,
  kConfigConflict,
  kDegenerateBatch,
  kCheckpointVersionMismatch,
  kMissingLabels,
  kMissingMetadata,
  kEmptyGalleryForProbe,
  kEmptySet,
  kSubsetViolation,
  kEmptyAugSet,
  kParamOutOfRange,
  kUnknownKey,
  kTypeError,
  kRangeError,
  kIoError,
  kFormatError,
};

std::string_view to_string(ErrorKind kind);

/// Domain error carrying a machine-checkable kind. The CLI maps these to
/// exit code 1.
class GaitError : public std::runtime_error {
 public:
  GaitError(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace gaitlab
