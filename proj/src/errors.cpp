#include "gaitlab/errors.hpp"

namespace gaitlab {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kEmptySilhouette: return "EmptySilhouette";
    case ErrorKind::kDegenerateBody: return "DegenerateBody";
    case ErrorKind::kCorruptFrame: return "CorruptFrame";
    case ErrorKind::kDuplicateSequence: return "DuplicateSequence";
    case ErrorKind::kUnknownSequence: return "UnknownSequence";
    case ErrorKind::kMissingClass: return "MissingClass";
    case ErrorKind::kEmptyManifest: return "EmptyManifest";
    case ErrorKind::kShapeMismatch: return "ShapeMismatch";
    case ErrorKind::kIndivisibleHeight: return "IndivisibleHeight";
    case ErrorKind::kZeroNormVector: return "ZeroNormVector";
    case ErrorKind::kConfigConflict: return "ConfigConflict";
    case ErrorKind::kDegenerateBatch: return "DegenerateBatch";
    case ErrorKind::kCheckpointVersionMismatch: return "CheckpointVersionMismatch";
    case ErrorKind::kMissingLabels: return "MissingLabels";
    case ErrorKind::kMissingMetadata: return "MissingMetadata";
    case ErrorKind::kEmptyGalleryForProbe: return "EmptyGalleryForProbe";
    case ErrorKind::kEmptySet: return "EmptySet";
    case ErrorKind::kSubsetViolation: return "SubsetViolation";
    case ErrorKind::kEmptyAugSet: return "EmptyAugSet";
    case ErrorKind::kParamOutOfRange: return "ParamOutOfRange";
    case ErrorKind::kUnknownKey: return "UnknownKey";
    case ErrorKind::kTypeError: return "TypeError";
    case ErrorKind::kRangeError: return "RangeError";
    case ErrorKind::kIoError: return "IoError";
    case ErrorKind::kFormatError: return "FormatError";
  }
  return "Unknown";
}

}  // namespace gaitlab
