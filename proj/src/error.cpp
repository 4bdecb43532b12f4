#include "aoes/error.hpp"

namespace aoes {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedRow: return "MalformedRow";
    case ErrorCode::kUnknownPrompt: return "UnknownPrompt";
    case ErrorCode::kEmptyFile: return "EmptyFile";
    case ErrorCode::kOutOfRange: return "OutOfRange";
    case ErrorCode::kEmptyText: return "EmptyText";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kTooFewSamples: return "TooFewSamples";
    case ErrorCode::kInsufficientResource: return "InsufficientResource";
    case ErrorCode::kTooShortEssay: return "TooShortEssay";
    case ErrorCode::kMissingOffTopicTrain: return "MissingOffTopicTrain";
    case ErrorCode::kDegenerateScores: return "DegenerateScores";
    case ErrorCode::kDegenerateMarginals: return "DegenerateMarginals";
    case ErrorCode::kZeroVariance: return "ZeroVariance";
    case ErrorCode::kBadFormat: return "BadFormat";
    case ErrorCode::kHashMismatch: return "HashMismatch";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kBudgetExceeded: return "BudgetExceeded";
    case ErrorCode::kNonFiniteActivation: return "NonFiniteActivation";
    case ErrorCode::kNonFiniteFeature: return "NonFiniteFeature";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kDegenerateYt: return "DegenerateYt";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNonFiniteActivation:
    case ErrorCode::kNonFiniteFeature:
    case ErrorCode::kNonFiniteLoss:
    case ErrorCode::kDegenerateYt:
      return 4;
    case ErrorCode::kInvalidArgument:
      return 2;
    default:
      return 3;
  }
}

}  // namespace aoes
