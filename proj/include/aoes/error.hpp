#pragma once

#include <stdexcept>
#include <string>

namespace aoes {

enum class ErrorCode {
  // data errors
  kMalformedRow,
  kUnknownPrompt,
  kEmptyFile,
  kOutOfRange,
  kEmptyText,
  kEmptyInput,
  kShapeMismatch,
  kTooFewSamples,
  kInsufficientResource,
  kTooShortEssay,
  kMissingOffTopicTrain,
  kDegenerateScores,
  kDegenerateMarginals,
  kZeroVariance,
  kBadFormat,
  kHashMismatch,
  kIo,
  kBudgetExceeded,
  // numeric failures
  kNonFiniteActivation,
  kNonFiniteFeature,
  kNonFiniteLoss,
  kDegenerateYt,
  // usage
  kInvalidArgument,
};

const char* error_code_name(ErrorCode code);

// Process exit code for a failure of this kind: 3 data, 4 numeric, 2 usage.
int exit_code_for(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace aoes
