#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace suri {

enum class ErrorCode {
  kDomain,
  kInvalidArgument,
  kIo,
  kParse,
  // dataset_builder
  kMissingSection,
  kEmptyConstraints,
  kCountMismatch,
  kMalformedLine,
  kUnparseableLabel,
  // llm_gateway
  kAuth,
  kRateLimited,
  kRefusal,
  kTransport,
  // tiny_lm / iorpo_core
  kEmptyTarget,
  kTokenOutOfRange,
  kDegenerateProbability,
  // eval_harness
  kMissingCorruption,
  kMalformedVerdict,
  kLengthMismatch,
  kNoPairableValues,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDomain: return "Domain";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kParse: return "Parse";
    case ErrorCode::kMissingSection: return "MissingSection";
    case ErrorCode::kEmptyConstraints: return "EmptyConstraints";
    case ErrorCode::kCountMismatch: return "CountMismatch";
    case ErrorCode::kMalformedLine: return "MalformedLine";
    case ErrorCode::kUnparseableLabel: return "UnparseableLabel";
    case ErrorCode::kAuth: return "AuthError";
    case ErrorCode::kRateLimited: return "RateLimited";
    case ErrorCode::kRefusal: return "Refusal";
    case ErrorCode::kTransport: return "TransportError";
    case ErrorCode::kEmptyTarget: return "EmptyTarget";
    case ErrorCode::kTokenOutOfRange: return "TokenOutOfRange";
    case ErrorCode::kDegenerateProbability: return "DegenerateProbability";
    case ErrorCode::kMissingCorruption: return "MissingCorruption";
    case ErrorCode::kMalformedVerdict: return "MalformedVerdict";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kNoPairableValues: return "NoPairableValues";
  }
  return "Unknown";
}

/// Single exception type for the library; callers switch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace suri
