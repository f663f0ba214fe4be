#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lmo {

enum class ErrorCode {
  // simplex
  NegativeWeight,
  SumNotOne,
  TooFewGroups,
  GridRequiresTwoGroups,
  InvalidAlpha,
  InvalidArgument,
  IndexOutOfRange,
  EpsilonOutOfRange,
  // mixing laws
  DimensionMismatch,
  InvalidParams,
  InsufficientSamples,
  NonConvergence,
  SingularDesign,
  DegenerateScale,
  ShapeMismatch,
  // trainer
  InvalidConfig,
  UnknownToken,
  // egd
  ZeroMass,
  ZeroMatrix,
  GammaOutOfRange,
  // methods
  BudgetExceeded,
  SingularP,
  IndivisibleSteps,
  RoundNotTraced,
  // analysis
  ZeroColumnSums,
  ComplexityLimitExceeded,
  // harness
  ParseError,
  ValidationError,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NegativeWeight: return "NegativeWeight";
    case ErrorCode::SumNotOne: return "SumNotOne";
    case ErrorCode::TooFewGroups: return "TooFewGroups";
    case ErrorCode::GridRequiresTwoGroups: return "GridRequiresTwoGroups";
    case ErrorCode::InvalidAlpha: return "InvalidAlpha";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::EpsilonOutOfRange: return "EpsilonOutOfRange";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::SingularDesign: return "SingularDesign";
    case ErrorCode::DegenerateScale: return "DegenerateScale";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::UnknownToken: return "UnknownToken";
    case ErrorCode::ZeroMass: return "ZeroMass";
    case ErrorCode::ZeroMatrix: return "ZeroMatrix";
    case ErrorCode::GammaOutOfRange: return "GammaOutOfRange";
    case ErrorCode::BudgetExceeded: return "BudgetExceeded";
    case ErrorCode::SingularP: return "SingularP";
    case ErrorCode::IndivisibleSteps: return "IndivisibleSteps";
    case ErrorCode::RoundNotTraced: return "RoundNotTraced";
    case ErrorCode::ZeroColumnSums: return "ZeroColumnSums";
    case ErrorCode::ComplexityLimitExceeded: return "ComplexityLimitExceeded";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure in the library is reported as an Error carrying a code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace lmo
