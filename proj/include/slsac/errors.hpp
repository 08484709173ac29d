#pragma once

#include <stdexcept>
#include <string>

namespace slsac {

/// Failure categories surfaced by the toolkit. The CLI maps them to exit codes.
enum class ErrorKind {
  DimensionMismatch,
  DimensionTooLarge,
  Unbounded,
  Empty,
  UnsupportedNorm,
  UnsupportedNormForDim,
  NumericalBreakdown,
  NonSquare,
  NonPositiveLambda,
  InsufficientHistory,
  UnknownNode,
  AssumptionViolation,
  InfeasibleAtStart,
  RecursiveFeasibilityViolation,
  DisturbanceBoundViolated,
  CausalityViolation,
  Config,
  CorruptTrace,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::DimensionTooLarge: return "DimensionTooLarge";
    case ErrorKind::Unbounded: return "Unbounded";
    case ErrorKind::Empty: return "Empty";
    case ErrorKind::UnsupportedNorm: return "UnsupportedNorm";
    case ErrorKind::UnsupportedNormForDim: return "UnsupportedNormForDim";
    case ErrorKind::NumericalBreakdown: return "NumericalBreakdown";
    case ErrorKind::NonSquare: return "NonSquare";
    case ErrorKind::NonPositiveLambda: return "NonPositiveLambda";
    case ErrorKind::InsufficientHistory: return "InsufficientHistory";
    case ErrorKind::UnknownNode: return "UnknownNode";
    case ErrorKind::AssumptionViolation: return "AssumptionViolation";
    case ErrorKind::InfeasibleAtStart: return "InfeasibleAtStart";
    case ErrorKind::RecursiveFeasibilityViolation: return "RecursiveFeasibilityViolation";
    case ErrorKind::DisturbanceBoundViolated: return "DisturbanceBoundViolated";
    case ErrorKind::CausalityViolation: return "CausalityViolation";
    case ErrorKind::Config: return "Config";
    case ErrorKind::CorruptTrace: return "CorruptTrace";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace slsac
