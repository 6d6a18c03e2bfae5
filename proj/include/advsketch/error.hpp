#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace advsketch {

enum class ErrorCode {
  DegenerateResidual,
  NoConvergence,
  RankDeficient,
  FullRank,
  BoundViolated,
  TooManyRows,
  LengthBoundUnachieved,
  DependentInput,
  DegenerateLattice,
  NonPositiveVariance,
  VarianceTooSmall,
  DimensionMismatch,
  BadParams,
  OracleFailure,
  NoExploitFound,
  NoPositives,
  TooFewSamples,
  PreconditionUnmet,
  DimensionTooLarge,
  BadConfig,
  Io,
};

inline std::string_view to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::DegenerateResidual: return "DegenerateResidual";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::FullRank: return "FullRank";
    case ErrorCode::BoundViolated: return "BoundViolated";
    case ErrorCode::TooManyRows: return "TooManyRows";
    case ErrorCode::LengthBoundUnachieved: return "LengthBoundUnachieved";
    case ErrorCode::DependentInput: return "DependentInput";
    case ErrorCode::DegenerateLattice: return "DegenerateLattice";
    case ErrorCode::NonPositiveVariance: return "NonPositiveVariance";
    case ErrorCode::VarianceTooSmall: return "VarianceTooSmall";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::BadParams: return "BadParams";
    case ErrorCode::OracleFailure: return "OracleFailure";
    case ErrorCode::NoExploitFound: return "NoExploitFound";
    case ErrorCode::NoPositives: return "NoPositives";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::PreconditionUnmet: return "PreconditionUnmet";
    case ErrorCode::DimensionTooLarge: return "DimensionTooLarge";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

// Every failure in the library surfaces as this type; callers switch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Carries the best value reached when a length bound could not be met.
class LengthBoundError : public Error {
 public:
  LengthBoundError(const std::string& what, double best, double bound)
      : Error(ErrorCode::LengthBoundUnachieved, what), best_(best), bound_(bound) {}
  double best_length() const noexcept { return best_; }
  double bound() const noexcept { return bound_; }

 private:
  double best_;
  double bound_;
};

[[noreturn]] inline void fail(ErrorCode c, const std::string& what) { throw Error(c, what); }

inline void require(bool cond, ErrorCode c, const std::string& what) {
  if (!cond) fail(c, what);
}

}  // namespace advsketch
