#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cudml {

enum class ErrorCode {
  MissingColumn,
  ParseError,
  InvalidTreatment,
  InvalidDataset,
  InvalidK,
  EmptyResult,
  SingleClass,
  TooFewRows,
  DimensionMismatch,
  InvalidParams,
  PropensityOutOfRange,
  NoControls,
  NoTreated,
  OutOfRange,
  DegenerateFold,
  ZeroWeightSum,
  TooFewScores,
  EmptyInput,
  DimensionTooSmall,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InvalidTreatment: return "InvalidTreatment";
    case ErrorCode::InvalidDataset: return "InvalidDataset";
    case ErrorCode::InvalidK: return "InvalidK";
    case ErrorCode::EmptyResult: return "EmptyResult";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::TooFewRows: return "TooFewRows";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::PropensityOutOfRange: return "PropensityOutOfRange";
    case ErrorCode::NoControls: return "NoControls";
    case ErrorCode::NoTreated: return "NoTreated";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::DegenerateFold: return "DegenerateFold";
    case ErrorCode::ZeroWeightSum: return "ZeroWeightSum";
    case ErrorCode::TooFewScores: return "TooFewScores";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::DimensionTooSmall: return "DimensionTooSmall";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

// All library failures surface as this exception; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace cudml
