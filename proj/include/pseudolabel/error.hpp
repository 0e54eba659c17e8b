#pragma once

#include <stdexcept>
#include <string>

namespace pseudolabel {

enum class ErrorCode {
  DegenerateHeading,
  InsufficientModels,
  CorrespondenceMismatch,
  DimensionMismatch,
  EmptyResult,
  EmptyTarget,
  EmptyCloud,
  TooShort,
  NoValidYaw,
  Degenerate,
  DegenerateSegment,
  NoSignal,
  ConfigInvalid,
  NoGroundTruth,
  InputMissing,
  CalibrationInvalid,
  ParseError,
  FormatError,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegenerateHeading: return "DegenerateHeading";
    case ErrorCode::InsufficientModels: return "InsufficientModels";
    case ErrorCode::CorrespondenceMismatch: return "CorrespondenceMismatch";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptyResult: return "EmptyResult";
    case ErrorCode::EmptyTarget: return "EmptyTarget";
    case ErrorCode::EmptyCloud: return "EmptyCloud";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::NoValidYaw: return "NoValidYaw";
    case ErrorCode::Degenerate: return "Degenerate";
    case ErrorCode::DegenerateSegment: return "DegenerateSegment";
    case ErrorCode::NoSignal: return "NoSignal";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::NoGroundTruth: return "NoGroundTruth";
    case ErrorCode::InputMissing: return "InputMissing";
    case ErrorCode::CalibrationInvalid: return "CalibrationInvalid";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::FormatError: return "FormatError";
  }
  return "Unknown";
}

// All library failures are reported through this type; code() lets callers
// branch on recoverable signals such as EmptyResult or NoSignal.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace pseudolabel
