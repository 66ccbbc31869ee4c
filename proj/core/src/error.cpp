#include "utraj/error.hpp"

namespace utraj {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::SingularInnovationCovariance: return "SingularInnovationCovariance";
    case ErrorCode::AgentsCoincident: return "AgentsCoincident";
    case ErrorCode::MissingRadiusEntry: return "MissingRadiusEntry";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::HorizonMismatch: return "HorizonMismatch";
    case ErrorCode::EmptyTestSet: return "EmptyTestSet";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::DuplicateObservation: return "DuplicateObservation";
    case ErrorCode::NonMonotoneFrames: return "NonMonotoneFrames";
    case ErrorCode::EmptyScene: return "EmptyScene";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::BackwardReplay: return "BackwardReplay";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace utraj
