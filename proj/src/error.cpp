#include "dyn4d/error.hpp"

namespace dyn4d {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DegeneratePose: return "DegeneratePose";
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::InfeasibleConfig: return "InfeasibleConfig";
    case ErrorCode::EmptyObservation: return "EmptyObservation";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::CheiralityAmbiguous: return "CheiralityAmbiguous";
    case ErrorCode::ParallelRays: return "ParallelRays";
    case ErrorCode::NotEnoughInliers: return "NotEnoughInliers";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyValidSet: return "EmptyValidSet";
    case ErrorCode::DegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyCloud: return "EmptyCloud";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::AssociationFailure: return "AssociationFailure";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace dyn4d
