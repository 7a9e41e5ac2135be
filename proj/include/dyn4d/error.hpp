#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dyn4d {

enum class ErrorCode {
  InvalidArgument,
  DegeneratePose,
  BehindCamera,
  InfeasibleConfig,
  EmptyObservation,
  DegenerateConfiguration,
  CheiralityAmbiguous,
  ParallelRays,
  NotEnoughInliers,
  ShapeMismatch,
  EmptyValidSet,
  DegenerateGeometry,
  LengthMismatch,
  EmptyCloud,
  ParseError,
  AssociationFailure,
  ConfigError,
  IoError,
};

std::string_view to_string(ErrorCode code) noexcept;

// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace dyn4d
