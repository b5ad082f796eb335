#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace triseg {

enum class ErrorCode {
  MissingModality,
  GeometryMismatch,
  CorruptVolume,
  InvalidLabel,
  IoError,
  EmptyBrain,
  CropTooLarge,
  ShapeError,
  NumericalDivergence,
  ConfigError,
  MissingModel,
  InvalidInput,
  InsufficientData,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library; callers dispatch on code().
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

inline void require(bool cond, ErrorCode code, const std::string& message) {
  if (!cond) fail(code, message);
}

}  // namespace triseg
