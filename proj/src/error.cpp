#include "triseg/error.hpp"

namespace triseg {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingModality: return "MissingModality";
    case ErrorCode::GeometryMismatch: return "GeometryMismatch";
    case ErrorCode::CorruptVolume: return "CorruptVolume";
    case ErrorCode::InvalidLabel: return "InvalidLabel";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::EmptyBrain: return "EmptyBrain";
    case ErrorCode::CropTooLarge: return "CropTooLarge";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::NumericalDivergence: return "NumericalDivergence";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::MissingModel: return "MissingModel";
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::InsufficientData: return "InsufficientData";
  }
  return "Unknown";
}

}  // namespace triseg
