#include "hybridpipe/errors.hpp"

namespace hybridpipe {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonDivisibleBatch: return "NonDivisibleBatch";
    case ErrorCode::NonDivisibleShard: return "NonDivisibleShard";
    case ErrorCode::NonDivisibleLayers: return "NonDivisibleLayers";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::BadCheckpointInterval: return "BadCheckpointInterval";
    case ErrorCode::InvalidValue: return "InvalidValue";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UnknownMicrobatch: return "UnknownMicrobatch";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::InvalidRoute: return "InvalidRoute";
    case ErrorCode::Starvation: return "Starvation";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ConfigParse: return "ConfigParse";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace hybridpipe
