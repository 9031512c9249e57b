#include "mtk/error.hpp"

namespace mtk {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegenerateGram: return "DegenerateGram";
    case ErrorCode::SingularUpdate: return "SingularUpdate";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::MissingFeatures: return "MissingFeatures";
    case ErrorCode::UnknownKey: return "UnknownKey";
    case ErrorCode::UnknownTask: return "UnknownTask";
    case ErrorCode::NonPositiveWeight: return "NonPositiveWeight";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::MalformedFrame: return "MalformedFrame";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::Unauthorized: return "Unauthorized";
    case ErrorCode::Transport: return "Transport";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace mtk
