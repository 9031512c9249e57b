#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mtk {

enum class ErrorCode {
  DegenerateGram,
  SingularUpdate,
  SingularSystem,
  MissingFeatures,
  UnknownKey,
  UnknownTask,
  NonPositiveWeight,
  InvalidArgument,
  ShapeMismatch,
  MalformedFrame,
  UnsupportedVersion,
  ChecksumMismatch,
  Unauthorized,
  Transport,
  Io,
};

std::string_view to_string(ErrorCode code);

// All library failures are reported through this type; `code()` is stable
// and is what the wire protocol transmits.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace mtk
