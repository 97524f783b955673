#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace eots {

enum class ErrorCode {
  kInvalidPartition,
  kShapeMismatch,
  kInvalidArgument,
  kNonFinite,
  kNumerical,
  kIo,
  kBadMagic,
  kUnsupportedVersion,
  kBadDtype,
  kTruncated,
  kTrailingBytes,
  kManifestMissing,
  kManifestInvalid,
  kManifestInconsistent,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidPartition: return "invalid-partition";
    case ErrorCode::kShapeMismatch: return "shape-mismatch";
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kNonFinite: return "non-finite";
    case ErrorCode::kNumerical: return "numerical";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kBadMagic: return "bad-magic";
    case ErrorCode::kUnsupportedVersion: return "unsupported-version";
    case ErrorCode::kBadDtype: return "bad-dtype";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kTrailingBytes: return "trailing-bytes";
    case ErrorCode::kManifestMissing: return "manifest-missing";
    case ErrorCode::kManifestInvalid: return "manifest-invalid";
    case ErrorCode::kManifestInconsistent: return "manifest-inconsistent";
  }
  return "unknown";
}

/// Numerical failures (non-finite intermediates, diverging loops) map to CLI
/// exit code 1; everything else is a usage or validation failure (exit 2).
inline bool is_numerical(ErrorCode code) {
  return code == ErrorCode::kNonFinite || code == ErrorCode::kNumerical;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

namespace detail {

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace detail
}  // namespace eots
