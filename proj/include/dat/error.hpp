// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dat {

/// Failure categories surfaced to callers and, through the CLI, as the
/// "error" field of the machine-readable error document.
enum class ErrorCode {
  kInvalidArgument,
  kValidation,
  kInputNotFound,
  kParse,
  kUnknownImage,
  kUnknownCategory,
  kZeroArea,
  kDegenerate,
  kShapeMismatch,
  kAlignmentMismatch,
  kNonFinite,
  kBadMagic,
  kVersionMismatch,
  kTruncatedPayload,
  kIdCountMismatch,
  kDigestMismatch,
  kIo,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace dat
