// Copyright 2026 The rankemu Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rankemu {

// Every failure surfaced by the library carries one of these codes so callers
// (the CLI in particular) can map them onto exit statuses without string
// matching.
enum class ErrorCode {
  kMalformedRecord,
  kUnknownVersion,
  kDanglingEdge,
  kCyclicGraph,
  kMissingDuration,
  kNotCalibrated,
  kRemapConflict,
  kInvalidSpec,
  kGaTooSmall,
  kUnknownPreset,
  kDeadlock,
  kStoreOverflow,
  kShapeMismatch,
  kUnknownParticipant,
  kValueCheckFailed,
  kInvalidSize,
  kNonContiguousSandbox,
  kMissingContribution,
  kPlanMismatch,
  kPreconditionViolated,
  kGraphProgramMismatch,
  kPoolOverflow,
  kUnknownLabel,
  kUnknownRank,
  kInvalidArgument,
  kInfeasibleProfile,
  kInfeasibleCounts,
  kConfigError,
  kIoError,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  ErrorCode code() const { return code_; }
  // Message without the code name prefix.
  const std::string& detail() const { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace rankemu
