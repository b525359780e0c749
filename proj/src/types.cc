// Copyright 2026 The rankemu Authors.
// SPDX-License-Identifier: Apache-2.0

#include "rankemu/types.h"

#include <array>
#include <utility>

#include "rankemu/error.h"

namespace rankemu {
namespace {

constexpr std::array<std::pair<CommKind, std::string_view>, 8> kKindNames = {{
    {CommKind::kAllReduce, "allreduce"},
    {CommKind::kReduceScatter, "reducescatter"},
    {CommKind::kAllGather, "allgather"},
    {CommKind::kAllToAll, "alltoall"},
    {CommKind::kBroadcast, "broadcast"},
    {CommKind::kSend, "send"},
    {CommKind::kRecv, "recv"},
    {CommKind::kBarrier, "barrier"},
}};

}  // namespace

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedRecord: return "MalformedRecord";
    case ErrorCode::kUnknownVersion: return "UnknownVersion";
    case ErrorCode::kDanglingEdge: return "DanglingEdge";
    case ErrorCode::kCyclicGraph: return "CyclicGraph";
    case ErrorCode::kMissingDuration: return "MissingDuration";
    case ErrorCode::kNotCalibrated: return "NotCalibrated";
    case ErrorCode::kRemapConflict: return "RemapConflict";
    case ErrorCode::kInvalidSpec: return "InvalidSpec";
    case ErrorCode::kGaTooSmall: return "GaTooSmall";
    case ErrorCode::kUnknownPreset: return "UnknownPreset";
    case ErrorCode::kDeadlock: return "Deadlock";
    case ErrorCode::kStoreOverflow: return "StoreOverflow";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kUnknownParticipant: return "UnknownParticipant";
    case ErrorCode::kValueCheckFailed: return "ValueCheckFailed";
    case ErrorCode::kInvalidSize: return "InvalidSize";
    case ErrorCode::kNonContiguousSandbox: return "NonContiguousSandbox";
    case ErrorCode::kMissingContribution: return "MissingContribution";
    case ErrorCode::kPlanMismatch: return "PlanMismatch";
    case ErrorCode::kPreconditionViolated: return "PreconditionViolated";
    case ErrorCode::kGraphProgramMismatch: return "GraphProgramMismatch";
    case ErrorCode::kPoolOverflow: return "PoolOverflow";
    case ErrorCode::kUnknownLabel: return "UnknownLabel";
    case ErrorCode::kUnknownRank: return "UnknownRank";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kInfeasibleProfile: return "InfeasibleProfile";
    case ErrorCode::kInfeasibleCounts: return "InfeasibleCounts";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

std::string_view to_string(CommKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "?";
}

std::string_view to_string(ReduceOp op) {
  switch (op) {
    case ReduceOp::kSum: return "sum";
    case ReduceOp::kMax: return "max";
    case ReduceOp::kMin: return "min";
  }
  return "?";
}

std::string_view to_string(AlgorithmHint hint) {
  return hint == AlgorithmHint::kRing ? "ring" : "tree";
}

std::optional<CommKind> parse_comm_kind(std::string_view text) {
  for (const auto& [k, name] : kKindNames) {
    if (name == text) return k;
  }
  return std::nullopt;
}

std::optional<ReduceOp> parse_reduce_op(std::string_view text) {
  if (text == "sum") return ReduceOp::kSum;
  if (text == "max") return ReduceOp::kMax;
  if (text == "min") return ReduceOp::kMin;
  return std::nullopt;
}

std::optional<AlgorithmHint> parse_algorithm_hint(std::string_view text) {
  if (text == "ring") return AlgorithmHint::kRing;
  if (text == "tree") return AlgorithmHint::kTree;
  return std::nullopt;
}

bool CommDescriptor::matches(const CommDescriptor& other) const {
  if (*this == other) return true;
  if (!is_point_to_point(kind) || !is_point_to_point(other.kind)) return false;
  if (kind == other.kind) return false;
  return group == other.group && bytes == other.bytes &&
         algorithm == other.algorithm && reduce_op == other.reduce_op;
}

std::string CommDescriptor::check() const {
  if (is_reducing(kind) && !reduce_op) {
    return std::string(to_string(kind)) + " requires a reduce op";
  }
  if (!is_reducing(kind) && reduce_op) {
    return std::string(to_string(kind)) + " must not carry a reduce op";
  }
  return {};
}

}  // namespace rankemu
