// Copyright 2026 The rankemu Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace rankemu {

using RankId = std::uint32_t;
using GroupId = std::uint32_t;
using NodeId = std::uint64_t;
using SyncGroupId = std::uint64_t;

// All timing is integer nanoseconds.
using Nanos = std::int64_t;

enum class CommKind {
  kAllReduce,
  kReduceScatter,
  kAllGather,
  kAllToAll,
  kBroadcast,
  kSend,
  kRecv,
  kBarrier,
};

enum class ReduceOp { kSum, kMax, kMin };

enum class AlgorithmHint { kRing, kTree };

std::string_view to_string(CommKind kind);
std::string_view to_string(ReduceOp op);
std::string_view to_string(AlgorithmHint hint);
std::optional<CommKind> parse_comm_kind(std::string_view text);
std::optional<ReduceOp> parse_reduce_op(std::string_view text);
std::optional<AlgorithmHint> parse_algorithm_hint(std::string_view text);

inline bool is_reducing(CommKind kind) {
  return kind == CommKind::kAllReduce || kind == CommKind::kReduceScatter;
}

inline bool is_point_to_point(CommKind kind) {
  return kind == CommKind::kSend || kind == CommKind::kRecv;
}

struct CommDescriptor {
  CommKind kind = CommKind::kBarrier;
  GroupId group = 0;
  std::uint64_t bytes = 0;
  // Present iff the kind reduces.
  std::optional<ReduceOp> reduce_op;
  AlgorithmHint algorithm = AlgorithmHint::kRing;

  bool operator==(const CommDescriptor&) const = default;

  // True when two members of one synchronization group may carry these two
  // descriptors: identical, or the two halves of a send/receive pair.
  bool matches(const CommDescriptor& other) const;

  // Empty string when the descriptor is well formed.
  std::string check() const;
};

}  // namespace rankemu
