// Copyright 2026 The rankemu Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "rankemu/types.h"

namespace rankemu {

struct ComputeSpan {
  std::string label;
  std::optional<std::uint32_t> microbatch;

  bool operator==(const ComputeSpan&) const = default;
};

struct CommEvent {
  CommDescriptor descriptor;
  // Free-form name of the call site ("pp_act", "dp_grads", ...). Used as the
  // node label for what-if overrides and by injection rules.
  std::string tag;

  bool operator==(const CommEvent&) const = default;
};

using NodeOp = std::variant<ComputeSpan, CommEvent>;

struct GraphNode {
  NodeId id = 0;
  RankId rank = 0;
  NodeOp op;
  std::optional<Nanos> duration;
  std::optional<Nanos> start;

  bool is_comm() const { return std::holds_alternative<CommEvent>(op); }
  const ComputeSpan* compute() const { return std::get_if<ComputeSpan>(&op); }
  const CommEvent* comm() const { return std::get_if<CommEvent>(&op); }
  // Compute label, or the comm tag (falling back to the kind name).
  std::string_view label() const;
};

enum class EdgeKind { kDirectional, kSynchronization };

struct DependencyEdge {
  NodeId src = 0;
  NodeId dst = 0;
  EdgeKind kind = EdgeKind::kDirectional;
  SyncGroupId sync = 0;  // meaningful for synchronization edges only

  bool operator==(const DependencyEdge&) const = default;
};

// The execution graph: per-rank ordered compute spans and communication
// events, joined by directional edges (one node must finish before the next
// begins) and synchronization edges (all members of a collective occurrence
// start together).
class ExecutionGraph {
 public:
  ExecutionGraph() = default;
  explicit ExecutionGraph(std::uint32_t world_size, std::string spec_ref = {});

  std::uint32_t world_size() const { return world_size_; }
  const std::string& spec_ref() const { return spec_ref_; }
  void set_spec_ref(std::string ref) { spec_ref_ = std::move(ref); }

  // Appends the node at the end of its rank's order. Throws on a duplicate id
  // or an out-of-range rank.
  void add_node(GraphNode node);
  void add_edge(const DependencyEdge& edge);
  // Chains the members (sorted by id) with synchronization edges.
  void add_sync_group(SyncGroupId sync, std::vector<NodeId> members);
  // Adds directional edges between consecutive nodes of every rank.
  void link_rank_chains();

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  const std::vector<GraphNode>& nodes() const { return nodes_; }
  const std::vector<DependencyEdge>& edges() const { return edges_; }
  const std::vector<NodeId>& rank_order(RankId rank) const;

  bool contains(NodeId id) const { return index_.count(id) != 0; }
  std::size_t index_of(NodeId id) const;
  const GraphNode& node(NodeId id) const { return nodes_[index_of(id)]; }
  GraphNode& mutable_node(NodeId id) { return nodes_[index_of(id)]; }

  // Members of every synchronization group, each list sorted by node id.
  std::map<SyncGroupId, std::vector<NodeId>> sync_groups() const;

  bool has_all_durations() const;
  bool has_all_starts() const;

 private:
  std::uint32_t world_size_ = 0;
  std::string spec_ref_;
  std::vector<GraphNode> nodes_;
  std::vector<DependencyEdge> edges_;
  std::vector<std::vector<NodeId>> rank_order_;
  std::unordered_map<NodeId, std::size_t> index_;
};

// ---- Serialized form ------------------------------------------------------

ExecutionGraph parse_graph(std::string_view text);
std::string serialize_graph(const ExecutionGraph& graph);

// ---- Validation -----------------------------------------------------------

enum class Rule {
  kRankOutOfRange,
  kBadDescriptor,
  kBadLabel,
  kTimingInconsistent,
  kDanglingEdge,
  kCycleDetected,
  kRankOrderBroken,
  kSyncOnCompute,
  kNodeInTwoSyncGroups,
  kSyncDescriptorMismatch,
  kSyncRankDuplicate,
  kDependencyViolated,
  kSyncStartMismatch,
};

std::string_view to_string(Rule rule);

struct Violation {
  Rule rule;
  std::string where;  // "node 12" or "edge 3->4"
  std::string detail;
};

std::vector<Violation> validate(const ExecutionGraph& graph);

// ---- Scheduling queries ---------------------------------------------------

// Node ids ordered so that every edge points forward. Collective members are
// emitted together; ties are broken by the smallest node id. Throws
// kCyclicGraph.
std::vector<NodeId> topo_order(const ExecutionGraph& graph);

// As-soon-as-possible start times for the given per-node-index durations.
// `critical_pred[i]` is the index of the node whose completion fixed node i's
// start (or kNoPred when it starts at zero).
struct AsapSchedule {
  static constexpr std::size_t kNoPred = static_cast<std::size_t>(-1);
  std::vector<Nanos> start;
  std::vector<std::size_t> critical_pred;
};

AsapSchedule compute_asap(const ExecutionGraph& graph,
                          std::span<const Nanos> durations);

struct CriticalPath {
  std::vector<NodeId> path;
  Nanos length = 0;
};

// Longest dependency chain of a timed graph. Throws kMissingDuration.
CriticalPath critical_path(const ExecutionGraph& graph);

// ---- DP replication -------------------------------------------------------

// Describes how a one-replica template is copied `replicas` times. Template
// ranks [0, replica_size) become r + d * replica_size in replica d; `group`
// maps a template group id to the group used by replica d. Collective
// occurrences whose copies land in the same group merge into one
// synchronization group.
struct ReplicaRemap {
  std::uint32_t replicas = 1;
  std::uint32_t replica_size = 0;
  std::function<GroupId(GroupId, std::uint32_t)> group;
};

ExecutionGraph expand_dp(const ExecutionGraph& tmpl, const ReplicaRemap& remap);

// ---- Canonical form -------------------------------------------------------

// Renumbers nodes by (rank, per-rank position) and synchronization groups by
// first appearance in that order.
ExecutionGraph canonicalize(const ExecutionGraph& graph);

// Rank-preserving isomorphism. Timing fields are ignored unless
// `compare_timing` is set.
bool isomorphic(const ExecutionGraph& a, const ExecutionGraph& b,
                bool compare_timing = false);

ExecutionGraph strip_timing(const ExecutionGraph& graph);

}  // namespace rankemu
