// Copyright 2026 The rankemu Authors.
// SPDX-License-Identifier: Apache-2.0

// Reference collectives and the pruned variants used when only a sandbox
// block of a communication group runs for real: the boundary virtual rank
// injects compensation values so that sandbox results stay exact.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rankemu/types.h"
#include "rankemu/workload.h"

namespace rankemu {

using Vec = std::vector<double>;

// Elementwise reduction of all contributions, returned once per rank.
std::vector<Vec> full_allreduce_oracle(std::span<const Vec> contributions, ReduceOp op);

// Chunk i of a length-n buffer split into k chunks: [i*n/k, (i+1)*n/k).
std::pair<std::size_t, std::size_t> chunk_range(std::size_t n, std::size_t k, std::size_t i);

// ---- Ring -------------------------------------------------------------------

// Member at position i owns chunk i. The reduction of chunk i starts at
// position i+1 and ends at its owner.
struct RingTopology {
  std::vector<RankId> members;
  std::size_t size() const { return members.size(); }
};

// Full ring all-reduce, accumulating each chunk in ring order.
std::vector<Vec> ring_allreduce(std::span<const Vec> contributions, ReduceOp op);

struct ChunkSpec {
  bool compensated = false;  // false: any value will do
  Vec value;
};

struct PruningPlan {
  AlgorithmHint algorithm = AlgorithmHint::kRing;
  std::vector<RankId> members;
  std::vector<std::size_t> sandbox;     // member positions, in block order
  std::vector<std::size_t> neighbors;   // active virtual positions
  std::optional<std::size_t> injector;  // position of the injecting virtual rank
  bool pass_through = false;            // sandbox covers the whole group

  // Tree plans only.
  enum class Role { kNone, kRoot, kLeaf, kIntermediate };
  Role role = Role::kNone;

  std::string describe() const;
};

std::string_view to_string(PruningPlan::Role role);

// Sandbox ranks must form one contiguous block of the ring (wrapping allowed).
// Throws kNonContiguousSandbox / kInvalidArgument.
PruningPlan plan_ring_pruning(const RingTopology& ring, std::span<const RankId> sandbox);

// Values the injector sends during the reduce phase (per chunk) and, for
// chunks not owned inside the sandbox, the final values it forwards during
// the broadcast phase.
struct Injection {
  std::vector<ChunkSpec> reduce;
  std::map<std::size_t, Vec> broadcast;  // chunk -> final value
};

// `contributions` are indexed by member position. Throws kMissingContribution
// when a contribution is absent (empty while others are not) or shapes differ.
Injection compensation_values(const PruningPlan& plan, std::span<const Vec> contributions, ReduceOp op);

// Runs the reduce and broadcast rounds over the active ranks only. Inputs
// from virtual ranks other than the injector are never read. Returns results
// keyed by sandbox member position. Throws kPlanMismatch.
std::map<std::size_t, Vec> pruned_ring_allreduce(const PruningPlan& plan, const Injection& injection,
                                                 std::span<const Vec> contributions, ReduceOp op);

// Reduce round only: each sandbox rank's owned chunk.
std::map<std::size_t, Vec> pruned_ring_reduce_phase(const PruningPlan& plan, const Injection& injection,
                                                    std::span<const Vec> contributions, ReduceOp op);

// ---- Tree -------------------------------------------------------------------

// Binary tree over inter-node proxies in heap layout (node 0 is the root,
// children of i are 2i+1 and 2i+2). Each node carries the contributions of
// the ranks behind it.
struct TreeTopology {
  std::size_t nodes = 0;
  std::size_t sandbox_node = 0;
  std::optional<std::size_t> parent(std::size_t i) const;
  std::vector<std::size_t> children(std::size_t i) const;
};

PruningPlan::Role tree_role(const TreeTopology& tree, std::size_t node);

struct TreePlan {
  PruningPlan::Role role = PruningPlan::Role::kNone;
  std::optional<std::size_t> parent;   // sends data_full down (leaf, intermediate)
  std::vector<std::size_t> children;   // children[0] injects for a root
  std::optional<std::size_t> injector;
  bool pass_through = false;
};

TreePlan plan_tree_pruning(const TreeTopology& tree);

// Per-node contributions: node_contributions[n] holds one vector per rank
// behind node n. Returns one result per sandbox-internal rank.
std::vector<Vec> pruned_tree_allreduce(const TreeTopology& tree, const TreePlan& plan,
                                       std::span<const std::vector<Vec>> node_contributions, ReduceOp op,
                                       std::optional<Vec> any_value = std::nullopt);

// ---- Decomposition ----------------------------------------------------------

enum class Phase { kReduce, kBroadcast, kDirectExchange };
std::vector<Phase> decompose(CommKind kind);
std::string_view to_string(Phase phase);

// ---- Group instantiation ------------------------------------------------------

struct InstantiationPlan {
  std::vector<GroupId> active_groups;
  std::vector<RankId> active_virtual;
  std::map<GroupId, std::uint32_t> proxy_count;  // barrier arrivals proxied per group
  std::optional<RankId> leader;
  std::size_t total_groups = 0;

  double reduction_factor() const;
};

// Topology used for neighbour selection: tensor/data groups follow `hint`,
// pipeline groups are chains, expert groups exchange with every member.
InstantiationPlan plan_instantiation(const CommGroups& groups, std::span<const RankId> sandbox,
                                     AlgorithmHint hint = AlgorithmHint::kRing);

// ---- Skip transfer ----------------------------------------------------------

struct CompletionRecord {
  std::uint64_t occurrence = 0;
  std::uint64_t bytes_moved = 0;
};

// Completion metadata for an occurrence with no sandbox participant. Throws
// kPreconditionViolated otherwise.
CompletionRecord skip_transfer(const CommDescriptor& descriptor, std::uint64_t occurrence,
                               std::span<const RankId> participants, std::span<const RankId> sandbox);

// ---- Randomized verification -------------------------------------------------

// Pruned ring and tree all-reduce compared against the unpruned reduction on
// random groups, sandboxes, operators and payloads. Integer payloads must match
// exactly; float payloads within `float_tolerance` of the summand magnitude.
struct SweepSummary {
  std::uint32_t ring_cases = 0;
  std::uint32_t ring_passed = 0;
  std::uint32_t tree_cases = 0;
  std::uint32_t tree_passed = 0;
  double max_float_error = 0;

  bool ok() const { return ring_passed == ring_cases && tree_passed == tree_cases; }
  std::string to_text() const;
};

SweepSummary pruning_sweep(std::uint32_t ring_cases, std::uint32_t tree_cases_per_role, std::uint64_t seed,
                           double float_tolerance = 1e-6);

}  // namespace rankemu
