// Copyright 2026 The rankemu Authors.
// SPDX-License-Identifier: Apache-2.0

// Collects the bare execution graph by multiplexing every logical rank over a
// small number of execution slots. A rank runs until it blocks on a
// collective; blocked ranks are swapped out in favour of ranks that can make
// progress, and collectives whose participants are not all resident execute
// on the host from staged payloads.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rankemu/trace_graph.h"
#include "rankemu/workload.h"

namespace rankemu {

using Payload = std::vector<double>;

// ---- Injection rules ------------------------------------------------------------

enum class InjectionKind { kConstantStatus, kInRangeIndex, kZeroSplits };

std::string_view to_string(InjectionKind kind);
std::optional<InjectionKind> parse_injection_kind(std::string_view text);

struct InjectionRule {
  InjectionKind kind = InjectionKind::kConstantStatus;
  std::vector<CommKind> kinds;  // empty: any kind
  std::string tag;              // empty: any; trailing '*' matches a prefix
  std::vector<GroupId> groups;  // empty: any group
  std::uint32_t vocab = 1000;   // kInRangeIndex upper bound

  bool matches(const CommunicateStep& step) const;
};

// First matching rule's synthesized payload for `rank`, or nullopt.
std::optional<Payload> apply_injection(std::span<const InjectionRule> rules, const CommunicateStep& step,
                                       RankId rank, std::uint64_t seed);

// Parses one rule: "<kind> [kinds=a,b] [tag=t] [groups=1,2] [vocab=n]".
InjectionRule parse_injection_rule(std::string_view text);

// ---- Host-side collectives ------------------------------------------------------

// `payloads[i]` belongs to `members[i]`. Broadcast roots at members[0];
// all-to-all and reduce-scatter split by chunk_range. Throws kShapeMismatch.
std::vector<Payload> cpu_execute_collective(const CommDescriptor& descriptor, std::span<const RankId> members,
                                            std::span<const Payload> payloads);

// ---- Coordinator state ----------------------------------------------------------

enum class RankStatus { kRunning, kBlocked, kFrozen, kFinished };

std::string_view to_string(RankStatus status);

struct RankState {
  RankStatus status = RankStatus::kFrozen;
  std::uint32_t slot = 0;
  std::size_t pc = 0;
  std::uint32_t pending_ops = 0;
  bool head_ready = true;
  bool started = false;
};

// Candidate to take `trigger`'s slot: same slot, not finished, not resident,
// head operation ready; most pending operations, ties to the lowest rank.
std::optional<RankId> select_switch(RankId trigger, std::span<const RankState> states);

struct CollectionOptions {
  std::uint32_t n_slots = 1;
  std::vector<InjectionRule> rules;
  std::uint64_t seed = 0;
  std::uint64_t store_capacity = UINT64_MAX;
  bool allow_spill = false;
  Nanos swap_out_ns = 0;
  Nanos swap_in_ns = 0;
};

struct CollectionStats {
  std::uint64_t swap_outs = 0;
  std::uint64_t swap_ins = 0;
  Nanos swap_cost_ns = 0;
  std::uint64_t direct_executions = 0;
  std::uint64_t cpu_executions = 0;
  std::uint64_t injected_steps = 0;
  std::uint64_t occurrences = 0;
  std::uint64_t store_peak_bytes = 0;
  std::uint64_t spilled_bytes = 0;

  std::uint64_t swaps() const { return swap_outs + swap_ins; }
  std::string to_text() const;
};

struct OccurrenceRecord {
  GroupId group = 0;
  std::string key;
  CommDescriptor descriptor;
  std::vector<RankId> participants;
  bool injected = false;
  std::map<RankId, Payload> inputs;
  std::map<RankId, Payload> outputs;
};

struct CollectionResult {
  ExecutionGraph graph;  // canonical node numbering
  CollectionStats stats;
  std::vector<OccurrenceRecord> records;  // sorted by (group, key)
};

// One deterministic collection run. Programs may cover a subset of the world
// when every collective reaching a missing rank is injected.
class Coordinator {
 public:
  Coordinator(std::vector<RankProgram> programs, const CommGroups& groups, CollectionOptions options);
  ~Coordinator();

  // Runs to completion. Throws kDeadlock, kStoreOverflow,
  // kUnknownParticipant, kValueCheckFailed.
  CollectionResult run();

  // Single scheduling decision; false once every rank finished.
  bool step();

  const RankState& state(RankId rank) const { return states_.at(rank); }
  std::span<const RankState> states() const { return states_; }
  const std::vector<std::string>& log() const { return log_; }
  // Recomputes pending operations from the staged occurrences.
  std::vector<std::uint32_t> recount_pending() const;

 private:
  struct Occurrence;
  struct Arrival;

  void run_rank(RankId r);
  void activate(RankId r, std::uint32_t slot);
  void freeze(RankId r);
  bool switch_slot(std::uint32_t slot, RankId trigger);
  void execute(Occurrence& occ);
  Payload make_payload(RankId r, const CommunicateStep& step) const;
  void check_value(RankId r, const CommunicateStep& step, const Payload& out) const;
  void stage(std::uint64_t bytes);
  void unstage(std::uint64_t bytes);
  bool is_resident(RankId r) const;

  std::vector<RankProgram> programs_;  // indexed by rank; empty when absent
  std::vector<bool> has_program_;
  const CommGroups& groups_;
  CollectionOptions options_;
  std::vector<RankState> states_;
  std::vector<std::optional<RankId>> resident_;
  std::map<std::pair<GroupId, std::string>, Occurrence> occurrences_;
  std::map<RankId, std::pair<GroupId, std::string>> waiting_on_;
  std::vector<std::vector<NodeId>> nodes_;  // per rank, in program order
  ExecutionGraph graph_;
  NodeId next_node_ = 0;
  CollectionStats stats_;
  std::uint64_t store_bytes_ = 0;
  std::vector<std::string> log_;
  bool done_ = false;
};

CollectionResult run_collection(const std::vector<RankProgram>& programs, const CommGroups& groups,
                                const CollectionOptions& options);

std::string serialize_records(std::span<const OccurrenceRecord> records);
std::vector<OccurrenceRecord> parse_records(std::string_view text);

}  // namespace rankemu
