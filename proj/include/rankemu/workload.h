// Copyright 2026 The rankemu Authors.
// SPDX-License-Identifier: Apache-2.0

// Synthetic training workloads: parallel layouts, communication groups, cost
// model and per-rank step programs following the 1F1B pipeline schedule.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "rankemu/trace_graph.h"
#include "rankemu/types.h"

namespace rankemu {

struct ParallelismSpec {
  std::uint32_t tp = 1;
  std::uint32_t pp = 1;
  std::uint32_t vpp = 0;  // 0 or 1: no interleaving
  std::uint32_t ep = 1;
  std::uint32_t dp = 1;
  std::uint32_t ga = 1;

  std::uint32_t world() const { return tp * pp * dp; }
  std::uint32_t chunks() const { return vpp > 1 ? vpp : 1; }
  // Expert groups live inside the DP dimension; when ep does not divide dp
  // the largest common divisor is used.
  std::uint32_t ep_effective() const;
  // Throws kInvalidSpec / kGaTooSmall.
  void check() const;
  // "tp=2,pp=4,vpp=2,ep=8,dp=2,ga=16"
  std::string to_string() const;
};

struct RankCoord {
  std::uint32_t tp = 0;
  std::uint32_t pp = 0;
  std::uint32_t dp = 0;
};

// TP index varies fastest, then PP, then DP.
RankCoord coord_of(const ParallelismSpec& spec, RankId rank);
RankId rank_of(const ParallelismSpec& spec, const RankCoord& c);

enum class GroupRole { kTensor, kPipeline, kData, kExpert };

std::string_view to_string(GroupRole role);
std::optional<GroupRole> parse_group_role(std::string_view text);

struct CommGroup {
  GroupId id = 0;
  GroupRole role = GroupRole::kTensor;
  std::vector<RankId> members;  // ring / chain order

  bool contains(RankId rank) const;
  // Position of `rank` in members; throws kInvalidArgument if absent.
  std::size_t position(RankId rank) const;
};

class CommGroups {
 public:
  CommGroups() = default;
  explicit CommGroups(std::uint32_t world) : world_(world), by_role_(4, std::vector<GroupId>(world, kNone)) {}

  void add(CommGroup group);
  std::uint32_t world() const { return world_; }
  std::size_t size() const { return groups_.size(); }
  const std::vector<CommGroup>& groups() const { return groups_; }
  const CommGroup& at(GroupId id) const;
  // Group of the given role containing `rank`.
  const CommGroup& of(GroupRole role, RankId rank) const;

 private:
  static constexpr GroupId kNone = static_cast<GroupId>(-1);
  std::uint32_t world_ = 0;
  std::vector<CommGroup> groups_;
  std::map<GroupId, std::size_t> index_;
  std::vector<std::vector<GroupId>> by_role_;
};

CommGroups build_groups(const ParallelismSpec& spec);

std::string serialize_groups(const CommGroups& groups);
CommGroups parse_groups(std::string_view text);

// ---- Cost model -----------------------------------------------------------

struct CostModel {
  Nanos compute_ns = 10'000'000;
  Nanos p2p_ns = 1'000'000;
  Nanos collective_latency_ns = 500'000;
  std::uint64_t bytes_per_us = 25'000;  // 25 GB/s

  // Replaces the duration of every node whose label (compute label or comm
  // tag) matches. "label@mb" keys take precedence for compute spans.
  std::map<std::string, Nanos> label_overrides;
  // Multiplies the compute durations of one rank (fault injection).
  std::map<RankId, double> compute_scale;

  std::uint64_t activation_bytes = 256ull << 20;  // per microbatch and chunk
  std::uint64_t tp_bytes = 32ull << 20;
  std::uint64_t pp_bytes = 16ull << 20;
  std::uint64_t ep_bytes = 64ull << 20;
  std::uint64_t dp_bytes = 1ull << 30;
  std::uint64_t splits_bytes = 4096;
  std::uint64_t samples_bytes = 16384;
  std::uint64_t status_bytes = 8;
  bool count_comm_buffers = true;

  Nanos swap_out_ns = 2'000'000'000;
  Nanos swap_in_ns = 2'000'000'000;

  std::uint32_t payload_elems = 8;
  std::uint32_t vocab = 1000;

  Nanos compute_duration(RankId rank, std::string_view label,
                         std::optional<std::uint32_t> microbatch) const;
  Nanos comm_duration(const CommDescriptor& d, std::string_view tag) const;
  Nanos node_duration(const GraphNode& node) const;
};

// ---- Presets --------------------------------------------------------------

struct ModelPreset {
  std::string name;
  std::uint32_t layers = 0;
  std::uint32_t heads = 0;
  std::uint32_t experts = 0;
  std::uint32_t top_k = 0;
  double total_params_b = 0;
  double active_params_b = 0;
};

// "M1", "M2", "M3". Throws kUnknownPreset.
ModelPreset model_preset(std::string_view name);
// "S.A" .. "S.D" with dp = world / (tp * pp). world 0 keeps dp = 1.
ParallelismSpec strategy_preset(std::string_view name, std::uint32_t world = 0);

struct Preset {
  ParallelismSpec spec;
  CostModel cost;
};

// "S.A", or "M1/S.A" to shape the cost model by the model structure.
Preset preset(std::string_view name, std::uint32_t world = 0);

// ---- Programs -------------------------------------------------------------

struct ComputeStep {
  std::string label;
  std::optional<std::uint32_t> microbatch;
  std::uint64_t alloc_bytes = 0;  // allocated when the step starts
  std::uint64_t free_bytes = 0;   // released when the step ends

  bool operator==(const ComputeStep&) const = default;
};

enum class ValueCheck { kNone, kStatusOk, kIndicesBelow };

struct CommunicateStep {
  CommDescriptor descriptor;
  std::string tag;
  // Identifies the occurrence within its group; equal on every participant.
  std::string key;
  std::uint64_t local_bytes = 0;  // this rank's buffer size
  std::uint32_t payload_elems = 0;
  std::optional<RankId> peer;  // send/recv only
  ValueCheck check = ValueCheck::kNone;
  std::uint32_t check_bound = 0;

  bool operator==(const CommunicateStep&) const = default;
};

using Step = std::variant<ComputeStep, CommunicateStep>;

struct RankProgram {
  RankId rank = 0;
  std::vector<Step> steps;
};

std::string_view step_label(const Step& step);
Nanos step_duration(const CostModel& cost, RankId rank, const Step& step);

// Participants of a communicate step on `rank`: the group members, or the
// two endpoints of a send/receive.
std::vector<RankId> participants(const CommGroups& groups, RankId rank,
                                 const CommunicateStep& step);

// Balance ratios per (gating event, EP index) scaling all-to-all buffers.
struct BrSchedule;

// Programs for every rank, indexed by rank.
std::vector<RankProgram> build_programs(const ParallelismSpec& spec,
                                        const CostModel& cost,
                                        const BrSchedule* br = nullptr);

// Compute order of one pipeline stage as (forward?, microbatch, chunk).
struct PipelineSlot {
  bool forward = true;
  std::uint32_t microbatch = 0;
  std::uint32_t chunk = 0;
  bool operator==(const PipelineSlot&) const = default;
};
std::vector<PipelineSlot> stage_schedule(const ParallelismSpec& spec, std::uint32_t stage);

std::string serialize_programs(std::span<const RankProgram> programs, std::uint32_t world);
std::vector<RankProgram> parse_programs(std::string_view text);

// ---- Memory ---------------------------------------------------------------

struct MemoryTimeline {
  std::vector<std::pair<Nanos, std::int64_t>> points;  // (time, allocated bytes)
  std::int64_t peak = 0;
};

// Allocation timeline of one program given per-step start/duration.
MemoryTimeline memory_timeline(const RankProgram& program, std::span<const Nanos> starts,
                               std::span<const Nanos> durations, const CostModel& cost);

}  // namespace rankemu
