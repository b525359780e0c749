// Copyright 2026 The rankemu Authors.
// SPDX-License-Identifier: Apache-2.0

// Hybrid emulation: sandbox ranks execute their programs under the cost model
// while the virtual ranks they talk to walk the calibrated graph. Also hosts
// the full-concurrency simulation used as the oracle for calibration and
// emulation.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rankemu/coordinator.h"
#include "rankemu/trace_graph.h"
#include "rankemu/workload.h"

namespace rankemu {

// ---- Full simulation --------------------------------------------------------------

struct FullSimulation {
  std::vector<std::vector<Nanos>> start;     // [rank][step]
  std::vector<std::vector<Nanos>> duration;  // [rank][step]
  std::vector<MemoryTimeline> memory;        // per rank
  Nanos makespan = 0;
};

// Every rank executes its program; a collective starts once all of its
// participants reached it. Throws kDeadlock.
FullSimulation simulate_full(std::span<const RankProgram> programs, const CommGroups& groups,
                             const CostModel& cost);

// ---- Emulation ----------------------------------------------------------------------

struct PoolConfig {
  std::uint64_t gpu_capacity = UINT64_MAX;
  std::uint64_t cpu_capacity = UINT64_MAX;
  std::uint32_t prefetch_depth = 4;
};

struct PoolStats {
  std::uint64_t staged_bytes = 0;       // CPU pool contents for the run
  std::uint64_t prefetches = 0;
  std::uint64_t demand_loads = 0;
  std::uint64_t consumed = 0;
  std::uint64_t evictions = 0;
  std::uint64_t max_resident_bytes = 0;
};

struct EmulationSetup {
  std::vector<RankId> sandbox;
  std::span<const RankProgram> programs;  // indexed by rank
  const CommGroups* groups = nullptr;
  CostModel cost;
  PoolConfig pool;
  std::span<const OccurrenceRecord> records;  // optional numeric reference
  bool skip_transfers = true;
};

struct NodeTiming {
  NodeId id = 0;
  RankId rank = 0;
  std::string label;
  Nanos start = 0;
  Nanos duration = 0;
  bool emulated = false;  // advanced by the event loop (participating rank)
};

struct EmulationReport {
  Nanos iteration_time = 0;
  std::vector<RankId> sandbox;
  std::vector<RankId> active_virtual;
  std::map<RankId, std::int64_t> peak_memory;  // sandbox ranks
  std::map<RankId, MemoryTimeline> memory;
  std::vector<NodeTiming> nodes;
  std::size_t nodes_visited = 0;
  std::uint64_t bytes_moved = 0;
  std::uint64_t pruned_collectives = 0;
  std::uint64_t skipped_transfers = 0;
  std::uint64_t numeric_checks = 0;
  std::uint64_t numeric_mismatches = 0;
  PoolStats pool;
  std::optional<Nanos> makespan_delta;  // set by fault_inject
};

// Throws kNotCalibrated, kUnknownRank, kGraphProgramMismatch, kPoolOverflow.
EmulationReport emulate(const ExecutionGraph& calibrated, const EmulationSetup& setup);

// Replaces the duration of every node carrying one of the labels (compute
// label or comm tag), recalibrates and emulates. Throws kUnknownLabel.
EmulationReport what_if(const ExecutionGraph& calibrated, const EmulationSetup& setup,
                        const std::map<std::string, Nanos>& overrides);

// Slows every compute span of `rank` by `factor`, recalibrates and emulates;
// makespan_delta is relative to the unmodified emulation.
EmulationReport fault_inject(const ExecutionGraph& calibrated, const EmulationSetup& setup, RankId rank,
                             double factor);

// ---- Export ---------------------------------------------------------------------------

// Trace-event JSON: one complete event per node, microsecond timestamps,
// one process per rank.
std::string export_chrome_trace(const EmulationReport& report);

std::string format_report(const EmulationReport& report);
std::string timings_csv(const EmulationReport& report);

}  // namespace rankemu
