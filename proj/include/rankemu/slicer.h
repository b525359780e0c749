// Copyright 2026 The rankemu Authors.
// SPDX-License-Identifier: Apache-2.0

// Slice-by-slice timing fill and inter-slice calibration. Each slice runs a
// block of ranks for real while the rest are replayed from the bare graph;
// calibration then aligns the per-slice measurements into one consistent
// schedule.

#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "rankemu/trace_graph.h"
#include "rankemu/workload.h"

namespace rankemu {

struct Slice {
  std::uint32_t index = 0;
  std::vector<RankId> real_ranks;
  std::vector<RankId> assistant_ranks;
};

// Contiguous blocks [0, size), [size, 2 size), ...; the last may be short.
// Throws kInvalidSize.
std::vector<Slice> plan_slices(std::uint32_t world, std::uint32_t slice_size);

// Cost-model durations scaled by (1 + u), u uniform in [-jitter, jitter]
// drawn from (seed, node id).
struct SimulatedSource {
  CostModel cost;
  double jitter = 0;
  std::uint64_t seed = 0;
};

// Durations read from "<node id> <duration ns>" lines.
struct ImportedSource {
  std::unordered_map<NodeId, Nanos> durations;
};

using MeasurementSource = std::variant<SimulatedSource, ImportedSource>;

ImportedSource parse_imported_durations(std::string_view text);

struct SliceTimings {
  std::uint32_t slice = 0;
  // Measured duration and slice-local start of every node of a real rank.
  std::unordered_map<NodeId, Nanos> duration;
  std::unordered_map<NodeId, Nanos> local_start;
};

// Throws kMissingDuration when an imported source lacks a real-rank node.
SliceTimings fill_slice_timings(const ExecutionGraph& bare, const Slice& slice, const MeasurementSource& src);

// Fills every slice (concurrently when `parallel`) and returns the timed
// graph carrying durations only.
ExecutionGraph fill_all_slices(const ExecutionGraph& bare, std::span<const Slice> slices,
                               const MeasurementSource& src, bool parallel = true);

// Makespan obtained by gluing the slice-local timestamps together without
// calibration.
Nanos uncalibrated_makespan(std::span<const SliceTimings> timings);

// ASAP schedule anchored at start 0. Throws kMissingDuration, kCyclicGraph.
ExecutionGraph calibrate(const ExecutionGraph& timed);

// Throws kNotCalibrated when a start is missing.
Nanos iteration_time(const ExecutionGraph& calibrated);

}  // namespace rankemu
