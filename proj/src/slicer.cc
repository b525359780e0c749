// Copyright 2026 The rankemu Authors.
// SPDX-License-Identifier: Apache-2.0

#include "rankemu/slicer.h"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>

#include "hash_util.h"
#include "rankemu/error.h"
#include "text_util.h"

namespace rankemu {

std::vector<Slice> plan_slices(std::uint32_t world, std::uint32_t slice_size) {
  if (slice_size == 0 || slice_size > world) {
    throw Error(ErrorCode::kInvalidSize,
                "slice size " + std::to_string(slice_size) + " not in [1, " + std::to_string(world) + "]");
  }
  std::vector<Slice> out;
  for (RankId begin = 0; begin < world; begin += slice_size) {
    Slice s;
    s.index = static_cast<std::uint32_t>(out.size());
    const RankId end = std::min(world, begin + slice_size);
    for (RankId r = 0; r < world; ++r) (r >= begin && r < end ? s.real_ranks : s.assistant_ranks).push_back(r);
    out.push_back(std::move(s));
  }
  return out;
}

ImportedSource parse_imported_durations(std::string_view text) {
  ImportedSource src;
  text::for_each_line(text, [&](std::size_t line, std::string_view content) {
    auto tok = text::split_ws(content);
    auto id = tok.size() == 2 ? text::parse_int<NodeId>(tok[0]) : std::nullopt;
    auto d = tok.size() == 2 ? text::parse_int<Nanos>(tok[1]) : std::nullopt;
    if (!id || !d || *d < 0) {
      throw Error(ErrorCode::kMalformedRecord, "line " + std::to_string(line) + ": expected '<node id> <ns>'");
    }
    src.durations[*id] = *d;
  });
  return src;
}

namespace {

Nanos measure(const GraphNode& node, const MeasurementSource& src) {
  if (const auto* sim = std::get_if<SimulatedSource>(&src)) {
    const Nanos base = sim->cost.node_duration(node);
    if (sim->jitter == 0) return base;
    const double u = (2 * hashing::unit(hashing::mix(sim->seed, node.id)) - 1) * sim->jitter;
    return std::max<Nanos>(0, static_cast<Nanos>(std::llround(static_cast<double>(base) * (1 + u))));
  }
  const auto& imported = std::get<ImportedSource>(src);
  auto it = imported.durations.find(node.id);
  if (it == imported.durations.end()) {
    throw Error(ErrorCode::kMissingDuration, "no imported duration for node " + std::to_string(node.id));
  }
  return it->second;
}

std::vector<Nanos> durations_of(const ExecutionGraph& g) {
  std::vector<Nanos> d;
  d.reserve(g.size());
  for (const auto& n : g.nodes()) {
    if (!n.duration) throw Error(ErrorCode::kMissingDuration, "node " + std::to_string(n.id) + " has no duration");
    d.push_back(*n.duration);
  }
  return d;
}

}  // namespace

SliceTimings fill_slice_timings(const ExecutionGraph& bare, const Slice& slice, const MeasurementSource& src) {
  std::vector<bool> real(bare.world_size(), false);
  for (RankId r : slice.real_ranks) real.at(r) = true;
  // Real ranks run with measured durations; assistants replay the bare
  // structure and take no time of their own.
  std::vector<Nanos> dur(bare.size(), 0);
  SliceTimings out;
  out.slice = slice.index;
  for (std::size_t i = 0; i < bare.size(); ++i) {
    const GraphNode& n = bare.nodes()[i];
    if (!real[n.rank]) continue;
    dur[i] = measure(n, src);
    out.duration[n.id] = dur[i];
  }
  AsapSchedule local = compute_asap(bare, dur);
  for (std::size_t i = 0; i < bare.size(); ++i) {
    const GraphNode& n = bare.nodes()[i];
    if (real[n.rank]) out.local_start[n.id] = local.start[i];
  }
  return out;
}

ExecutionGraph fill_all_slices(const ExecutionGraph& bare, std::span<const Slice> slices,
                               const MeasurementSource& src, bool parallel) {
  std::vector<SliceTimings> timings(slices.size());
  if (parallel && slices.size() > 1) {
    std::vector<std::future<SliceTimings>> futures;
    futures.reserve(slices.size());
    for (const auto& s : slices) {
      futures.push_back(std::async(std::launch::async, [&bare, &s, &src] { return fill_slice_timings(bare, s, src); }));
    }
    for (std::size_t i = 0; i < futures.size(); ++i) timings[i] = futures[i].get();
  } else {
    for (std::size_t i = 0; i < slices.size(); ++i) timings[i] = fill_slice_timings(bare, slices[i], src);
  }
  ExecutionGraph timed = strip_timing(bare);
  for (const auto& t : timings) {
    for (const auto& [id, d] : t.duration) timed.mutable_node(id).duration = d;
  }
  for (const auto& n : timed.nodes()) {
    if (!n.duration) {
      throw Error(ErrorCode::kMissingDuration, "slices leave node " + std::to_string(n.id) + " without a duration");
    }
  }
  return timed;
}

Nanos uncalibrated_makespan(std::span<const SliceTimings> timings) {
  Nanos lo = std::numeric_limits<Nanos>::max(), hi = 0;
  for (const auto& t : timings) {
    for (const auto& [id, s] : t.local_start) {
      lo = std::min(lo, s);
      hi = std::max(hi, s + t.duration.at(id));
    }
  }
  return lo == std::numeric_limits<Nanos>::max() ? 0 : hi - lo;
}

ExecutionGraph calibrate(const ExecutionGraph& timed) {
  const std::vector<Nanos> dur = durations_of(timed);
  AsapSchedule s = compute_asap(timed, dur);
  Nanos anchor = 0;
  if (!s.start.empty()) anchor = *std::min_element(s.start.begin(), s.start.end());
  ExecutionGraph out = timed;
  for (std::size_t i = 0; i < timed.size(); ++i) {
    out.mutable_node(timed.nodes()[i].id).start = s.start[i] - anchor;
  }
  return out;
}

Nanos iteration_time(const ExecutionGraph& calibrated) {
  if (calibrated.empty()) return 0;
  Nanos lo = std::numeric_limits<Nanos>::max(), hi = std::numeric_limits<Nanos>::min();
  for (const auto& n : calibrated.nodes()) {
    if (!n.start || !n.duration) {
      throw Error(ErrorCode::kNotCalibrated, "node " + std::to_string(n.id) + " has no start time");
    }
    lo = std::min(lo, *n.start);
    hi = std::max(hi, *n.start + *n.duration);
  }
  return hi - lo;
}

}  // namespace rankemu
