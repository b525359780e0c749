// Copyright 2026 The rankemu Authors.
// SPDX-License-Identifier: Apache-2.0

#include "rankemu/slicer.h"

#include <gtest/gtest.h>

#include "oracles.h"
#include "rankemu/coordinator.h"
#include "rankemu/replayer.h"
#include "test_util.h"

namespace rankemu {
namespace {

using testing::error_of;

// Rank 0: compute then send. Rank 1: short compute then the matching recv.
ExecutionGraph two_rank_pair() {
  return parse_graph(
      "prismtrace v1 world=2\n"
      "N 0 0 compute a\n"
      "N 1 0 send group=0 bytes=64 alg=ring tag=p2p\n"
      "N 2 1 compute b\n"
      "N 3 1 recv group=0 bytes=64 alg=ring tag=p2p\n"
      "E 0 1 D\n"
      "E 2 3 D\n"
      "E 1 3 S 0\n");
}

ImportedSource pair_durations() { return parse_imported_durations("0 12\n1 2\n2 3\n3 2\n"); }

ExecutionGraph collect(const ParallelismSpec& spec) {
  auto groups = build_groups(spec);
  CollectionOptions o;
  o.n_slots = 4;
  return run_collection(build_programs(spec, CostModel{}), groups, o).graph;
}

TEST(PlanSlices, Blocks) {
  auto s = plan_slices(10, 4);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0].real_ranks, (std::vector<RankId>{0, 1, 2, 3}));
  EXPECT_EQ(s[2].real_ranks, (std::vector<RankId>{8, 9}));
  EXPECT_EQ(s[2].assistant_ranks.size(), 8u);
  EXPECT_EQ(plan_slices(4, 4).size(), 1u);
  EXPECT_TRUE(plan_slices(4, 4)[0].assistant_ranks.empty());
}

TEST(PlanSlices, InvalidSize) {
  EXPECT_EQ(error_of([] { plan_slices(8, 0); }), "InvalidSize");
  EXPECT_EQ(error_of([] { plan_slices(8, 9); }), "InvalidSize");
}

TEST(SliceTimings, LocalStartsDisagreeUntilCalibrated) {
  const ExecutionGraph bare = two_rank_pair();
  const MeasurementSource src = pair_durations();
  auto slices = plan_slices(2, 1);
  std::vector<SliceTimings> t{fill_slice_timings(bare, slices[0], src), fill_slice_timings(bare, slices[1], src)};
  EXPECT_EQ(t[0].local_start.at(1), 12);
  // Slice 1 replays rank 0 in zero time, so its recv starts after b only.
  EXPECT_EQ(t[1].local_start.at(3), 3);
  EXPECT_FALSE(t[1].local_start.count(1));

  ExecutionGraph cal = calibrate(fill_all_slices(bare, slices, src));
  EXPECT_EQ(cal.node(3).start, 12);
  EXPECT_EQ(cal.node(1).start, 12);
  EXPECT_EQ(cal.node(2).start, 0);
  EXPECT_EQ(iteration_time(cal), 14);
  EXPECT_TRUE(validate(cal).empty());
}

TEST(SliceTimings, ImportedMissing) {
  const ExecutionGraph bare = two_rank_pair();
  const MeasurementSource src = parse_imported_durations("0 12\n1 2\n2 3\n");
  auto slices = plan_slices(2, 1);
  EXPECT_EQ(error_of([&] { fill_slice_timings(bare, slices[0], src); }), "none");
  EXPECT_EQ(error_of([&] { fill_slice_timings(bare, slices[1], src); }), "MissingDuration");
  EXPECT_EQ(error_of([] { parse_imported_durations("0 12\nx\n"); }), "MalformedRecord");
  EXPECT_EQ(error_of([] { parse_imported_durations("0 -1\n"); }), "MalformedRecord");
}

TEST(SliceTimings, JitterIsDeterministicAndBounded) {
  const ExecutionGraph bare = collect({2, 2, 0, 1, 1, 4});
  auto slices = plan_slices(bare.world_size(), 2);
  SimulatedSource src{CostModel{}, 0.1, 3};
  ExecutionGraph a = fill_all_slices(bare, slices, src, true);
  ExecutionGraph b = fill_all_slices(bare, slices, src, false);
  EXPECT_EQ(serialize_graph(a), serialize_graph(b));
  src.seed = 4;
  EXPECT_NE(serialize_graph(fill_all_slices(bare, slices, src)), serialize_graph(a));
  const CostModel cost;
  bool moved = false;
  for (const auto& n : a.nodes()) {
    const Nanos base = cost.node_duration(n);
    EXPECT_GE(*n.duration, static_cast<Nanos>(base * 0.9) - 1);
    EXPECT_LE(*n.duration, static_cast<Nanos>(base * 1.1) + 1);
    moved = moved || *n.duration != base;
  }
  EXPECT_TRUE(moved);
}

TEST(Calibrate, MatchesFullSimulation) {
  for (const ParallelismSpec& spec :
       {ParallelismSpec{1, 2, 0, 1, 1, 2}, ParallelismSpec{2, 4, 0, 1, 2, 8}, ParallelismSpec{2, 2, 2, 2, 2, 4}}) {
    SCOPED_TRACE(spec.to_string());
    const CostModel cost;
    auto groups = build_groups(spec);
    auto programs = build_programs(spec, cost);
    const Nanos want = simulate_full(programs, groups, cost).makespan;
    const ExecutionGraph bare = collect(spec);
    for (std::uint32_t size : {1u, 2u, spec.world()}) {
      auto slices = plan_slices(spec.world(), size);
      ExecutionGraph cal = calibrate(fill_all_slices(bare, slices, SimulatedSource{cost}));
      EXPECT_EQ(iteration_time(cal), want) << size;
      EXPECT_EQ(critical_path(cal).length, want) << size;
      std::vector<Nanos> dur;
      for (const auto& n : cal.nodes()) dur.push_back(*n.duration);
      auto starts = oracle::relaxed_schedule(cal, dur);
      for (std::size_t i = 0; i < cal.size(); ++i) ASSERT_EQ(*cal.nodes()[i].start, starts[i]);
    }
  }
}

TEST(Calibrate, MissingDuration) {
  EXPECT_EQ(error_of([] { calibrate(two_rank_pair()); }), "MissingDuration");
}

TEST(IterationTime, NotCalibrated) {
  ExecutionGraph g = two_rank_pair();
  EXPECT_EQ(error_of([&] { iteration_time(g); }), "NotCalibrated");
  EXPECT_EQ(iteration_time(ExecutionGraph(2)), 0);
}

TEST(Uncalibrated, UnderestimatesPipelines) {
  const ParallelismSpec spec{1, 4, 0, 1, 1, 8};
  const ExecutionGraph bare = collect(spec);
  auto slices = plan_slices(4, 1);
  const SimulatedSource src{CostModel{}};
  std::vector<SliceTimings> t;
  for (const auto& s : slices) t.push_back(fill_slice_timings(bare, s, src));
  const Nanos glued = uncalibrated_makespan(t);
  const Nanos real = iteration_time(calibrate(fill_all_slices(bare, slices, src)));
  EXPECT_LT(glued, real);
}

}  // namespace
}  // namespace rankemu
