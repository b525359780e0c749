// Copyright 2026 The rankemu Authors.
// SPDX-License-Identifier: Apache-2.0

#include "rankemu/replayer.h"

#include <cmath>
#include <numeric>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "oracles.h"
#include "rankemu/slicer.h"
#include "test_util.h"

namespace rankemu {
namespace {

using testing::error_of;

struct Pipeline {
  ParallelismSpec spec;
  CostModel cost;
  CommGroups groups;
  std::vector<RankProgram> programs;
  CollectionResult collected;
  ExecutionGraph calibrated;

  EmulationSetup setup(std::vector<RankId> sandbox) const {
    EmulationSetup s;
    s.sandbox = std::move(sandbox);
    s.programs = programs;
    s.groups = &groups;
    s.cost = cost;
    s.records = collected.records;
    return s;
  }
};

Pipeline make_pipeline(const ParallelismSpec& spec, CostModel cost = {}) {
  Pipeline p;
  p.spec = spec;
  p.cost = cost;
  p.groups = build_groups(spec);
  p.programs = build_programs(spec, cost);
  CollectionOptions o;
  o.n_slots = 4;
  o.seed = 5;
  p.collected = run_collection(p.programs, p.groups, o);
  auto slices = plan_slices(spec.world(), 1);
  p.calibrated = calibrate(fill_all_slices(p.collected.graph, slices, SimulatedSource{cost}));
  return p;
}

std::vector<RankId> all_ranks(std::uint32_t world) {
  std::vector<RankId> v(world);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

// Two independent ranks, and a third node on rank 1 so the trace has three
// complete events.
struct Independent {
  CostModel cost;
  CommGroups groups{2};
  std::vector<RankProgram> programs;
  ExecutionGraph calibrated;

  Independent() {
    cost.label_overrides["a"] = 100'000;
    cost.label_overrides["b"] = 10'000;
    cost.label_overrides["c"] = 5'000;
    programs.resize(2);
    programs[0] = {0, {ComputeStep{"a", std::nullopt, 0, 0}}};
    programs[1] = {1, {ComputeStep{"b", std::nullopt, 0, 0}, ComputeStep{"c", std::nullopt, 0, 0}}};
    ExecutionGraph bare = parse_graph(
        "prismtrace v1 world=2\n"
        "N 0 0 compute a\n"
        "N 1 1 compute b\n"
        "N 2 1 compute c\n"
        "E 1 2 D\n");
    calibrated = calibrate(fill_all_slices(bare, plan_slices(2, 1), SimulatedSource{cost}));
  }

  EmulationSetup setup(std::vector<RankId> sandbox) const {
    EmulationSetup s;
    s.sandbox = std::move(sandbox);
    s.programs = programs;
    s.groups = &groups;
    s.cost = cost;
    return s;
  }
};

TEST(SimulateFull, MatchesRelaxedOracle) {
  const ParallelismSpec spec{2, 2, 0, 1, 2, 4};
  const CostModel cost;
  auto groups = build_groups(spec);
  auto programs = build_programs(spec, cost);
  auto sim = simulate_full(programs, groups, cost);
  auto want = oracle::relaxed_program_schedule(programs, groups, cost);
  EXPECT_EQ(sim.makespan, want.makespan);
  EXPECT_EQ(sim.start, want.start);
}

TEST(Emulate, WholeWorldSandboxReproducesCalibration) {
  const Pipeline p = make_pipeline({2, 2, 0, 1, 2, 4});
  auto r = emulate(p.calibrated, p.setup(all_ranks(8)));
  EXPECT_EQ(r.iteration_time, iteration_time(p.calibrated));
  EXPECT_TRUE(r.active_virtual.empty());
  EXPECT_EQ(r.nodes_visited, p.calibrated.size());
  for (const auto& t : r.nodes) {
    EXPECT_TRUE(t.emulated);
    EXPECT_EQ(t.start, *p.calibrated.node(t.id).start);
  }
  auto sim = simulate_full(p.programs, p.groups, p.cost);
  for (RankId rank = 0; rank < 8; ++rank) EXPECT_EQ(r.peak_memory.at(rank), sim.memory[rank].peak);
}

TEST(Emulate, SmallSandboxAgreesWithFullRun) {
  const Pipeline p = make_pipeline({2, 4, 0, 2, 2, 8});
  auto sim = simulate_full(p.programs, p.groups, p.cost);
  for (const auto& sandbox : std::vector<std::vector<RankId>>{{0}, {0, 1}, {5}, {2, 3, 4, 5}}) {
    auto r = emulate(p.calibrated, p.setup(sandbox));
    EXPECT_EQ(r.iteration_time, sim.makespan);
    for (RankId rank : sandbox) EXPECT_EQ(r.peak_memory.at(rank), sim.memory[rank].peak) << rank;
    EXPECT_LT(r.nodes_visited, p.calibrated.size());
    EXPECT_EQ(r.numeric_mismatches, 0u);
  }
}

TEST(Emulate, NumericChecksRunOnReductions) {
  const Pipeline p = make_pipeline({2, 2, 0, 1, 2, 4});
  auto r = emulate(p.calibrated, p.setup({0}));
  EXPECT_GT(r.numeric_checks, 0u);
  EXPECT_EQ(r.numeric_mismatches, 0u);
  EXPECT_GT(r.pruned_collectives, 0u);
}

TEST(Emulate, SkippedTransfersDoNotChangeTiming) {
  const Pipeline p = make_pipeline({2, 2, 0, 1, 2, 4});
  auto with = p.setup({0});
  auto without = p.setup({0});
  without.skip_transfers = false;
  auto a = emulate(p.calibrated, with);
  auto b = emulate(p.calibrated, without);
  EXPECT_EQ(a.iteration_time, b.iteration_time);
  EXPECT_GT(a.skipped_transfers, 0u);
  EXPECT_EQ(b.skipped_transfers, 0u);
  EXPECT_LE(a.bytes_moved, b.bytes_moved);
}

TEST(Emulate, PoolAccounting) {
  const Pipeline p = make_pipeline({2, 2, 0, 1, 2, 4});
  auto r = emulate(p.calibrated, p.setup({0}));
  EXPECT_GT(r.pool.staged_bytes, 0u);
  EXPECT_GT(r.pool.consumed, 0u);
  EXPECT_EQ(r.pool.prefetches + r.pool.demand_loads, r.pool.consumed);
  EXPECT_EQ(r.pool.evictions, r.pool.consumed);

  auto tight = p.setup({0});
  tight.pool.gpu_capacity = 1;
  EXPECT_EQ(error_of([&] { emulate(p.calibrated, tight); }), "PoolOverflow");
  tight = p.setup({0});
  tight.pool.cpu_capacity = r.pool.staged_bytes - 1;
  EXPECT_EQ(error_of([&] { emulate(p.calibrated, tight); }), "PoolOverflow");
  tight.pool.cpu_capacity = r.pool.staged_bytes;
  EXPECT_EQ(error_of([&] { emulate(p.calibrated, tight); }), "none");
}

TEST(Emulate, Errors) {
  const Pipeline p = make_pipeline({1, 2, 0, 1, 1, 2});
  EXPECT_EQ(error_of([&] { emulate(p.calibrated, p.setup({2})); }), "UnknownRank");
  EXPECT_EQ(error_of([&] { emulate(p.collected.graph, p.setup({0})); }), "NotCalibrated");
  auto other = build_programs({1, 2, 0, 1, 1, 3}, p.cost);
  auto mismatched = p.setup({0});
  mismatched.programs = other;
  EXPECT_EQ(error_of([&] { emulate(p.calibrated, mismatched); }), "GraphProgramMismatch");
}

TEST(WhatIf, UnknownLabel) {
  const Independent w;
  EXPECT_EQ(error_of([&] { what_if(w.calibrated, w.setup({0}), {{"nope", 1}}); }), "UnknownLabel");
}

TEST(WhatIf, OffAndOnCriticalPath) {
  const Independent w;
  const Nanos base = emulate(w.calibrated, w.setup({0})).iteration_time;
  EXPECT_EQ(base, 100'000);
  EXPECT_EQ(what_if(w.calibrated, w.setup({0}), {{"b", 50'000}}).iteration_time, base);
  EXPECT_EQ(what_if(w.calibrated, w.setup({0}), {{"a", 130'000}}).iteration_time, 130'000);
  EXPECT_EQ(what_if(w.calibrated, w.setup({1}), {{"b", 120'000}}).iteration_time, 125'000);
}

TEST(FaultInject, OffCriticalRankDoesNotMove) {
  const Independent w;
  auto r = fault_inject(w.calibrated, w.setup({0}), 1, 2.0);
  EXPECT_EQ(r.makespan_delta, 0);
  r = fault_inject(w.calibrated, w.setup({1}), 1, 10.0);
  EXPECT_EQ(r.makespan_delta, 150'000 - 100'000);
  r = fault_inject(w.calibrated, w.setup({0}), 0, 1.5);
  EXPECT_EQ(r.makespan_delta, 50'000);
  EXPECT_EQ(error_of([&] { fault_inject(w.calibrated, w.setup({0}), 2, 2.0); }), "UnknownRank");
  EXPECT_EQ(error_of([&] { fault_inject(w.calibrated, w.setup({0}), 0, 0.0); }), "InvalidArgument");
  EXPECT_EQ(error_of([&] { fault_inject(w.calibrated, w.setup({0}), 0, NAN); }), "InvalidArgument");
}

TEST(FaultInject, SlowStageStretchesPipeline) {
  const Pipeline p = make_pipeline({1, 4, 0, 1, 1, 8});
  auto r = fault_inject(p.calibrated, p.setup({0}), 2, 2.0);
  ASSERT_TRUE(r.makespan_delta);
  EXPECT_GT(*r.makespan_delta, 0);
  CostModel slow = p.cost;
  slow.compute_scale[2] = 2.0;
  EXPECT_EQ(r.iteration_time, simulate_full(p.programs, p.groups, slow).makespan);
}

TEST(Export, ChromeTrace) {
  const Independent w;
  auto r = emulate(w.calibrated, w.setup({0}));
  auto doc = nlohmann::json::parse(export_chrome_trace(r));
  int complete = 0;
  for (const auto& e : doc.at("traceEvents")) {
    if (e.at("ph") != "X") continue;
    ++complete;
    const auto& t = r.nodes.at(e.at("args").at("node").get<std::size_t>());
    EXPECT_NEAR(e.at("ts").get<double>(), t.start / 1000.0, 1e-9);
    EXPECT_NEAR(e.at("dur").get<double>(), t.duration / 1000.0, 1e-9);
    EXPECT_EQ(e.at("pid").get<RankId>(), t.rank);
  }
  EXPECT_EQ(complete, 3);
  EXPECT_EQ(nlohmann::json::parse(export_chrome_trace({})), nlohmann::json::parse(R"({"traceEvents":[]})"));
}

TEST(Export, ReportAndCsv) {
  const Independent w;
  auto r = fault_inject(w.calibrated, w.setup({0}), 1, 2.0);
  const std::string text = format_report(r);
  EXPECT_EQ(text.rfind("iteration_time_ns=100000\nsandbox=0\nactive_virtual=-\n", 0), 0u);
  EXPECT_NE(text.find("peak_memory.r0=0\n"), std::string::npos);
  EXPECT_NE(text.find("makespan_delta_ns=0\n"), std::string::npos);
  const std::string csv = timings_csv(r);
  EXPECT_EQ(csv.rfind("node,rank,label,start_ns,duration_ns,emulated\n0,0,a,0,100000,1\n", 0), 0u);
  EXPECT_NE(csv.find("2,1,c,20000,10000,0\n"), std::string::npos);
}

}  // namespace
}  // namespace rankemu
