// Copyright 2026 The rankemu Authors.
// SPDX-License-Identifier: Apache-2.0

#include "rankemu/workload.h"

#include <random>

#include <gtest/gtest.h>

#include "oracles.h"
#include "rankemu/coordinator.h"
#include "rankemu/replayer.h"
#include "test_util.h"

namespace rankemu {
namespace {

using testing::error_of;

std::vector<std::string> compute_sequence(const RankProgram& p) {
  std::vector<std::string> out;
  for (const auto& s : p.steps) {
    if (const auto* c = std::get_if<ComputeStep>(&s)) {
      out.push_back((c->label == "fwd" ? "F" : "B") + std::to_string(*c->microbatch));
    }
  }
  return out;
}

std::map<GroupRole, std::size_t> count_roles(const CommGroups& g) {
  std::map<GroupRole, std::size_t> n;
  for (const auto& x : g.groups()) ++n[x.role];
  return n;
}

TEST(BuildGroups, SingleRank) {
  CommGroups g = build_groups({1, 1, 0, 1, 1, 1});
  EXPECT_EQ(g.world(), 1u);
  for (GroupRole role : {GroupRole::kTensor, GroupRole::kPipeline, GroupRole::kData, GroupRole::kExpert}) {
    EXPECT_EQ(g.of(role, 0).members, (std::vector<RankId>{0}));
  }
}

TEST(BuildGroups, EightRanks) {
  CommGroups g = build_groups({2, 2, 0, 1, 2, 2});
  auto n = count_roles(g);
  EXPECT_EQ(n[GroupRole::kTensor], 4u);
  EXPECT_EQ(n[GroupRole::kPipeline], 4u);
  EXPECT_EQ(n[GroupRole::kData], 4u);
  EXPECT_EQ(g.of(GroupRole::kTensor, 5).members, (std::vector<RankId>{4, 5}));
  EXPECT_EQ(g.of(GroupRole::kPipeline, 5).members, (std::vector<RankId>{5, 7}));
  EXPECT_EQ(g.of(GroupRole::kData, 5).members, (std::vector<RankId>{1, 5}));
}

// Brute force: enumerate every (t, p, d) tuple and bucket the ranks.
TEST(BuildGroups, PresetAtWorld512MatchesEnumeration) {
  const ParallelismSpec s = strategy_preset("S.A", 512);
  ASSERT_EQ(s.world(), 512u);
  const std::uint32_t ep = s.ep_effective();
  std::map<std::tuple<int, int, int>, std::set<RankId>> want;  // (role, key1, key2) -> members
  for (std::uint32_t d = 0; d < s.dp; ++d) {
    for (std::uint32_t p = 0; p < s.pp; ++p) {
      for (std::uint32_t t = 0; t < s.tp; ++t) {
        const RankId r = t + s.tp * (p + s.pp * d);
        want[{0, static_cast<int>(p), static_cast<int>(d)}].insert(r);
        want[{1, static_cast<int>(t), static_cast<int>(d)}].insert(r);
        want[{2, static_cast<int>(t), static_cast<int>(p)}].insert(r);
        want[{3, static_cast<int>(t + s.tp * p), static_cast<int>(d / ep)}].insert(r);
      }
    }
  }
  const CommGroups g = build_groups(s);
  EXPECT_EQ(g.size(), want.size());
  EXPECT_EQ(g.size(), s.pp * s.dp + s.tp * s.dp + s.tp * s.pp + s.tp * s.pp * (s.dp / ep));
  std::set<std::set<RankId>> have;
  for (const auto& x : g.groups()) have.insert({x.members.begin(), x.members.end()});
  for (const auto& [key, members] : want) EXPECT_TRUE(have.count(members));
  for (RankId r = 0; r < 512; ++r) {
    for (GroupRole role : {GroupRole::kTensor, GroupRole::kPipeline, GroupRole::kData, GroupRole::kExpert}) {
      EXPECT_TRUE(g.of(role, r).contains(r));
    }
  }
}

TEST(BuildGroups, RoundTrip) {
  const CommGroups g = build_groups({2, 2, 0, 2, 4, 4});
  EXPECT_EQ(serialize_groups(parse_groups(serialize_groups(g))), serialize_groups(g));
}

TEST(Spec, Validation) {
  EXPECT_EQ(error_of([] { ParallelismSpec{1, 4, 2, 1, 1, 4}.check(); }), "GaTooSmall");
  EXPECT_EQ(error_of([] { ParallelismSpec{0, 1, 0, 1, 1, 1}.check(); }), "InvalidSpec");
  EXPECT_EQ(error_of([] { ParallelismSpec{1, 4, 2, 1, 1, 10}.check(); }), "InvalidSpec");
  EXPECT_EQ(error_of([] { ParallelismSpec{2, 4, 2, 8, 2, 16}.check(); }), "none");
  EXPECT_EQ(ParallelismSpec({1, 1, 0, 8, 4, 1}).ep_effective(), 4u);
}

TEST(Presets, StrategyAndModelTables) {
  ParallelismSpec a = strategy_preset("S.A");
  EXPECT_EQ(a.tp, 1u);
  EXPECT_EQ(a.pp, 4u);
  EXPECT_EQ(a.ep, 8u);
  EXPECT_EQ(a.ga, 8u);
  ParallelismSpec b = strategy_preset("S.B");
  EXPECT_EQ(b.tp, 2u);
  EXPECT_EQ(b.vpp, 2u);
  EXPECT_EQ(b.ga, 16u);
  ParallelismSpec c = strategy_preset("S.C");
  EXPECT_EQ(c.pp, 16u);
  EXPECT_EQ(c.ga, 32u);
  ParallelismSpec d = strategy_preset("S.D", 128);
  EXPECT_EQ(d.ep, 16u);
  EXPECT_EQ(d.dp, 16u);
  ModelPreset m1 = model_preset("M1");
  EXPECT_EQ(m1.layers, 94u);
  EXPECT_EQ(m1.experts, 128u);
  EXPECT_EQ(m1.top_k, 8u);
  EXPECT_EQ(error_of([] { strategy_preset("S.Z"); }), "UnknownPreset");
  EXPECT_EQ(error_of([] { preset("M9/S.A", 16); }), "UnknownPreset");
  EXPECT_EQ(preset("M2/S.D", 64).spec.dp, 8u);
}

TEST(BuildPrograms, SingleStageSingleMicrobatch) {
  const CostModel cost;
  auto one = build_programs({1, 1, 0, 1, 1, 1}, cost);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(compute_sequence(one[0]), (std::vector<std::string>{"F0", "B0"}));
  EXPECT_EQ(one[0].steps.size(), 2u);

  // With data parallelism the gradient reduction follows the backward.
  auto two = build_programs({1, 1, 0, 1, 2, 1}, cost);
  ASSERT_EQ(two[0].steps.size(), 4u);
  const auto& rs = std::get<CommunicateStep>(two[0].steps[2]);
  const auto& ag = std::get<CommunicateStep>(two[0].steps[3]);
  EXPECT_EQ(rs.descriptor.kind, CommKind::kReduceScatter);
  EXPECT_EQ(ag.descriptor.kind, CommKind::kAllGather);
}

TEST(BuildPrograms, OneFOneBTwoStages) {
  auto p = build_programs({1, 2, 0, 1, 1, 2}, CostModel{});
  EXPECT_EQ(compute_sequence(p[0]), (std::vector<std::string>{"F0", "F1", "B0", "B1"}));
  EXPECT_EQ(compute_sequence(p[1]), (std::vector<std::string>{"F0", "B0", "F1", "B1"}));
  // The collected graph is the committed demo fixture.
  const auto groups = build_groups({1, 2, 0, 1, 1, 2});
  ExecutionGraph g = run_collection(p, groups, {}).graph;
  g.set_spec_ref(ParallelismSpec{1, 2, 0, 1, 1, 2}.to_string());
  EXPECT_EQ(serialize_graph(g), testing::read_fixture("demo_1f1b.ptg"));
}

TEST(BuildPrograms, StageScheduleWarmupProperty) {
  for (std::uint32_t pp = 1; pp <= 8; ++pp) {
    for (std::uint32_t ga = 1; ga <= 12; ++ga) {
      ParallelismSpec s{1, pp, 0, 1, 1, ga};
      for (std::uint32_t stage = 0; stage < pp; ++stage) {
        auto slots = stage_schedule(s, stage);
        ASSERT_EQ(slots.size(), 2u * ga);
        const std::uint32_t warmup = std::min(pp - stage - 1, ga);
        std::uint32_t leading = 0;
        while (leading < slots.size() && slots[leading].forward) ++leading;
        EXPECT_EQ(leading, std::min(warmup + 1, ga)) << pp << " " << ga << " " << stage;
        // Backward order matches forward order.
        std::vector<std::uint32_t> f, b;
        for (const auto& x : slots) (x.forward ? f : b).push_back(x.microbatch);
        EXPECT_EQ(f, b);
      }
    }
  }
}

TEST(BuildPrograms, InterleavedComputeCount) {
  const ParallelismSpec s = strategy_preset("S.B", 16);
  auto programs = build_programs(s, CostModel{});
  for (const auto& p : programs) {
    std::size_t f = 0, b = 0;
    for (const auto& st : p.steps) {
      if (const auto* c = std::get_if<ComputeStep>(&st)) (c->label.rfind("fwd", 0) == 0 ? f : b)++;
    }
    EXPECT_EQ(f, s.ga * s.vpp);
    EXPECT_EQ(b, f);
  }
}

TEST(BuildPrograms, CommunicateStepsReferenceOwnGroups) {
  const ParallelismSpec s = strategy_preset("S.B", 32);
  const auto groups = build_groups(s);
  for (const auto& p : build_programs(s, CostModel{})) {
    for (const auto& st : p.steps) {
      if (const auto* m = std::get_if<CommunicateStep>(&st)) {
        EXPECT_TRUE(groups.at(m->descriptor.group).contains(p.rank));
      }
    }
  }
}

TEST(BuildPrograms, RoundTrip) {
  const ParallelismSpec s = strategy_preset("S.B", 16);
  auto programs = build_programs(s, CostModel{});
  const std::string text = serialize_programs(programs, s.world());
  auto back = parse_programs(text);
  EXPECT_EQ(serialize_programs(back, s.world()), text);
  ASSERT_EQ(back.size(), programs.size());
  EXPECT_EQ(back[3].steps, programs[3].steps);
}

// Concurrent execution of every program terminates and matches a relaxation
// schedule computed independently.
TEST(BuildPrograms, FullExecutionTerminates) {
  std::mt19937_64 rng(11);
  int checked = 0;
  while (checked < 25) {
    ParallelismSpec s;
    s.tp = 1u << (rng() % 2);
    s.pp = 1 + rng() % 4;
    s.dp = 1u << (rng() % 3);
    s.ep = 1u << (rng() % 3);
    s.vpp = rng() % 3 == 0 ? 2 : 0;
    s.ga = s.pp * (1 + rng() % 3);
    try {
      s.check();
    } catch (const Error&) {
      continue;
    }
    const CostModel cost;
    const auto programs = build_programs(s, cost);
    const auto groups = build_groups(s);
    FullSimulation sim = simulate_full(programs, groups, cost);
    auto ref = oracle::relaxed_program_schedule(programs, groups, cost);
    EXPECT_EQ(sim.makespan, ref.makespan) << s.to_string();
    EXPECT_EQ(sim.start, ref.start) << s.to_string();
    ++checked;
  }
}

TEST(Memory, SteadyStatePeakIsWarmupPlusOneActivations) {
  CostModel cost;
  cost.count_comm_buffers = false;
  const ParallelismSpec s{1, 4, 0, 1, 1, 8};
  const auto programs = build_programs(s, cost);
  const auto groups = build_groups(s);
  FullSimulation sim = simulate_full(programs, groups, cost);
  for (std::uint32_t stage = 0; stage < s.pp; ++stage) {
    const std::int64_t warmup = s.pp - stage - 1;
    EXPECT_EQ(sim.memory[stage].peak, (warmup + 1) * static_cast<std::int64_t>(cost.activation_bytes));
  }
}

TEST(CostModel, DurationsAndOverrides) {
  CostModel c;
  CommDescriptor d{CommKind::kAllReduce, 0, 25'000'000, ReduceOp::kSum, AlgorithmHint::kRing};
  EXPECT_EQ(c.comm_duration(d, "x"), 500'000 + 1'000'000);
  d.kind = CommKind::kSend;
  d.reduce_op.reset();
  EXPECT_EQ(c.comm_duration(d, "pp_fwd"), 1'000'000);
  c.label_overrides["pp_fwd"] = 5;
  c.label_overrides["fwd"] = 7;
  c.label_overrides["fwd@3"] = 9;
  EXPECT_EQ(c.comm_duration(d, "pp_fwd"), 5);
  EXPECT_EQ(c.compute_duration(0, "fwd", 2), 7);
  EXPECT_EQ(c.compute_duration(0, "fwd", 3), 9);
  c.compute_scale[1] = 1.5;
  EXPECT_EQ(c.compute_duration(1, "bwd", 0), 15'000'000);
}

}  // namespace
}  // namespace rankemu
