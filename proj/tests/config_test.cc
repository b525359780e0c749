// Copyright 2026 The rankemu Authors.
// SPDX-License-Identifier: Apache-2.0

#include "rankemu/config.h"

#include <gtest/gtest.h>

#include "test_util.h"

namespace rankemu {
namespace {

using testing::error_of;
using testing::read_fixture;

TEST(Config, ParsesFixture) {
  RunConfig c = parse_run_config(read_fixture("small.ini"));
  EXPECT_EQ(c.preset, "S.A");
  EXPECT_EQ(c.spec.world(), 16u);
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.n_slots, 4u);
  EXPECT_EQ(c.sandbox, (std::vector<RankId>{0, 1}));
  EXPECT_EQ(c.slice_size, 4u);
  ASSERT_EQ(c.rules.size(), 1u);
  EXPECT_EQ(c.rules[0].kind, InjectionKind::kConstantStatus);
  EXPECT_EQ(c.rules[0].tag, "status");
  EXPECT_EQ(error_of([&] { c.check(); }), "none");
}

TEST(Config, ExplicitKeysRefinePreset) {
  RunConfig c = parse_run_config(
      "[parallelism]\npreset = S.A\nworld = 16\nga = 32\n"
      "[cost]\ncompute_ns = 5\noverride.fwd = 9\n"
      "[run]\nsandbox = 1,3,5\njitter = 0.25\ngpu_pool_bytes = 1024\n");
  ParallelismSpec base = strategy_preset("S.A", 16);
  EXPECT_EQ(c.spec.tp, base.tp);
  EXPECT_EQ(c.spec.pp, base.pp);
  EXPECT_EQ(c.spec.ga, 32u);
  EXPECT_EQ(c.cost.compute_ns, 5);
  EXPECT_EQ(c.cost.label_overrides.at("fwd"), 9);
  EXPECT_EQ(c.sandbox, (std::vector<RankId>{1, 3, 5}));
  EXPECT_DOUBLE_EQ(c.jitter, 0.25);
  EXPECT_EQ(c.pool.gpu_capacity, 1024u);
}

TEST(Config, MoeSection) {
  RunConfig c = parse_run_config(
      "[parallelism]\ntp = 1\npp = 1\nep = 4\ndp = 4\nga = 1\n"
      "[moe]\nenabled = true\nbr_min = 0.71\nbr_max = 2.16\nbr_avg = 1.48\nbr_std = 0.37\n"
      "br_med = 1.38\nbr_skew = 0.9\nevents = 8\nseed = 3\n");
  auto s = moe_schedule(c);
  ASSERT_TRUE(s);
  EXPECT_EQ(s->events, 8u);
  EXPECT_EQ(s->ranks, 4u);
  c.moe.enabled = false;
  EXPECT_FALSE(moe_schedule(c));
}

TEST(Config, Rejects) {
  EXPECT_EQ(error_of([] { parse_run_config("[run]\ncolour = red\n"); }), "ConfigError");
  EXPECT_EQ(error_of([] { parse_run_config("[weather]\nx = 1\n"); }), "ConfigError");
  EXPECT_EQ(error_of([] { parse_run_config("[run]\nn_slots = many\n"); }), "ConfigError");
  EXPECT_EQ(error_of([] { parse_run_config("[run]\nn_slots = 0\n").check(); }), "ConfigError");
  EXPECT_EQ(error_of([] { parse_run_config("[moe]\nenabled = maybe\n"); }), "ConfigError");
  EXPECT_EQ(error_of([] { parse_run_config("[inject]\nr = teleport\n"); }), "ConfigError");
  EXPECT_EQ(error_of([] { parse_run_config("[parallelism\n"); }), "ConfigError");
  EXPECT_EQ(error_of([] { parse_run_config("[parallelism]\npreset = S.Z\n"); }), "UnknownPreset");
  EXPECT_EQ(error_of([] { load_run_config("/nonexistent/run.ini"); }), "IoError");
}

TEST(Config, SandboxOutsideWorld) {
  RunConfig c = parse_run_config("[parallelism]\ntp = 2\npp = 2\n[run]\nsandbox = 3-4\n");
  EXPECT_EQ(error_of([&] { c.check(); }), "ConfigError");
  c.sandbox = {3};
  EXPECT_EQ(error_of([&] { c.check(); }), "none");
}

TEST(Config, RankSets) {
  EXPECT_EQ(parse_rank_set("2-4"), (std::vector<RankId>{2, 3, 4}));
  EXPECT_EQ(parse_rank_set("7"), (std::vector<RankId>{7}));
  EXPECT_EQ(parse_rank_set("0,5,2"), (std::vector<RankId>{0, 5, 2}));
  EXPECT_EQ(error_of([] { parse_rank_set("4-2"); }), "ConfigError");
  EXPECT_EQ(error_of([] { parse_rank_set(""); }), "ConfigError");
  EXPECT_EQ(error_of([] { parse_rank_set("a"); }), "ConfigError");
}

}  // namespace
}  // namespace rankemu
