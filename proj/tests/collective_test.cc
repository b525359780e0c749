// Copyright 2026 The rankemu Authors.
// SPDX-License-Identifier: Apache-2.0

#include "rankemu/collective.h"

#include <random>

#include <gtest/gtest.h>

#include "oracles.h"
#include "test_util.h"

namespace rankemu {
namespace {

using testing::error_of;

RingTopology ring_of(std::size_t k) {
  RingTopology r;
  for (std::size_t i = 0; i < k; ++i) r.members.push_back(static_cast<RankId>(i));
  return r;
}

std::vector<Vec> random_vectors(std::mt19937_64& rng, std::size_t k, std::size_t n) {
  std::vector<Vec> out(k, Vec(n));
  std::uniform_int_distribution<int> d(-50, 50);
  for (auto& v : out) {
    for (auto& x : v) x = d(rng);
  }
  return out;
}

TEST(FullOracle, Basics) {
  std::vector<Vec> xs{{1}, {2}, {3}, {4}};
  for (const auto& r : full_allreduce_oracle(xs, ReduceOp::kSum)) EXPECT_EQ(r, Vec{10});
  std::vector<Vec> ys{{0}, {5}, {-1}};
  EXPECT_EQ(full_allreduce_oracle(ys, ReduceOp::kMax)[2], Vec{5});
  EXPECT_EQ(full_allreduce_oracle(ys, ReduceOp::kMin)[0], Vec{-1});
  std::vector<Vec> bad{{1, 2}, {1}};
  EXPECT_EQ(error_of([&] { full_allreduce_oracle(bad, ReduceOp::kSum); }), "ShapeMismatch");
}

TEST(FullOracle, MatchesNaiveLoopAndRing) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    auto xs = random_vectors(rng, 8, 16);
    const Vec want = oracle::naive_reduce(xs, ReduceOp::kSum);
    for (const auto& r : full_allreduce_oracle(xs, ReduceOp::kSum)) EXPECT_EQ(r, want);
    for (const auto& r : ring_allreduce(xs, ReduceOp::kSum)) EXPECT_EQ(r, want);
  }
}

TEST(RingPlan, NeighborsAndInjector) {
  std::vector<RankId> sb{3, 4};
  PruningPlan p = plan_ring_pruning(ring_of(8), sb);
  EXPECT_EQ(p.sandbox, (std::vector<std::size_t>{3, 4}));
  EXPECT_EQ(p.neighbors, (std::vector<std::size_t>{2, 5}));
  EXPECT_EQ(p.injector, std::optional<std::size_t>(2));
  EXPECT_FALSE(p.pass_through);

  std::vector<RankId> wrap{7, 0};
  PruningPlan w = plan_ring_pruning(ring_of(8), wrap);
  EXPECT_EQ(w.sandbox, (std::vector<std::size_t>{7, 0}));
  EXPECT_EQ(w.injector, std::optional<std::size_t>(6));

  std::vector<RankId> all{0, 1, 2, 3};
  EXPECT_TRUE(plan_ring_pruning(ring_of(4), all).pass_through);

  std::vector<RankId> gap{1, 3};
  EXPECT_EQ(error_of([&] { plan_ring_pruning(ring_of(8), gap); }), "NonContiguousSandbox");
}

TEST(Compensation, FourRankExample) {
  std::vector<RankId> sb{2, 3};
  PruningPlan p = plan_ring_pruning(ring_of(4), sb);
  EXPECT_EQ(p.injector, std::optional<std::size_t>(1));
  std::vector<Vec> xs{{1, 1, 1, 1}, {2, 2, 2, 2}, {3, 3, 3, 3}, {4, 4, 4, 4}};
  Injection inj = compensation_values(p, xs, ReduceOp::kSum);
  EXPECT_FALSE(inj.reduce[0].compensated);
  EXPECT_FALSE(inj.reduce[1].compensated);
  EXPECT_TRUE(inj.reduce[2].compensated);
  EXPECT_TRUE(inj.reduce[3].compensated);
  EXPECT_EQ(inj.reduce[3].value, Vec{3});  // 10 - 3 - 4
  EXPECT_EQ(inj.reduce[2].value, Vec{7});  // 10 - 3
  auto out = pruned_ring_allreduce(p, inj, xs, ReduceOp::kSum);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[2], (Vec{10, 10, 10, 10}));
  EXPECT_EQ(out[3], (Vec{10, 10, 10, 10}));
}

TEST(Compensation, ZeroAndPassThrough) {
  std::vector<RankId> sb{1};
  PruningPlan p = plan_ring_pruning(ring_of(4), sb);
  std::vector<Vec> zeros(4, Vec(8, 0.0));
  Injection inj = compensation_values(p, zeros, ReduceOp::kSum);
  for (const auto& c : inj.reduce) {
    for (double v : c.value) EXPECT_EQ(v, 0.0);
  }
  std::vector<RankId> all{0, 1, 2, 3};
  PruningPlan whole = plan_ring_pruning(ring_of(4), all);
  Injection none = compensation_values(whole, zeros, ReduceOp::kSum);
  for (const auto& c : none.reduce) EXPECT_FALSE(c.compensated);
  std::vector<Vec> missing{{1}, {}, {1}, {1}};
  EXPECT_EQ(error_of([&] { compensation_values(p, missing, ReduceOp::kSum); }), "MissingContribution");
}

TEST(PrunedRing, ReducePhaseOwnsCorrectChunk) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const std::size_t k = 4 + rng() % 29, n = 1 + rng() % 70;
    const std::size_t block = 1 + rng() % 4, first = rng() % k;
    std::vector<RankId> sb;
    for (std::size_t j = 0; j < block; ++j) sb.push_back(static_cast<RankId>((first + j) % k));
    auto xs = random_vectors(rng, k, n);
    const ReduceOp op = static_cast<ReduceOp>(rng() % 3);
    PruningPlan p = plan_ring_pruning(ring_of(k), sb);
    Injection inj = compensation_values(p, xs, op);
    const Vec full = oracle::naive_reduce(xs, op);
    for (const auto& [pos, chunk] : pruned_ring_reduce_phase(p, inj, xs, op)) {
      const auto [b, e] = chunk_range(n, k, pos);
      EXPECT_EQ(chunk, Vec(full.begin() + b, full.begin() + e));
    }
    for (const auto& [pos, v] : pruned_ring_allreduce(p, inj, xs, op)) EXPECT_EQ(v, full);
  }
}

// Values the sandbox never depends on: non-compensated injection chunks and
// contributions of virtual ranks other than the injector.
TEST(PrunedRing, AnyValuesDoNotLeak) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 200; ++i) {
    const std::size_t k = 5 + rng() % 20, n = k + rng() % 40;
    std::vector<RankId> sb{static_cast<RankId>(rng() % (k - 2)), 0};
    sb[1] = sb[0] + 1;
    auto xs = random_vectors(rng, k, n);
    PruningPlan p = plan_ring_pruning(ring_of(k), sb);
    Injection inj = compensation_values(p, xs, ReduceOp::kSum);
    auto base = pruned_ring_allreduce(p, inj, xs, ReduceOp::kSum);

    Injection fuzzed = inj;
    for (auto& c : fuzzed.reduce) {
      if (!c.compensated) {
        for (auto& v : c.value) v = static_cast<double>(rng() % 1000);
      }
    }
    auto ys = xs;
    for (std::size_t r = 0; r < k; ++r) {
      const bool real = std::find(p.sandbox.begin(), p.sandbox.end(), r) != p.sandbox.end();
      if (!real) {
        for (auto& v : ys[r]) v = static_cast<double>(rng() % 1000);
      }
    }
    EXPECT_EQ(pruned_ring_allreduce(p, fuzzed, ys, ReduceOp::kSum), base);
  }
}

TEST(PrunedTree, RolesAndInjection) {
  // Root with two children; the sandbox node holds 3 ranks summing to 6.
  TreeTopology root{3, 0};
  TreePlan rp = plan_tree_pruning(root);
  EXPECT_EQ(rp.role, PruningPlan::Role::kRoot);
  EXPECT_EQ(rp.injector, std::optional<std::size_t>(1));
  std::vector<std::vector<Vec>> nodes{{{1}, {2}, {3}}, {{2}}, {{2}}};
  for (const auto& v : pruned_tree_allreduce(root, rp, nodes, ReduceOp::kSum)) EXPECT_EQ(v, Vec{10});

  TreeTopology leaf{3, 2};
  TreePlan lp = plan_tree_pruning(leaf);
  EXPECT_EQ(lp.role, PruningPlan::Role::kLeaf);
  EXPECT_EQ(lp.injector, std::optional<std::size_t>(0));
  for (const auto& v : pruned_tree_allreduce(leaf, lp, nodes, ReduceOp::kSum, Vec{99})) EXPECT_EQ(v, Vec{10});

  TreeTopology mid{7, 1};
  TreePlan mp = plan_tree_pruning(mid);
  EXPECT_EQ(mp.role, PruningPlan::Role::kIntermediate);
  EXPECT_EQ(mp.children, (std::vector<std::size_t>{3, 4}));
  std::vector<std::vector<Vec>> seven(7, std::vector<Vec>{{1}});
  for (const auto& v : pruned_tree_allreduce(mid, mp, seven, ReduceOp::kSum, Vec{0})) EXPECT_EQ(v, Vec{7});
}

TEST(Decompose, Mappings) {
  using P = std::vector<Phase>;
  EXPECT_EQ(decompose(CommKind::kAllReduce), (P{Phase::kReduce, Phase::kBroadcast}));
  EXPECT_EQ(decompose(CommKind::kReduceScatter), (P{Phase::kReduce}));
  EXPECT_EQ(decompose(CommKind::kAllGather), (P{Phase::kBroadcast}));
  EXPECT_EQ(decompose(CommKind::kBroadcast), (P{Phase::kBroadcast}));
  EXPECT_EQ(decompose(CommKind::kAllToAll), (P{Phase::kDirectExchange}));
  EXPECT_EQ(decompose(CommKind::kSend), (P{Phase::kDirectExchange}));
  EXPECT_EQ(decompose(CommKind::kRecv), (P{Phase::kDirectExchange}));
  EXPECT_TRUE(decompose(CommKind::kBarrier).empty());
  EXPECT_FALSE(parse_comm_kind("gather").has_value());
}

TEST(Instantiation, SmallWorld) {
  const CommGroups g = build_groups({2, 2, 0, 1, 2, 2});
  std::vector<RankId> sb{0, 1};
  InstantiationPlan p = plan_instantiation(g, sb);
  const auto want = oracle::groups_touching(g, sb);
  EXPECT_EQ(std::set<GroupId>(p.active_groups.begin(), p.active_groups.end()), want);
  for (RankId r : p.active_virtual) EXPECT_TRUE(r != 0 && r != 1);
  EXPECT_EQ(p.leader, p.active_virtual.empty() ? std::nullopt : std::optional<RankId>(p.active_virtual.front()));
  for (GroupId id : p.active_groups) {
    const auto& grp = g.at(id);
    std::uint32_t inst = 0;
    for (RankId r : grp.members) {
      inst += (r <= 1 || std::count(p.active_virtual.begin(), p.active_virtual.end(), r)) ? 1 : 0;
    }
    EXPECT_EQ(p.proxy_count.at(id), grp.members.size() - inst);
  }
}

TEST(Instantiation, WholeWorldIsIdentity) {
  const CommGroups g = build_groups({2, 2, 0, 2, 2, 2});
  std::vector<RankId> all(8);
  for (RankId r = 0; r < 8; ++r) all[r] = r;
  InstantiationPlan p = plan_instantiation(g, all);
  EXPECT_EQ(p.active_groups.size(), g.size());
  EXPECT_TRUE(p.active_virtual.empty());
  for (const auto& [id, n] : p.proxy_count) EXPECT_EQ(n, 0u);
  EXPECT_DOUBLE_EQ(p.reduction_factor(), 1.0);
}

TEST(Instantiation, TreeHintUsesParentAndChildren) {
  CommGroups g(16);
  CommGroup dp;
  dp.id = 0;
  dp.role = GroupRole::kData;
  for (RankId r = 0; r < 16; ++r) dp.members.push_back(r);
  g.add(dp);
  std::vector<RankId> sb{1};
  InstantiationPlan p = plan_instantiation(g, sb, AlgorithmHint::kTree);
  EXPECT_EQ(p.active_virtual, (std::vector<RankId>{0, 3, 4}));
  InstantiationPlan r = plan_instantiation(g, sb, AlgorithmHint::kRing);
  EXPECT_EQ(r.active_virtual, (std::vector<RankId>{0, 2}));
}

TEST(SkipTransfer, Precondition) {
  CommDescriptor d{CommKind::kAllReduce, 4, 1024, ReduceOp::kSum, AlgorithmHint::kRing};
  std::vector<RankId> members{4, 5, 6}, sandbox{0, 1}, touching{1, 2};
  CompletionRecord rec = skip_transfer(d, 17, members, sandbox);
  EXPECT_EQ(rec.occurrence, 17u);
  EXPECT_EQ(rec.bytes_moved, 0u);
  EXPECT_EQ(error_of([&] { skip_transfer(d, 1, touching, sandbox); }), "PreconditionViolated");
}

TEST(Sweep, DeterministicAndPassing) {
  SweepSummary a = pruning_sweep(200, 40, 7);
  SweepSummary b = pruning_sweep(200, 40, 7);
  EXPECT_EQ(a.to_text(), b.to_text());
  EXPECT_TRUE(a.ok()) << a.to_text();
  EXPECT_EQ(a.tree_cases, 120u);
}

}  // namespace
}  // namespace rankemu
