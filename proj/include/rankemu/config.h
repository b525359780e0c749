// Copyright 2026 The rankemu Authors.
// SPDX-License-Identifier: Apache-2.0

// Run configuration read from an INI-style file:
//
//   [parallelism]  preset = M1/S.A, world = 16, tp/pp/vpp/ep/dp/ga = n
//   [cost]         compute_ns, p2p_ns, ..., override.<label> = ns
//   [moe]          enabled, br_min .. br_skew, events, normalize, seed
//   [inject]       <any name> = <rule>    (see parse_injection_rule)
//   [run]          seed, n_slots, sandbox, slice_size, jitter, pool sizes
//
// Unknown sections or keys are rejected.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rankemu/coordinator.h"
#include "rankemu/moe_router.h"
#include "rankemu/replayer.h"
#include "rankemu/workload.h"

namespace rankemu {

struct MoeConfig {
  bool enabled = false;
  BalanceRatioProfile profile;
  std::uint32_t events = 64;
  bool normalize = false;
  std::uint64_t seed = 0;
};

struct RunConfig {
  std::string preset;  // empty: explicit parallelism only
  ParallelismSpec spec;
  CostModel cost;
  MoeConfig moe;
  std::vector<InjectionRule> rules;

  std::uint64_t seed = 0;
  std::uint32_t n_slots = 1;
  std::uint64_t store_capacity = UINT64_MAX;
  bool allow_spill = false;
  std::vector<RankId> sandbox{0};
  std::uint32_t slice_size = 1;
  double jitter = 0;
  PoolConfig pool;
  std::uint32_t verify_cases = 1000;

  // Checks the parallel layout and that the sandbox lies inside the world.
  // Throws kConfigError / kInvalidSpec / kGaTooSmall.
  void check() const;
};

// Throws kConfigError with the offending line or key.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::string& path);

// "a-b" (inclusive), "a" or "a,b,c". Throws kConfigError.
std::vector<RankId> parse_rank_set(std::string_view text);

// Balance-ratio schedule for the configured MoE profile, or nullopt when
// routing imbalance is disabled.
std::optional<BrSchedule> moe_schedule(const RunConfig& config);

}  // namespace rankemu
