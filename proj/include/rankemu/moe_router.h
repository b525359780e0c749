// Copyright 2026 The rankemu Authors.
// SPDX-License-Identifier: Apache-2.0

// Balance-ratio schedules for mocked MoE routing: given target imbalance
// statistics, produce per-event per-rank ratios, token counts and gating
// logits that realize them.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace rankemu {

struct BalanceRatioProfile {
  double br_min = 1;
  double br_max = 1;
  double br_avg = 1;
  double br_std = 0;
  double br_med = 1;
  double br_skew = 0;
};

// Row-major (event, rank) matrix of balance ratios.
struct BrSchedule {
  std::uint32_t events = 0;
  std::uint32_t ranks = 0;
  std::vector<double> values;

  double at(std::uint32_t event, std::uint32_t rank) const { return values[event * ranks + rank]; }
  std::span<const double> row(std::uint32_t event) const {
    return {values.data() + static_cast<std::size_t>(event) * ranks, ranks};
  }
};

// Throws kInfeasibleProfile when no distribution on [br_min, br_max] can have
// the requested moments.
void check_profile(const BalanceRatioProfile& p);

BrSchedule derive_schedule(const BalanceRatioProfile& profile, std::uint32_t events,
                           std::uint32_t ranks, std::uint64_t seed,
                           bool normalize_per_event = false);

// Pooled min / max / mean / population std / median / Fisher skewness.
BalanceRatioProfile stats(std::span<const double> values);
inline BalanceRatioProfile stats(const BrSchedule& s) { return stats(s.values); }

// Tokens per rank for one event row. With `normalize` the counts are
// apportioned by largest remainder and sum to total_tokens.
std::vector<std::uint64_t> br_to_counts(std::span<const double> row, std::uint64_t total_tokens,
                                        bool normalize = true);

// Per-token logits (tokens x experts, row-major) whose top-k selection
// assigns exactly counts[e] tokens to expert e. Throws kInfeasibleCounts.
std::vector<float> counts_to_logits(std::span<const std::uint64_t> counts, std::uint64_t tokens,
                                    std::uint32_t top_k);

// Top-k experts of every token (ties to the lowest expert id), counted.
std::vector<std::uint64_t> select_top_k(std::span<const float> logits, std::uint64_t tokens,
                                        std::uint32_t experts, std::uint32_t top_k);

std::string schedule_csv(const BrSchedule& s);

}  // namespace rankemu
