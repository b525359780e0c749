// Copyright 2026 The rankemu Authors.
// SPDX-License-Identifier: Apache-2.0

#include "rankemu/moe_router.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "rankemu/error.h"

namespace rankemu {
namespace {

constexpr int kShapeIterations = 60;
constexpr int kBisectIterations = 40;
constexpr int kSeedRetries = 8;

double mean(const std::vector<double>& x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double median(std::vector<double> x) {
  const std::size_t n = x.size();
  std::nth_element(x.begin(), x.begin() + n / 2, x.end());
  double hi = x[n / 2];
  if (n % 2 == 1) return hi;
  double lo = *std::max_element(x.begin(), x.begin() + n / 2);
  return (lo + hi) / 2;
}

// Maps standard normal draws through the exponential family
// y = (exp(lambda z) - 1) / lambda and then alternates moment corrections:
// affine fit to (avg, std), clipping to [min, max] with the extremes pinned,
// and a piecewise-linear warp that puts the median on target.
std::vector<double> shape(const BalanceRatioProfile& p, const std::vector<double>& z, double lambda) {
  std::vector<double> x(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    x[i] = std::abs(lambda) > 1e-9 ? std::expm1(lambda * z[i]) / lambda : z[i];
  }
  for (int it = 0; it < kShapeIterations; ++it) {
    const double m = mean(x);
    double var = 0;
    for (double v : x) var += (v - m) * (v - m);
    const double sd = std::sqrt(var / static_cast<double>(x.size()));
    for (double& v : x) {
      v = sd > 0 ? (v - m) / sd * p.br_std + p.br_avg : p.br_avg;
      v = std::clamp(v, p.br_min, p.br_max);
    }
    auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    *lo = p.br_min;
    *hi = p.br_max;
    const double mc = median(x);
    if (mc <= p.br_min || mc >= p.br_max) continue;
    for (double& v : x) {
      v = v <= mc ? p.br_min + (v - p.br_min) * (p.br_med - p.br_min) / (mc - p.br_min)
                  : p.br_med + (v - mc) * (p.br_max - p.br_med) / (p.br_max - mc);
    }
  }
  return x;
}

bool within(const BalanceRatioProfile& got, const BalanceRatioProfile& want) {
  auto rel = [](double a, double b) { return std::abs(a - b) <= 0.05 * std::abs(b) + 1e-12; };
  return rel(got.br_avg, want.br_avg) && rel(got.br_std, want.br_std) && rel(got.br_med, want.br_med) &&
         std::abs(got.br_min - want.br_min) <= 0.05 && std::abs(got.br_max - want.br_max) <= 0.05 &&
         std::abs(got.br_skew - want.br_skew) <= 0.15;
}

double fit_error(const BalanceRatioProfile& got, const BalanceRatioProfile& want) {
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-9); };
  return rel(got.br_avg, want.br_avg) + rel(got.br_std, want.br_std) + rel(got.br_med, want.br_med) +
         std::abs(got.br_min - want.br_min) + std::abs(got.br_max - want.br_max) +
         std::abs(got.br_skew - want.br_skew);
}

std::vector<double> derive_values(const BalanceRatioProfile& p, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> z(n);
  for (double& v : z) v = normal(rng);
  double lo = -6, hi = 6;
  for (int i = 0; i < kBisectIterations; ++i) {
    const double mid = (lo + hi) / 2;
    if (stats(shape(p, z, mid)).br_skew < p.br_skew) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return shape(p, z, (lo + hi) / 2);
}

}  // namespace

void check_profile(const BalanceRatioProfile& p) {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::kInfeasibleProfile, why); };
  for (double v : {p.br_min, p.br_max, p.br_avg, p.br_std, p.br_med, p.br_skew}) {
    if (!std::isfinite(v)) fail("non-finite statistic");
  }
  if (p.br_min < 0) fail("br_min must be non-negative");
  if (p.br_min > p.br_max) fail("br_min > br_max");
  if (p.br_avg < p.br_min || p.br_avg > p.br_max) fail("br_avg outside [br_min, br_max]");
  if (p.br_med < p.br_min || p.br_med > p.br_max) fail("br_med outside [br_min, br_max]");
  if (p.br_std < 0) fail("br_std must be non-negative");
  // Bhatia-Davis bound on the variance of a bounded distribution.
  const double bound = (p.br_max - p.br_avg) * (p.br_avg - p.br_min);
  if (p.br_std * p.br_std > bound + 1e-12) fail("br_std too large for the [br_min, br_max] range");
  if (p.br_std == 0 && (p.br_min != p.br_max || p.br_med != p.br_avg)) {
    fail("zero br_std requires a single value");
  }
  if (p.br_std > 0 && p.br_min == p.br_max) fail("positive br_std with br_min == br_max");
}

BrSchedule derive_schedule(const BalanceRatioProfile& profile, std::uint32_t events, std::uint32_t ranks,
                           std::uint64_t seed, bool normalize_per_event) {
  const std::size_t n = static_cast<std::size_t>(events) * ranks;
  if (n < 8) throw Error(ErrorCode::kInvalidArgument, "need events*ranks >= 8 samples");
  check_profile(profile);
  BrSchedule out{events, ranks, {}};
  if (profile.br_std == 0) {
    out.values.assign(n, profile.br_avg);
  } else {
    double best_err = 0;
    for (int attempt = 0; attempt < kSeedRetries; ++attempt) {
      auto values = derive_values(profile, n, seed + static_cast<std::uint64_t>(attempt) * 0x9e3779b9ull);
      const auto got = stats(values);
      const double err = fit_error(got, profile);
      if (out.values.empty() || err < best_err) {
        out.values = std::move(values);
        best_err = err;
      }
      if (within(got, profile)) break;
    }
  }
  if (normalize_per_event) {
    for (std::uint32_t e = 0; e < events; ++e) {
      double sum = 0;
      for (std::uint32_t r = 0; r < ranks; ++r) sum += out.values[e * ranks + r];
      if (sum <= 0) continue;
      const double scale = static_cast<double>(ranks) / sum;
      for (std::uint32_t r = 0; r < ranks; ++r) out.values[e * ranks + r] *= scale;
    }
  }
  return out;
}

BalanceRatioProfile stats(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::kInvalidArgument, "stats of an empty schedule");
  std::vector<double> x(values.begin(), values.end());
  BalanceRatioProfile p;
  auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  p.br_min = *lo;
  p.br_max = *hi;
  p.br_avg = mean(x);
  double m2 = 0, m3 = 0;
  for (double v : x) {
    const double d = v - p.br_avg;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= static_cast<double>(x.size());
  m3 /= static_cast<double>(x.size());
  p.br_std = std::sqrt(m2);
  p.br_skew = m2 > 0 ? m3 / std::pow(m2, 1.5) : 0.0;
  p.br_med = median(std::move(x));
  return p;
}

std::vector<std::uint64_t> br_to_counts(std::span<const double> row, std::uint64_t total_tokens, bool normalize) {
  const std::size_t n = row.size();
  std::vector<std::uint64_t> counts(n, 0);
  if (n == 0) return counts;
  if (!normalize) {
    for (std::size_t r = 0; r < n; ++r) {
      counts[r] = static_cast<std::uint64_t>(std::llround(row[r] * static_cast<double>(total_tokens) / n));
    }
    return counts;
  }
  const double sum = std::accumulate(row.begin(), row.end(), 0.0);
  if (sum <= 0) throw Error(ErrorCode::kInvalidArgument, "balance ratios sum to zero");
  std::vector<double> frac(n);
  std::uint64_t assigned = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const double quota = row[r] * static_cast<double>(total_tokens) / sum;
    counts[r] = static_cast<std::uint64_t>(std::floor(quota));
    frac[r] = quota - std::floor(quota);
    assigned += counts[r];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t i = 0; assigned < total_tokens; i = (i + 1) % n, ++assigned) ++counts[order[i]];
  return counts;
}

std::vector<float> counts_to_logits(std::span<const std::uint64_t> counts, std::uint64_t tokens,
                                    std::uint32_t top_k) {
  const std::size_t experts = counts.size();
  if (top_k == 0 || top_k > experts) {
    throw Error(ErrorCode::kInfeasibleCounts, "top_k must be in [1, experts]");
  }
  std::uint64_t total = 0;
  for (std::size_t e = 0; e < experts; ++e) {
    if (counts[e] > tokens) {
      throw Error(ErrorCode::kInfeasibleCounts,
                  "expert " + std::to_string(e) + " needs " + std::to_string(counts[e]) + " > " +
                      std::to_string(tokens) + " tokens");
    }
    total += counts[e];
  }
  if (total != tokens * top_k) {
    throw Error(ErrorCode::kInfeasibleCounts,
                "counts sum to " + std::to_string(total) + ", expected tokens*top_k=" + std::to_string(tokens * top_k));
  }
  // Lay the expert list out column-major over a tokens x top_k grid: an
  // expert's run is at most `tokens` long, so it never hits a token twice.
  std::vector<float> logits(tokens * experts, 0.0f);
  std::uint64_t p = 0;
  for (std::size_t e = 0; e < experts; ++e) {
    for (std::uint64_t c = 0; c < counts[e]; ++c, ++p) logits[(p % tokens) * experts + e] = 10.0f;
  }
  return logits;
}

std::vector<std::uint64_t> select_top_k(std::span<const float> logits, std::uint64_t tokens, std::uint32_t experts,
                                        std::uint32_t top_k) {
  std::vector<std::uint64_t> counts(experts, 0);
  std::vector<std::uint32_t> idx(experts);
  for (std::uint64_t t = 0; t < tokens; ++t) {
    const float* row = logits.data() + t * experts;
    std::iota(idx.begin(), idx.end(), 0u);
    std::partial_sort(idx.begin(), idx.begin() + top_k, idx.end(), [&](std::uint32_t a, std::uint32_t b) {
      return row[a] != row[b] ? row[a] > row[b] : a < b;
    });
    for (std::uint32_t i = 0; i < top_k; ++i) ++counts[idx[i]];
  }
  return counts;
}

std::string schedule_csv(const BrSchedule& s) {
  std::ostringstream os;
  os.precision(6);
  os << "event";
  for (std::uint32_t r = 0; r < s.ranks; ++r) os << ",r" << r;
  os << '\n';
  for (std::uint32_t e = 0; e < s.events; ++e) {
    os << e;
    for (std::uint32_t r = 0; r < s.ranks; ++r) os << ',' << s.at(e, r);
    os << '\n';
  }
  return os.str();
}

}  // namespace rankemu
