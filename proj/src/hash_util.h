// Copyright 2026 The rankemu Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string_view>

namespace rankemu::hashing {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

inline std::uint64_t mix(std::uint64_t h, std::string_view s) {
  // FNV-1a over the bytes, then folded in.
  std::uint64_t f = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    f ^= c;
    f *= 0x100000001b3ull;
  }
  return mix(h, f);
}

// Uniform double in [0, 1).
inline double unit(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

}  // namespace rankemu::hashing
