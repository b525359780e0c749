// Copyright 2026 The rankemu Authors.
// SPDX-License-Identifier: Apache-2.0

// Test-only reference implementations. They are deliberately naive and share
// no code with the library beyond its data types.

#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "rankemu/trace_graph.h"
#include "rankemu/workload.h"

namespace rankemu::oracle {

// Schedule by relaxation: repeat "start = latest predecessor end" and "sync
// members share the latest start" until nothing moves. Returns starts by node
// index, anchored at 0. `durations` is indexed by node index.
inline std::vector<Nanos> relaxed_schedule(const ExecutionGraph& g, const std::vector<Nanos>& durations) {
  const std::size_t n = g.size();
  std::map<NodeId, std::size_t> idx;
  for (std::size_t i = 0; i < n; ++i) idx[g.nodes()[i].id] = i;
  std::vector<std::vector<std::size_t>> preds(n);
  std::map<SyncGroupId, std::set<std::size_t>> sync;
  for (const auto& e : g.edges()) {
    if (e.kind == EdgeKind::kDirectional) {
      preds[idx.at(e.dst)].push_back(idx.at(e.src));
    } else {
      sync[e.sync].insert(idx.at(e.src));
      sync[e.sync].insert(idx.at(e.dst));
    }
  }
  std::vector<Nanos> start(n, 0);
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t p : preds[i]) {
        if (start[p] + durations[p] > start[i]) {
          start[i] = start[p] + durations[p];
          changed = true;
        }
      }
    }
    for (const auto& [id, members] : sync) {
      Nanos t = 0;
      for (std::size_t m : members) t = std::max(t, start[m]);
      for (std::size_t m : members) {
        if (start[m] != t) {
          start[m] = t;
          changed = true;
        }
      }
    }
  }
  if (n) {
    const Nanos lo = *std::min_element(start.begin(), start.end());
    for (auto& s : start) s -= lo;
  }
  return start;
}

inline Nanos makespan(const std::vector<Nanos>& start, const std::vector<Nanos>& durations) {
  Nanos lo = INT64_MAX, hi = INT64_MIN;
  for (std::size_t i = 0; i < start.size(); ++i) {
    lo = std::min(lo, start[i]);
    hi = std::max(hi, start[i] + durations[i]);
  }
  return start.empty() ? 0 : hi - lo;
}

// Longest directional path by enumerating every path from every source
// (exponential; small graphs only). Sync edges are ignored.
inline Nanos longest_path_enumerated(const ExecutionGraph& g, const std::vector<Nanos>& durations) {
  const std::size_t n = g.size();
  std::map<NodeId, std::size_t> idx;
  for (std::size_t i = 0; i < n; ++i) idx[g.nodes()[i].id] = i;
  std::vector<std::vector<std::size_t>> succ(n);
  std::vector<bool> has_pred(n, false);
  for (const auto& e : g.edges()) {
    if (e.kind != EdgeKind::kDirectional) continue;
    succ[idx.at(e.src)].push_back(idx.at(e.dst));
    has_pred[idx.at(e.dst)] = true;
  }
  Nanos best = 0;
  std::vector<std::pair<std::size_t, Nanos>> stack;
  for (std::size_t s = 0; s < n; ++s) {
    if (!has_pred[s]) stack.emplace_back(s, durations[s]);
  }
  while (!stack.empty()) {
    auto [v, len] = stack.back();
    stack.pop_back();
    best = std::max(best, len);
    for (std::size_t w : succ[v]) stack.emplace_back(w, len + durations[w]);
  }
  return best;
}

// Program-level schedule by relaxation over (rank, step) pairs: a step starts
// after its predecessor on the rank; all participants of a collective
// occurrence start at the latest of their ready times.
struct ProgramSchedule {
  std::vector<std::vector<Nanos>> start, duration;
  Nanos makespan = 0;
};

inline ProgramSchedule relaxed_program_schedule(const std::vector<RankProgram>& programs, const CommGroups& groups,
                                                const CostModel& cost) {
  ProgramSchedule s;
  std::map<std::pair<GroupId, std::string>, std::vector<std::pair<RankId, std::size_t>>> occ;
  for (const auto& p : programs) {
    s.start.emplace_back(p.steps.size(), 0);
    s.duration.emplace_back();
    for (std::size_t i = 0; i < p.steps.size(); ++i) {
      s.duration.back().push_back(step_duration(cost, p.rank, p.steps[i]));
      if (const auto* m = std::get_if<CommunicateStep>(&p.steps[i])) {
        occ[{m->descriptor.group, m->key}].emplace_back(p.rank, i);
      }
    }
  }
  (void)groups;
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t r = 0; r < programs.size(); ++r) {
      for (std::size_t i = 1; i < s.start[r].size(); ++i) {
        const Nanos ready = s.start[r][i - 1] + s.duration[r][i - 1];
        if (ready > s.start[r][i]) {
          s.start[r][i] = ready;
          changed = true;
        }
      }
    }
    for (const auto& [key, members] : occ) {
      Nanos t = 0;
      for (auto [r, i] : members) t = std::max(t, s.start[r][i]);
      for (auto [r, i] : members) {
        if (s.start[r][i] != t) {
          s.start[r][i] = t;
          changed = true;
        }
      }
    }
  }
  for (std::size_t r = 0; r < programs.size(); ++r) {
    for (std::size_t i = 0; i < s.start[r].size(); ++i) {
      s.makespan = std::max(s.makespan, s.start[r][i] + s.duration[r][i]);
    }
  }
  return s;
}

// Groups with at least one member in the sandbox.
inline std::set<GroupId> groups_touching(const CommGroups& groups, const std::vector<RankId>& sandbox) {
  std::set<GroupId> out;
  for (const auto& g : groups.groups()) {
    for (RankId r : g.members) {
      if (std::find(sandbox.begin(), sandbox.end(), r) != sandbox.end()) {
        out.insert(g.id);
        break;
      }
    }
  }
  return out;
}

// Element-wise reduction in member order.
inline std::vector<double> naive_reduce(const std::vector<std::vector<double>>& xs, ReduceOp op) {
  std::vector<double> acc = xs.at(0);
  for (std::size_t i = 1; i < xs.size(); ++i) {
    for (std::size_t j = 0; j < acc.size(); ++j) {
      const double v = xs[i][j];
      acc[j] = op == ReduceOp::kSum ? acc[j] + v : (op == ReduceOp::kMax ? std::max(acc[j], v) : std::min(acc[j], v));
    }
  }
  return acc;
}

}  // namespace rankemu::oracle
