// Copyright 2026 The rankemu Authors.
// SPDX-License-Identifier: Apache-2.0

#include "rankemu/replayer.h"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <queue>
#include <set>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "rankemu/collective.h"
#include "rankemu/error.h"
#include "rankemu/slicer.h"

namespace rankemu {

// ---- Full simulation --------------------------------------------------------------

FullSimulation simulate_full(std::span<const RankProgram> programs, const CommGroups& groups,
                             const CostModel& cost) {
  const std::size_t world = programs.size();
  FullSimulation sim;
  sim.start.resize(world);
  sim.duration.resize(world);
  for (std::size_t r = 0; r < world; ++r) {
    sim.start[r].assign(programs[r].steps.size(), 0);
    sim.duration[r].assign(programs[r].steps.size(), 0);
  }

  struct Pending {
    std::size_t expected = 0;
    std::vector<RankId> ranks;
    Nanos ready = 0;
  };
  std::map<std::pair<GroupId, std::string>, Pending> pending;
  std::vector<std::size_t> pc(world, 0);
  std::vector<Nanos> clock(world, 0);
  std::deque<RankId> work;
  for (RankId r = 0; r < world; ++r) work.push_back(r);

  while (!work.empty()) {
    const RankId r = work.front();
    work.pop_front();
    const auto& steps = programs[r].steps;
    while (pc[r] < steps.size()) {
      const Step& step = steps[pc[r]];
      const auto* comm = std::get_if<CommunicateStep>(&step);
      if (!comm) {
        const Nanos d = step_duration(cost, r, step);
        sim.start[r][pc[r]] = clock[r];
        sim.duration[r][pc[r]] = d;
        clock[r] += d;
        ++pc[r];
        continue;
      }
      auto& occ = pending[{comm->descriptor.group, comm->key}];
      if (occ.ranks.empty()) occ.expected = participants(groups, r, *comm).size();
      occ.ranks.push_back(r);
      occ.ready = std::max(occ.ready, clock[r]);
      if (occ.ranks.size() < occ.expected) break;
      const Nanos t = occ.ready;
      for (RankId m : occ.ranks) {
        const Step& ms = programs[m].steps[pc[m]];
        const Nanos d = step_duration(cost, m, ms);
        sim.start[m][pc[m]] = t;
        sim.duration[m][pc[m]] = d;
        clock[m] = t + d;
        ++pc[m];
        if (m != r) work.push_back(m);
      }
      pending.erase({comm->descriptor.group, comm->key});
    }
  }
  for (RankId r = 0; r < world; ++r) {
    if (pc[r] < programs[r].steps.size()) {
      throw Error(ErrorCode::kDeadlock, "rank " + std::to_string(r) + " stuck at step " + std::to_string(pc[r]) +
                                            " (" + std::string(step_label(programs[r].steps[pc[r]])) + ")");
    }
  }
  sim.memory.reserve(world);
  for (RankId r = 0; r < world; ++r) {
    sim.memory.push_back(memory_timeline(programs[r], sim.start[r], sim.duration[r], cost));
    for (std::size_t i = 0; i < sim.start[r].size(); ++i) {
      sim.makespan = std::max(sim.makespan, sim.start[r][i] + sim.duration[r][i]);
    }
  }
  return sim;
}

// ---- Emulation ----------------------------------------------------------------------

namespace {

bool step_matches(const GraphNode& node, const Step& step) {
  if (const auto* c = std::get_if<ComputeStep>(&step)) {
    const auto* span = node.compute();
    return span && span->label == c->label && span->microbatch == c->microbatch;
  }
  const auto& m = std::get<CommunicateStep>(step);
  const auto* ev = node.comm();
  return ev && ev->descriptor == m.descriptor && ev->tag == m.tag;
}

bool close_enough(const Payload& a, const Payload& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
    if (std::abs(a[i] - b[i]) > 1e-9 * scale) return false;
  }
  return true;
}

// GPU-side staging area for the payloads virtual ranks feed into sandbox
// collectives. Entries are node indices.
class BufferPool {
 public:
  explicit BufferPool(const PoolConfig& config, PoolStats& stats) : config_(config), stats_(stats) {}

  void prefetch(std::size_t node, std::uint64_t bytes) {
    if (resident_.count(node) || done_.count(node)) return;
    if (used_ + bytes > config_.gpu_capacity) return;
    insert(node, bytes);
    prefetched_.push_back(node);
    ++stats_.prefetches;
  }

  void consume(std::size_t node, std::uint64_t bytes) {
    if (!resident_.count(node)) {
      // Make room by dropping prefetched payloads that are not in use yet.
      while (used_ + bytes > config_.gpu_capacity && !prefetched_.empty()) {
        const std::size_t victim = prefetched_.back();
        prefetched_.pop_back();
        if (victim == node) continue;
        used_ -= resident_.at(victim);
        resident_.erase(victim);
      }
      if (used_ + bytes > config_.gpu_capacity) {
        throw Error(ErrorCode::kPoolOverflow, "no room for a " + std::to_string(bytes) + "-byte payload");
      }
      insert(node, bytes);
      ++stats_.demand_loads;
    }
    prefetched_.erase(std::remove(prefetched_.begin(), prefetched_.end(), node), prefetched_.end());
    ++stats_.consumed;
  }

  void evict(std::size_t node) {
    auto it = resident_.find(node);
    if (it == resident_.end()) return;
    used_ -= it->second;
    resident_.erase(it);
    done_.insert(node);
    ++stats_.evictions;
  }

 private:
  void insert(std::size_t node, std::uint64_t bytes) {
    resident_[node] = bytes;
    used_ += bytes;
    stats_.max_resident_bytes = std::max(stats_.max_resident_bytes, used_);
  }

  PoolConfig config_;
  PoolStats& stats_;
  std::map<std::size_t, std::uint64_t> resident_;
  std::vector<std::size_t> prefetched_;
  std::set<std::size_t> done_;
  std::uint64_t used_ = 0;
};

}  // namespace

EmulationReport emulate(const ExecutionGraph& calibrated, const EmulationSetup& setup) {
  const ExecutionGraph& g = calibrated;
  const std::uint32_t world = g.world_size();
  if (!setup.groups) throw Error(ErrorCode::kInvalidArgument, "emulation needs communication groups");
  for (const auto& n : g.nodes()) {
    if (!n.start || !n.duration) {
      throw Error(ErrorCode::kNotCalibrated, "node " + std::to_string(n.id) + " lacks start or duration");
    }
  }
  std::set<RankId> sandbox_set(setup.sandbox.begin(), setup.sandbox.end());
  if (sandbox_set.empty()) throw Error(ErrorCode::kInvalidArgument, "empty sandbox");
  for (RankId r : sandbox_set) {
    if (r >= world) throw Error(ErrorCode::kUnknownRank, "sandbox rank " + std::to_string(r) + " outside world");
  }
  const std::vector<RankId> sandbox(sandbox_set.begin(), sandbox_set.end());

  EmulationReport report;
  report.sandbox = sandbox;
  const InstantiationPlan plan = plan_instantiation(*setup.groups, sandbox);
  report.active_virtual = plan.active_virtual;

  std::vector<bool> in_sandbox(world, false), participating(world, false);
  for (RankId r : sandbox) in_sandbox[r] = participating[r] = true;
  for (RankId r : plan.active_virtual) participating[r] = true;

  const std::size_t n = g.size();
  std::vector<std::size_t> pos(n, 0);
  for (RankId r = 0; r < world; ++r) {
    const auto& order = g.rank_order(r);
    for (std::size_t i = 0; i < order.size(); ++i) pos[g.index_of(order[i])] = i;
  }

  // Sandbox durations come from the cost model applied to the programs.
  std::vector<Nanos> dur(n);
  for (std::size_t i = 0; i < n; ++i) dur[i] = *g.nodes()[i].duration;
  for (RankId r : sandbox) {
    const auto& order = g.rank_order(r);
    if (r >= setup.programs.size() || setup.programs[r].steps.size() != order.size()) {
      throw Error(ErrorCode::kGraphProgramMismatch,
                  "rank " + std::to_string(r) + " program length differs from its " + std::to_string(order.size()) +
                      " graph nodes");
    }
    const auto& steps = setup.programs[r].steps;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const std::size_t idx = g.index_of(order[i]);
      if (!step_matches(g.nodes()[idx], steps[i])) {
        throw Error(ErrorCode::kGraphProgramMismatch, "rank " + std::to_string(r) + " step " + std::to_string(i) +
                                                          " (" + std::string(step_label(steps[i])) +
                                                          ") differs from node " + std::to_string(order[i]));
      }
      dur[idx] = step_duration(setup.cost, r, steps[i]);
    }
  }

  // Synchronization groups by node index.
  constexpr std::size_t kNoSync = static_cast<std::size_t>(-1);
  std::vector<std::size_t> sync_of(n, kNoSync);
  std::vector<std::vector<std::size_t>> syncs;
  for (const auto& [id, members] : g.sync_groups()) {
    std::vector<std::size_t> idx;
    for (NodeId m : members) {
      idx.push_back(g.index_of(m));
      sync_of[idx.back()] = syncs.size();
    }
    syncs.push_back(std::move(idx));
  }
  const std::size_t ns = syncs.size();
  std::vector<std::size_t> need(ns, 0), arrived(ns, 0);
  std::vector<Nanos> ready(ns, 0), fixed(ns, 0);
  std::vector<bool> touches_sandbox(ns, false);
  for (std::size_t s = 0; s < ns; ++s) {
    for (std::size_t i : syncs[s]) {
      const GraphNode& node = g.nodes()[i];
      if (participating[node.rank]) {
        ++need[s];
      } else {
        fixed[s] = std::max(fixed[s], *node.start);
      }
      if (in_sandbox[node.rank]) touches_sandbox[s] = true;
    }
  }

  // Payload staging: every virtual-rank contribution to a sandbox collective.
  auto payload_bytes = [&](std::size_t i) { return g.nodes()[i].comm()->descriptor.bytes; };
  for (std::size_t s = 0; s < ns; ++s) {
    if (!touches_sandbox[s]) continue;
    for (std::size_t i : syncs[s]) {
      if (in_sandbox[g.nodes()[i].rank]) continue;
      const std::uint64_t b = payload_bytes(i);
      if (b > setup.pool.gpu_capacity) {
        throw Error(ErrorCode::kPoolOverflow, "payload of node " + std::to_string(g.nodes()[i].id) + " (" +
                                                  std::to_string(b) + " bytes) exceeds the GPU pool");
      }
      report.pool.staged_bytes += b;
    }
  }
  if (report.pool.staged_bytes > setup.pool.cpu_capacity) {
    throw Error(ErrorCode::kPoolOverflow, "staged payloads (" + std::to_string(report.pool.staged_bytes) +
                                              " bytes) exceed the CPU pool");
  }
  BufferPool pool(setup.pool, report.pool);
  auto pooled = [&](std::size_t i) {
    const GraphNode& node = g.nodes()[i];
    return node.is_comm() && !in_sandbox[node.rank] && sync_of[i] != kNoSync && touches_sandbox[sync_of[i]];
  };

  // Event loop over the participating ranks.
  std::vector<Nanos> start(n, 0);
  std::vector<bool> emulated(n, false);
  std::vector<std::size_t> next(world, 0);
  std::vector<Nanos> clock(world, 0);
  using Event = std::pair<Nanos, std::size_t>;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events;

  auto launch = [&](std::size_t i, Nanos t) {
    start[i] = t;
    emulated[i] = true;
    ++report.nodes_visited;
    const GraphNode& node = g.nodes()[i];
    if (pooled(i)) {
      pool.consume(i, payload_bytes(i));
    } else if (!node.is_comm() && !in_sandbox[node.rank]) {
      const auto& order = g.rank_order(node.rank);
      std::uint32_t ahead = 0;
      for (std::size_t p = pos[i] + 1; p < order.size() && ahead < setup.pool.prefetch_depth; ++p) {
        const std::size_t j = g.index_of(order[p]);
        if (!pooled(j)) continue;
        pool.prefetch(j, payload_bytes(j));
        ++ahead;
      }
    }
    events.push({t + dur[i], i});
  };
  auto advance = [&](RankId r) {
    const auto& order = g.rank_order(r);
    if (next[r] >= order.size()) return;
    const std::size_t i = g.index_of(order[next[r]]);
    Nanos earliest = clock[r];
    if (!in_sandbox[r]) earliest = std::max(earliest, *g.nodes()[i].start);
    const std::size_t s = sync_of[i];
    if (s == kNoSync) {
      launch(i, earliest);
      return;
    }
    ready[s] = std::max(ready[s], earliest);
    if (++arrived[s] < need[s]) return;
    const Nanos t = std::max(ready[s], fixed[s]);
    for (std::size_t m : syncs[s]) {
      if (participating[g.nodes()[m].rank]) launch(m, t);
    }
  };

  for (RankId r = 0; r < world; ++r) {
    if (participating[r]) advance(r);
  }
  while (!events.empty()) {
    const auto [t, i] = events.top();
    events.pop();
    const RankId r = g.nodes()[i].rank;
    if (pooled(i)) pool.evict(i);
    clock[r] = t;
    ++next[r];
    advance(r);
  }
  for (RankId r = 0; r < world; ++r) {
    if (participating[r] && next[r] < g.rank_order(r).size()) {
      throw Error(ErrorCode::kDeadlock, "emulated rank " + std::to_string(r) + " stuck at node " +
                                            std::to_string(g.rank_order(r)[next[r]]));
    }
  }

  // Timeline and iteration time.
  Nanos lo = std::numeric_limits<Nanos>::max(), hi = std::numeric_limits<Nanos>::min();
  report.nodes.reserve(n);
  for (RankId r = 0; r < world; ++r) {
    for (NodeId id : g.rank_order(r)) {
      const std::size_t i = g.index_of(id);
      const GraphNode& node = g.nodes()[i];
      NodeTiming t{node.id, node.rank, std::string(node.label()), emulated[i] ? start[i] : *node.start,
                   emulated[i] ? dur[i] : *node.duration, emulated[i]};
      lo = std::min(lo, t.start);
      hi = std::max(hi, t.start + t.duration);
      report.nodes.push_back(std::move(t));
    }
  }
  report.iteration_time = n == 0 ? 0 : hi - lo;

  // Traffic accounting.
  for (std::size_t s = 0; s < ns; ++s) {
    if (need[s] == 0) continue;
    const CommDescriptor& d = g.nodes()[syncs[s].front()].comm()->descriptor;
    if (touches_sandbox[s]) {
      report.bytes_moved += d.bytes * need[s];
      if (need[s] < syncs[s].size() || std::any_of(syncs[s].begin(), syncs[s].end(), [&](std::size_t i) {
            return !in_sandbox[g.nodes()[i].rank];
          })) {
        ++report.pruned_collectives;
      }
      continue;
    }
    if (setup.skip_transfers) {
      std::vector<RankId> members;
      for (std::size_t i : syncs[s]) members.push_back(g.nodes()[i].rank);
      report.bytes_moved += skip_transfer(d, s, members, sandbox).bytes_moved;
      ++report.skipped_transfers;
    } else {
      report.bytes_moved += d.bytes * need[s];
    }
  }

  // Numeric check of pruned reductions against the collected payloads.
  if (!setup.records.empty()) {
    std::map<std::pair<GroupId, std::string>, const OccurrenceRecord*> by_key;
    for (const auto& rec : setup.records) by_key[{rec.group, rec.key}] = &rec;
    std::set<std::pair<GroupId, std::string>> seen;
    for (RankId r : sandbox) {
      for (const Step& step : setup.programs[r].steps) {
        const auto* m = std::get_if<CommunicateStep>(&step);
        if (!m) continue;
        const CommKind kind = m->descriptor.kind;
        if (kind != CommKind::kAllReduce && kind != CommKind::kReduceScatter) continue;
        if (m->descriptor.algorithm == AlgorithmHint::kTree) continue;
        const auto key = std::make_pair(m->descriptor.group, m->key);
        if (!seen.insert(key).second) continue;
        auto it = by_key.find(key);
        if (it == by_key.end() || it->second->injected) continue;
        const OccurrenceRecord& rec = *it->second;
        const auto& members = setup.groups->at(m->descriptor.group).members;
        std::vector<Vec> contributions;
        std::vector<RankId> local;
        bool complete = true;
        for (RankId member : members) {
          auto in = rec.inputs.find(member);
          if (in == rec.inputs.end()) {
            complete = false;
            break;
          }
          contributions.push_back(in->second);
          if (in_sandbox[member]) local.push_back(member);
        }
        if (!complete) continue;
        const ReduceOp op = m->descriptor.reduce_op.value_or(ReduceOp::kSum);
        PruningPlan pp;
        try {
          pp = plan_ring_pruning(RingTopology{members}, local);
        } catch (const Error& e) {
          if (e.code() == ErrorCode::kNonContiguousSandbox) continue;
          throw;
        }
        const Injection inj = compensation_values(pp, contributions, op);
        const auto result = kind == CommKind::kAllReduce ? pruned_ring_allreduce(pp, inj, contributions, op)
                                                         : pruned_ring_reduce_phase(pp, inj, contributions, op);
        ++report.numeric_checks;
        bool ok = true;
        for (std::size_t p : pp.sandbox) {
          auto out = rec.outputs.find(members[p]);
          auto got = result.find(p);
          if (out == rec.outputs.end() || got == result.end() || !close_enough(got->second, out->second)) ok = false;
        }
        if (!ok) ++report.numeric_mismatches;
      }
    }
  }

  // Memory of the sandbox ranks.
  for (RankId r : sandbox) {
    const auto& order = g.rank_order(r);
    std::vector<Nanos> s(order.size()), d(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
      const std::size_t idx = g.index_of(order[i]);
      s[i] = start[idx];
      d[i] = dur[idx];
    }
    MemoryTimeline mt = memory_timeline(setup.programs[r], s, d, setup.cost);
    report.peak_memory[r] = mt.peak;
    report.memory[r] = std::move(mt);
  }
  return report;
}

// ---- What-if and fault injection --------------------------------------------------

namespace {

bool label_present(const ExecutionGraph& g, const std::string& key) {
  for (const auto& n : g.nodes()) {
    if (n.label() == key) return true;
    if (const auto* c = n.compute(); c && c->microbatch && c->label + "@" + std::to_string(*c->microbatch) == key) {
      return true;
    }
  }
  return false;
}

bool overridden(const GraphNode& n, const std::map<std::string, Nanos>& overrides) {
  if (overrides.count(std::string(n.label()))) return true;
  const auto* c = n.compute();
  return c && c->microbatch && overrides.count(c->label + "@" + std::to_string(*c->microbatch));
}

}  // namespace

EmulationReport what_if(const ExecutionGraph& calibrated, const EmulationSetup& setup,
                        const std::map<std::string, Nanos>& overrides) {
  for (const auto& [key, d] : overrides) {
    if (!label_present(calibrated, key)) throw Error(ErrorCode::kUnknownLabel, "no node labelled '" + key + "'");
    if (d < 0) throw Error(ErrorCode::kInvalidArgument, "negative duration for '" + key + "'");
  }
  EmulationSetup modified = setup;
  for (const auto& [key, d] : overrides) modified.cost.label_overrides[key] = d;
  ExecutionGraph timed = strip_timing(calibrated);
  for (const auto& n : calibrated.nodes()) {
    GraphNode& m = timed.mutable_node(n.id);
    m.duration = overridden(n, overrides) ? modified.cost.node_duration(n) : *n.duration;
  }
  return emulate(calibrate(timed), modified);
}

EmulationReport fault_inject(const ExecutionGraph& calibrated, const EmulationSetup& setup, RankId rank,
                             double factor) {
  if (rank >= calibrated.world_size()) {
    throw Error(ErrorCode::kUnknownRank, "rank " + std::to_string(rank) + " outside world of " +
                                             std::to_string(calibrated.world_size()));
  }
  if (!std::isfinite(factor) || factor <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "slowdown factor must be positive and finite");
  }
  const EmulationReport baseline = emulate(calibrated, setup);
  EmulationSetup modified = setup;
  auto [it, fresh] = modified.cost.compute_scale.emplace(rank, factor);
  if (!fresh) it->second *= factor;
  ExecutionGraph timed = strip_timing(calibrated);
  for (const auto& n : calibrated.nodes()) {
    Nanos d = *n.duration;
    if (n.rank == rank && n.compute()) d = static_cast<Nanos>(std::llround(static_cast<double>(d) * factor));
    timed.mutable_node(n.id).duration = d;
  }
  EmulationReport out = emulate(calibrate(timed), modified);
  out.makespan_delta = out.iteration_time - baseline.iteration_time;
  return out;
}

// ---- Export ---------------------------------------------------------------------------

std::string export_chrome_trace(const EmulationReport& report) {
  nlohmann::json events = nlohmann::json::array();
  std::set<RankId> ranks;
  for (const auto& t : report.nodes) ranks.insert(t.rank);
  for (RankId r : ranks) {
    events.push_back({{"name", "process_name"},
                      {"ph", "M"},
                      {"pid", r},
                      {"args", {{"name", "rank " + std::to_string(r)}}}});
  }
  for (const auto& t : report.nodes) {
    events.push_back({{"name", t.label},
                      {"ph", "X"},
                      {"ts", static_cast<double>(t.start) / 1000.0},
                      {"dur", static_cast<double>(t.duration) / 1000.0},
                      {"pid", t.rank},
                      {"tid", 0},
                      {"args", {{"node", t.id}, {"emulated", t.emulated}}}});
  }
  nlohmann::json doc = {{"traceEvents", events}};
  return doc.dump() + "\n";
}

std::string format_report(const EmulationReport& report) {
  std::ostringstream out;
  auto list = [](const std::vector<RankId>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s.empty() ? std::string("-") : s;
  };
  out << "iteration_time_ns=" << report.iteration_time << "\n";
  out << "sandbox=" << list(report.sandbox) << "\n";
  out << "active_virtual=" << list(report.active_virtual) << "\n";
  out << "nodes_visited=" << report.nodes_visited << "\n";
  out << "bytes_moved=" << report.bytes_moved << "\n";
  out << "pruned_collectives=" << report.pruned_collectives << "\n";
  out << "skipped_transfers=" << report.skipped_transfers << "\n";
  out << "numeric_checks=" << report.numeric_checks << "\n";
  out << "numeric_mismatches=" << report.numeric_mismatches << "\n";
  out << "pool_staged_bytes=" << report.pool.staged_bytes << "\n";
  out << "pool_prefetches=" << report.pool.prefetches << "\n";
  out << "pool_demand_loads=" << report.pool.demand_loads << "\n";
  out << "pool_max_resident_bytes=" << report.pool.max_resident_bytes << "\n";
  for (const auto& [r, peak] : report.peak_memory) out << "peak_memory.r" << r << "=" << peak << "\n";
  if (report.makespan_delta) out << "makespan_delta_ns=" << *report.makespan_delta << "\n";
  return out.str();
}

std::string timings_csv(const EmulationReport& report) {
  std::ostringstream out;
  out << "node,rank,label,start_ns,duration_ns,emulated\n";
  for (const auto& t : report.nodes) {
    out << t.id << "," << t.rank << "," << t.label << "," << t.start << "," << t.duration << ","
        << (t.emulated ? 1 : 0) << "\n";
  }
  return out.str();
}

}  // namespace rankemu
