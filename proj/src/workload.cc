// Copyright 2026 The rankemu Authors.
// SPDX-License-Identifier: Apache-2.0

#include "rankemu/workload.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <tuple>

#include "rankemu/error.h"
#include "rankemu/moe_router.h"
#include "text_util.h"

namespace rankemu {
namespace {

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::kInvalidSpec, what); }

[[noreturn]] void malformed(std::size_t line, const std::string& what) {
  throw Error(ErrorCode::kMalformedRecord, "line " + std::to_string(line) + ": " + what);
}

template <typename T>
T need_int(std::string_view s, std::size_t line, std::string_view field) {
  auto v = text::parse_int<T>(s);
  if (!v) malformed(line, "bad integer for " + std::string(field) + ": '" + std::string(s) + "'");
  return *v;
}

std::string chunk_suffix(const ParallelismSpec& spec, std::uint32_t chunk) {
  return spec.chunks() > 1 ? ".v" + std::to_string(chunk) : std::string();
}

// Sort key placing every step of every rank in one global order that all
// participants of an occurrence agree on.
struct StepKey {
  std::int64_t time = 0;
  int cls = 0;
  std::int64_t sub = 0;
  auto operator<=>(const StepKey&) const = default;
};

struct KeyedStep {
  StepKey key;
  Step step;
};

}  // namespace

// ---- ParallelismSpec ----------------------------------------------------------

std::uint32_t ParallelismSpec::ep_effective() const { return std::gcd(ep == 0 ? 1 : ep, dp == 0 ? 1 : dp); }

void ParallelismSpec::check() const {
  if (tp == 0 || pp == 0 || dp == 0 || ep == 0) invalid("tp, pp, dp and ep must be positive: " + to_string());
  if (ga == 0) invalid("ga must be positive");
  if (vpp > 1) {
    if (ga < vpp * pp) {
      throw Error(ErrorCode::kGaTooSmall, "ga=" + std::to_string(ga) + " < vpp*pp=" + std::to_string(vpp * pp));
    }
    if (ga % pp != 0) invalid("interleaved schedule needs ga divisible by pp: " + to_string());
  }
  if (static_cast<std::uint64_t>(tp) * pp * dp > (1u << 24)) invalid("world too large");
}

std::string ParallelismSpec::to_string() const {
  std::ostringstream os;
  os << "tp=" << tp << ",pp=" << pp << ",vpp=" << vpp << ",ep=" << ep << ",dp=" << dp << ",ga=" << ga;
  return os.str();
}

RankCoord coord_of(const ParallelismSpec& spec, RankId rank) {
  return {rank % spec.tp, (rank / spec.tp) % spec.pp, rank / (spec.tp * spec.pp)};
}

RankId rank_of(const ParallelismSpec& spec, const RankCoord& c) {
  return c.tp + spec.tp * (c.pp + spec.pp * c.dp);
}

// ---- Groups ---------------------------------------------------------------

std::string_view to_string(GroupRole role) {
  switch (role) {
    case GroupRole::kTensor: return "tp";
    case GroupRole::kPipeline: return "pp";
    case GroupRole::kData: return "dp";
    case GroupRole::kExpert: return "ep";
  }
  return "?";
}

std::optional<GroupRole> parse_group_role(std::string_view text) {
  if (text == "tp") return GroupRole::kTensor;
  if (text == "pp") return GroupRole::kPipeline;
  if (text == "dp") return GroupRole::kData;
  if (text == "ep") return GroupRole::kExpert;
  return std::nullopt;
}

bool CommGroup::contains(RankId rank) const {
  return std::find(members.begin(), members.end(), rank) != members.end();
}

std::size_t CommGroup::position(RankId rank) const {
  auto it = std::find(members.begin(), members.end(), rank);
  if (it == members.end()) {
    throw Error(ErrorCode::kInvalidArgument,
                "rank " + std::to_string(rank) + " not in group " + std::to_string(id));
  }
  return static_cast<std::size_t>(it - members.begin());
}

void CommGroups::add(CommGroup group) {
  if (!index_.emplace(group.id, groups_.size()).second) {
    throw Error(ErrorCode::kInvalidArgument, "duplicate group id " + std::to_string(group.id));
  }
  auto& slot = by_role_[static_cast<int>(group.role)];
  for (RankId r : group.members) {
    if (r >= world_) throw Error(ErrorCode::kInvalidArgument, "group member outside world");
    slot[r] = group.id;
  }
  groups_.push_back(std::move(group));
}

const CommGroup& CommGroups::at(GroupId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw Error(ErrorCode::kInvalidArgument, "unknown group " + std::to_string(id));
  return groups_[it->second];
}

const CommGroup& CommGroups::of(GroupRole role, RankId rank) const {
  if (rank >= world_ || by_role_[static_cast<int>(role)][rank] == kNone) {
    throw Error(ErrorCode::kInvalidArgument, "rank " + std::to_string(rank) + " has no " +
                                                 std::string(to_string(role)) + " group");
  }
  return at(by_role_[static_cast<int>(role)][rank]);
}

CommGroups build_groups(const ParallelismSpec& spec) {
  spec.check();
  CommGroups out(spec.world());
  GroupId next = 0;
  for (std::uint32_t d = 0; d < spec.dp; ++d) {
    for (std::uint32_t p = 0; p < spec.pp; ++p) {
      CommGroup g{next++, GroupRole::kTensor, {}};
      for (std::uint32_t t = 0; t < spec.tp; ++t) g.members.push_back(rank_of(spec, {t, p, d}));
      out.add(std::move(g));
    }
  }
  for (std::uint32_t d = 0; d < spec.dp; ++d) {
    for (std::uint32_t t = 0; t < spec.tp; ++t) {
      CommGroup g{next++, GroupRole::kPipeline, {}};
      for (std::uint32_t p = 0; p < spec.pp; ++p) g.members.push_back(rank_of(spec, {t, p, d}));
      out.add(std::move(g));
    }
  }
  for (std::uint32_t p = 0; p < spec.pp; ++p) {
    for (std::uint32_t t = 0; t < spec.tp; ++t) {
      CommGroup g{next++, GroupRole::kData, {}};
      for (std::uint32_t d = 0; d < spec.dp; ++d) g.members.push_back(rank_of(spec, {t, p, d}));
      out.add(std::move(g));
    }
  }
  const std::uint32_t ep = spec.ep_effective();
  for (std::uint32_t p = 0; p < spec.pp; ++p) {
    for (std::uint32_t t = 0; t < spec.tp; ++t) {
      for (std::uint32_t b = 0; b < spec.dp / ep; ++b) {
        CommGroup g{next++, GroupRole::kExpert, {}};
        for (std::uint32_t d = b * ep; d < (b + 1) * ep; ++d) g.members.push_back(rank_of(spec, {t, p, d}));
        out.add(std::move(g));
      }
    }
  }
  return out;
}

std::string serialize_groups(const CommGroups& groups) {
  std::ostringstream os;
  os << "commgroups v1 world=" << groups.world() << '\n';
  for (const auto& g : groups.groups()) {
    os << "G " << g.id << ' ' << to_string(g.role) << ' ';
    for (std::size_t i = 0; i < g.members.size(); ++i) os << (i ? "," : "") << g.members[i];
    os << '\n';
  }
  return os.str();
}

CommGroups parse_groups(std::string_view text) {
  std::optional<CommGroups> out;
  text::for_each_line(text, [&](std::size_t line, std::string_view content) {
    auto tok = text::split_ws(content);
    if (!out) {
      if (tok.size() != 3 || tok[0] != "commgroups") malformed(line, "missing commgroups header");
      if (tok[1] != "v1") throw Error(ErrorCode::kUnknownVersion, "commgroups " + std::string(tok[1]));
      auto kv = text::key_value(tok[2]);
      if (!kv || kv->first != "world") malformed(line, "header lacks world=");
      out.emplace(need_int<std::uint32_t>(kv->second, line, "world"));
      return;
    }
    if (tok.size() != 4 || tok[0] != "G") malformed(line, "expected 'G <id> <role> <members>'");
    CommGroup g;
    g.id = need_int<GroupId>(tok[1], line, "id");
    auto role = parse_group_role(tok[2]);
    if (!role) malformed(line, "unknown role '" + std::string(tok[2]) + "'");
    g.role = *role;
    for (auto m : text::split(tok[3], ',')) g.members.push_back(need_int<RankId>(m, line, "member"));
    try {
      out->add(std::move(g));
    } catch (const Error& e) {
      malformed(line, e.what());
    }
  });
  if (!out) throw Error(ErrorCode::kMalformedRecord, "line 1: empty input");
  return std::move(*out);
}

// ---- Cost model -------------------------------------------------------------

Nanos CostModel::compute_duration(RankId rank, std::string_view label,
                                  std::optional<std::uint32_t> microbatch) const {
  Nanos d = compute_ns;
  auto it = label_overrides.end();
  if (microbatch) it = label_overrides.find(std::string(label) + "@" + std::to_string(*microbatch));
  if (it == label_overrides.end()) it = label_overrides.find(std::string(label));
  if (it != label_overrides.end()) d = it->second;
  if (auto s = compute_scale.find(rank); s != compute_scale.end()) {
    d = static_cast<Nanos>(std::llround(static_cast<double>(d) * s->second));
  }
  return d;
}

Nanos CostModel::comm_duration(const CommDescriptor& d, std::string_view tag) const {
  if (!tag.empty()) {
    if (auto it = label_overrides.find(std::string(tag)); it != label_overrides.end()) return it->second;
  }
  if (is_point_to_point(d.kind)) return p2p_ns;
  if (d.kind == CommKind::kBarrier) return collective_latency_ns;
  const std::uint64_t bw = bytes_per_us == 0 ? 1 : bytes_per_us;
  return collective_latency_ns + static_cast<Nanos>((d.bytes * 1000 + bw - 1) / bw);
}

Nanos CostModel::node_duration(const GraphNode& node) const {
  if (const auto* c = node.compute()) return compute_duration(node.rank, c->label, c->microbatch);
  return comm_duration(node.comm()->descriptor, node.comm()->tag);
}

// ---- Presets --------------------------------------------------------------

ModelPreset model_preset(std::string_view name) {
  if (name == "M1") return {"M1", 94, 64, 128, 8, 235, 22};
  if (name == "M2") return {"M2", 62, 32, 256, 8, 503, 20};
  if (name == "M3") return {"M3", 62, 64, 256, 8, 1010, 43};
  throw Error(ErrorCode::kUnknownPreset, "unknown model '" + std::string(name) + "'");
}

ParallelismSpec strategy_preset(std::string_view name, std::uint32_t world) {
  ParallelismSpec s;
  if (name == "S.A") {
    s = {1, 4, 0, 8, 1, 8};
  } else if (name == "S.B") {
    s = {2, 4, 2, 8, 1, 16};
  } else if (name == "S.C") {
    s = {1, 16, 0, 8, 1, 32};
  } else if (name == "S.D") {
    s = {1, 8, 0, 16, 1, 16};
  } else {
    throw Error(ErrorCode::kUnknownPreset, "unknown strategy '" + std::string(name) + "'");
  }
  if (world != 0) {
    const std::uint32_t replica = s.tp * s.pp;
    if (world % replica != 0) {
      invalid("world " + std::to_string(world) + " is not a multiple of tp*pp=" + std::to_string(replica));
    }
    s.dp = world / replica;
  }
  return s;
}

Preset preset(std::string_view name, std::uint32_t world) {
  std::string_view model_name, strategy = name;
  if (auto slash = name.find('/'); slash != std::string_view::npos) {
    model_name = name.substr(0, slash);
    strategy = name.substr(slash + 1);
  }
  Preset p;
  p.spec = strategy_preset(strategy, world);
  const std::uint32_t chunks = p.spec.chunks();
  p.cost.compute_ns /= chunks;
  p.cost.activation_bytes /= chunks;
  if (!model_name.empty()) {
    ModelPreset m = model_preset(model_name);
    const double layers_per_chunk = static_cast<double>(m.layers) / (p.spec.pp * chunks);
    p.cost.activation_bytes = static_cast<std::uint64_t>(layers_per_chunk * (64ull << 20));
    p.cost.ep_bytes = static_cast<std::uint64_t>(m.top_k) * (8ull << 20);
    p.cost.dp_bytes = static_cast<std::uint64_t>(m.total_params_b * 2e9 /
                                                  (p.spec.tp * p.spec.pp * p.spec.ep_effective()));
  }
  return p;
}

// ---- Programs -------------------------------------------------------------

std::string_view step_label(const Step& step) {
  if (const auto* c = std::get_if<ComputeStep>(&step)) return c->label;
  return std::get<CommunicateStep>(step).tag;
}

Nanos step_duration(const CostModel& cost, RankId rank, const Step& step) {
  if (const auto* c = std::get_if<ComputeStep>(&step)) {
    return cost.compute_duration(rank, c->label, c->microbatch);
  }
  const auto& m = std::get<CommunicateStep>(step);
  return cost.comm_duration(m.descriptor, m.tag);
}

std::vector<RankId> participants(const CommGroups& groups, RankId rank, const CommunicateStep& step) {
  if (is_point_to_point(step.descriptor.kind)) {
    if (!step.peer) throw Error(ErrorCode::kInvalidArgument, "point-to-point step without peer");
    return {std::min(rank, *step.peer), std::max(rank, *step.peer)};
  }
  return groups.at(step.descriptor.group).members;
}

std::vector<PipelineSlot> stage_schedule(const ParallelismSpec& spec, std::uint32_t stage) {
  const std::uint32_t pp = spec.pp;
  std::vector<PipelineSlot> out;
  if (spec.chunks() == 1) {
    const std::uint32_t warmup = std::min(pp - stage - 1, spec.ga);
    for (std::uint32_t m = 0; m < warmup; ++m) out.push_back({true, m, 0});
    for (std::uint32_t i = 0; i + warmup < spec.ga; ++i) {
      out.push_back({true, warmup + i, 0});
      out.push_back({false, i, 0});
    }
    for (std::uint32_t m = spec.ga - warmup; m < spec.ga; ++m) out.push_back({false, m, 0});
    return out;
  }
  // Interleaved schedule: microbatches advance in groups of pp per chunk.
  const std::uint32_t vpp = spec.chunks();
  const std::uint32_t total = spec.ga * vpp;
  const std::uint32_t warmup = std::min((pp - stage - 1) * 2 + (vpp - 1) * pp, total);
  auto fwd = [&](std::uint32_t k) {
    std::uint32_t chunk = (k % (pp * vpp)) / pp;
    std::uint32_t mb = (k / (pp * vpp)) * pp + k % pp;
    return PipelineSlot{true, mb, chunk};
  };
  auto bwd = [&](std::uint32_t k) {
    PipelineSlot s = fwd(k);
    return PipelineSlot{false, s.microbatch, vpp - 1 - s.chunk};
  };
  for (std::uint32_t k = 0; k < warmup; ++k) out.push_back(fwd(k));
  for (std::uint32_t i = 0; i + warmup < total; ++i) {
    out.push_back(fwd(warmup + i));
    out.push_back(bwd(i));
  }
  for (std::uint32_t k = total - warmup; k < total; ++k) out.push_back(bwd(k));
  return out;
}

std::vector<RankProgram> build_programs(const ParallelismSpec& spec, const CostModel& cost,
                                        const BrSchedule* br) {
  spec.check();
  const CommGroups groups = build_groups(spec);
  const std::uint32_t pp = spec.pp;
  const std::uint32_t chunks = spec.chunks();
  const std::uint32_t stages = pp * chunks;  // virtual stages
  const std::uint32_t ga = spec.ga;

  // Reference timeline with unit forward and double backward cost and
  // buffered transfers; it fixes one global order of all occurrences.
  std::vector<std::vector<PipelineSlot>> sched(pp);
  for (std::uint32_t s = 0; s < pp; ++s) sched[s] = stage_schedule(spec, s);
  constexpr std::int64_t kUnset = -1;
  std::vector<std::int64_t> fend(static_cast<std::size_t>(ga) * stages, kUnset);
  std::vector<std::int64_t> bend(fend.size(), kUnset);
  auto at = [&](std::uint32_t mb, std::uint32_t v) { return static_cast<std::size_t>(mb) * stages + v; };
  std::vector<std::vector<std::pair<std::int64_t, std::int64_t>>> times(pp);
  {
    std::vector<std::size_t> pos(pp, 0);
    std::vector<std::int64_t> clock(pp, 0);
    std::size_t remaining = 0;
    for (const auto& s : sched) remaining += s.size();
    while (remaining > 0) {
      bool progressed = false;
      for (std::uint32_t s = 0; s < pp; ++s) {
        while (pos[s] < sched[s].size()) {
          const PipelineSlot& slot = sched[s][pos[s]];
          const std::uint32_t v = slot.chunk * pp + s;
          std::int64_t dep = 0;
          if (slot.forward) {
            if (v > 0) dep = fend[at(slot.microbatch, v - 1)];
          } else {
            dep = v + 1 < stages ? bend[at(slot.microbatch, v + 1)] : fend[at(slot.microbatch, v)];
          }
          if (dep == kUnset) break;
          const std::int64_t start = std::max(clock[s], dep);
          const std::int64_t end = start + (slot.forward ? 1 : 2);
          (slot.forward ? fend : bend)[at(slot.microbatch, v)] = end;
          times[s].emplace_back(start, end);
          clock[s] = end;
          ++pos[s];
          --remaining;
          progressed = true;
        }
      }
      if (!progressed) invalid("pipeline schedule cannot make progress for " + spec.to_string());
    }
  }

  const std::uint32_t ep = spec.ep_effective();
  std::vector<RankProgram> programs(spec.world());
  for (RankId r = 0; r < spec.world(); ++r) {
    const RankCoord c = coord_of(spec, r);
    const GroupId tp_group = groups.of(GroupRole::kTensor, r).id;
    const GroupId pp_group = groups.of(GroupRole::kPipeline, r).id;
    const GroupId dp_group = groups.of(GroupRole::kData, r).id;
    const CommGroup& ep_group = groups.of(GroupRole::kExpert, r);
    const std::size_t ep_index = ep_group.position(r);

    std::vector<KeyedStep> steps;
    auto comm = [&](StepKey key, CommKind kind, GroupId group, std::uint64_t bytes, std::string tag,
                    std::string occ) {
      CommunicateStep m;
      m.descriptor.kind = kind;
      m.descriptor.group = group;
      m.descriptor.bytes = bytes;
      if (is_reducing(kind)) m.descriptor.reduce_op = ReduceOp::kSum;
      m.tag = std::move(tag);
      m.key = std::move(occ);
      m.local_bytes = bytes;
      m.payload_elems = cost.payload_elems;
      steps.push_back({key, std::move(m)});
      return &std::get<CommunicateStep>(steps.back().step);
    };

    if (spec.tp > 1) {
      auto* m = comm({-1, 0, 0}, CommKind::kBroadcast, tp_group, cost.status_bytes, "dataloader_status", "status");
      m->check = ValueCheck::kStatusOk;
    }
    std::uint32_t moe_event = 0;
    for (std::size_t i = 0; i < sched[c.pp].size(); ++i) {
      const PipelineSlot& slot = sched[c.pp][i];
      const auto [start, end] = times[c.pp][i];
      const std::uint32_t v = slot.chunk * pp + c.pp;
      const std::uint32_t mb = slot.microbatch;
      const std::string dir = slot.forward ? "f" : "b";
      const std::string occ = dir + ".m" + std::to_string(mb) + ".c" + std::to_string(slot.chunk);

      if (slot.forward && v == 0 && spec.tp > 1) {
        auto* m = comm({start, 1, -1}, CommKind::kBroadcast, tp_group, cost.samples_bytes, "samples",
                       "samples.m" + std::to_string(mb));
        m->check = ValueCheck::kIndicesBelow;
        m->check_bound = cost.vocab;
      }
      ComputeStep compute;
      compute.label = (slot.forward ? "fwd" : "bwd") + chunk_suffix(spec, slot.chunk);
      compute.microbatch = mb;
      (slot.forward ? compute.alloc_bytes : compute.free_bytes) = cost.activation_bytes;
      steps.push_back({{start, 1, 0}, std::move(compute)});

      if (spec.tp > 1) comm({start, 1, 1}, CommKind::kAllReduce, tp_group, cost.tp_bytes, "tp_allreduce", occ + ".tp");
      if (ep > 1) {
        const double ratio = br && br->events > 0 ? br->at(moe_event % br->events, ep_index % br->ranks) : 1.0;
        const auto local = static_cast<std::uint64_t>(std::llround(static_cast<double>(cost.ep_bytes) * ratio));
        ++moe_event;
        if (slot.forward) {
          comm({start, 1, 2}, CommKind::kAllGather, ep_group.id, cost.splits_bytes, "moe_splits", occ + ".splits");
        }
        comm({start, 1, 3}, CommKind::kAllToAll, ep_group.id, cost.ep_bytes, "moe_dispatch", occ + ".dispatch")
            ->local_bytes = local;
        comm({start, 1, 4}, CommKind::kAllToAll, ep_group.id, cost.ep_bytes, "moe_combine", occ + ".combine")
            ->local_bytes = local;
      }

      // Outgoing transfer to the neighbouring virtual stage.
      const bool has_next = slot.forward ? v + 1 < stages : v > 0;
      if (has_next) {
        const std::uint32_t nv = slot.forward ? v + 1 : v - 1;
        const std::uint32_t ns = nv % pp;
        if (ns != c.pp) {
          const std::int64_t id = (static_cast<std::int64_t>(mb) * stages + v) * 2 + (slot.forward ? 0 : 1);
          auto* m = comm({end, 0, id}, CommKind::kSend, pp_group, cost.pp_bytes, slot.forward ? "pp_fwd" : "pp_bwd",
                         std::string(slot.forward ? "pf" : "pb") + ".m" + std::to_string(mb) + ".v" + std::to_string(v));
          m->peer = rank_of(spec, {c.tp, ns, c.dp});
        }
      }
      // Incoming transfer feeding this slot.
      const bool has_prev = slot.forward ? v > 0 : v + 1 < stages;
      if (has_prev) {
        const std::uint32_t pv = slot.forward ? v - 1 : v + 1;
        const std::uint32_t ps = pv % pp;
        if (ps != c.pp) {
          const std::int64_t id = (static_cast<std::int64_t>(mb) * stages + pv) * 2 + (slot.forward ? 0 : 1);
          const std::int64_t ready = slot.forward ? fend[at(mb, pv)] : bend[at(mb, pv)];
          auto* m = comm({ready, 0, id}, CommKind::kRecv, pp_group, cost.pp_bytes, slot.forward ? "pp_fwd" : "pp_bwd",
                         std::string(slot.forward ? "pf" : "pb") + ".m" + std::to_string(mb) + ".v" + std::to_string(pv));
          m->peer = rank_of(spec, {c.tp, ps, c.dp});
        }
      }
    }
    if (spec.dp > 1) {
      constexpr std::int64_t kEnd = std::numeric_limits<std::int64_t>::max();
      comm({kEnd, 2, 0}, CommKind::kReduceScatter, dp_group, cost.dp_bytes, "dp_grads", "dp.rs");
      comm({kEnd, 2, 1}, CommKind::kAllGather, dp_group, cost.dp_bytes, "dp_params", "dp.ag");
    }

    std::stable_sort(steps.begin(), steps.end(),
                     [](const KeyedStep& a, const KeyedStep& b) { return a.key < b.key; });
    programs[r].rank = r;
    programs[r].steps.reserve(steps.size());
    for (auto& k : steps) programs[r].steps.push_back(std::move(k.step));
  }
  return programs;
}

// ---- Program files ----------------------------------------------------------

std::string serialize_programs(std::span<const RankProgram> programs, std::uint32_t world) {
  std::ostringstream os;
  os << "rankprog v1 world=" << world << '\n';
  for (const auto& p : programs) {
    os << "R " << p.rank << '\n';
    for (const auto& step : p.steps) {
      if (const auto* c = std::get_if<ComputeStep>(&step)) {
        os << "C " << c->label;
        if (c->microbatch) os << " mb=" << *c->microbatch;
        if (c->alloc_bytes) os << " alloc=" << c->alloc_bytes;
        if (c->free_bytes) os << " free=" << c->free_bytes;
      } else {
        const auto& m = std::get<CommunicateStep>(step);
        const auto& d = m.descriptor;
        os << "M " << to_string(d.kind) << " group=" << d.group << " bytes=" << d.bytes;
        if (d.reduce_op) os << " op=" << to_string(*d.reduce_op);
        os << " alg=" << to_string(d.algorithm) << " tag=" << m.tag << " key=" << m.key
           << " local=" << m.local_bytes << " elems=" << m.payload_elems;
        if (m.peer) os << " peer=" << *m.peer;
        if (m.check == ValueCheck::kStatusOk) os << " check=status";
        if (m.check == ValueCheck::kIndicesBelow) os << " check=below:" << m.check_bound;
      }
      os << '\n';
    }
  }
  return os.str();
}

std::vector<RankProgram> parse_programs(std::string_view text) {
  bool header = false;
  std::uint32_t world = 0;
  std::vector<RankProgram> out;
  text::for_each_line(text, [&](std::size_t line, std::string_view content) {
    auto tok = text::split_ws(content);
    if (!header) {
      if (tok.size() != 3 || tok[0] != "rankprog") malformed(line, "missing rankprog header");
      if (tok[1] != "v1") throw Error(ErrorCode::kUnknownVersion, "rankprog " + std::string(tok[1]));
      auto kv = text::key_value(tok[2]);
      if (!kv || kv->first != "world") malformed(line, "header lacks world=");
      world = need_int<std::uint32_t>(kv->second, line, "world");
      header = true;
      return;
    }
    if (tok[0] == "R") {
      if (tok.size() != 2) malformed(line, "expected 'R <rank>'");
      RankProgram p;
      p.rank = need_int<RankId>(tok[1], line, "rank");
      if (p.rank >= world) malformed(line, "rank outside world");
      out.push_back(std::move(p));
      return;
    }
    if (out.empty()) malformed(line, "step before any 'R' record");
    if (tok[0] == "C") {
      if (tok.size() < 2) malformed(line, "compute step lacks label");
      ComputeStep c;
      c.label = std::string(tok[1]);
      for (std::size_t i = 2; i < tok.size(); ++i) {
        auto kv = text::key_value(tok[i]);
        if (!kv) malformed(line, "expected key=value");
        if (kv->first == "mb") {
          c.microbatch = need_int<std::uint32_t>(kv->second, line, "mb");
        } else if (kv->first == "alloc") {
          c.alloc_bytes = need_int<std::uint64_t>(kv->second, line, "alloc");
        } else if (kv->first == "free") {
          c.free_bytes = need_int<std::uint64_t>(kv->second, line, "free");
        } else {
          malformed(line, "unknown compute field '" + std::string(kv->first) + "'");
        }
      }
      out.back().steps.push_back(std::move(c));
    } else if (tok[0] == "M") {
      if (tok.size() < 2) malformed(line, "comm step lacks kind");
      auto kind = parse_comm_kind(tok[1]);
      if (!kind) malformed(line, "unknown comm kind '" + std::string(tok[1]) + "'");
      CommunicateStep m;
      m.descriptor.kind = *kind;
      for (std::size_t i = 2; i < tok.size(); ++i) {
        auto kv = text::key_value(tok[i]);
        if (!kv) malformed(line, "expected key=value");
        auto [k, v] = *kv;
        if (k == "group") {
          m.descriptor.group = need_int<GroupId>(v, line, "group");
        } else if (k == "bytes") {
          m.descriptor.bytes = need_int<std::uint64_t>(v, line, "bytes");
        } else if (k == "op") {
          auto op = parse_reduce_op(v);
          if (!op) malformed(line, "unknown reduce op");
          m.descriptor.reduce_op = *op;
        } else if (k == "alg") {
          auto alg = parse_algorithm_hint(v);
          if (!alg) malformed(line, "unknown algorithm");
          m.descriptor.algorithm = *alg;
        } else if (k == "tag") {
          m.tag = std::string(v);
        } else if (k == "key") {
          m.key = std::string(v);
        } else if (k == "local") {
          m.local_bytes = need_int<std::uint64_t>(v, line, "local");
        } else if (k == "elems") {
          m.payload_elems = need_int<std::uint32_t>(v, line, "elems");
        } else if (k == "peer") {
          m.peer = need_int<RankId>(v, line, "peer");
        } else if (k == "check") {
          if (v == "status") {
            m.check = ValueCheck::kStatusOk;
          } else if (v.substr(0, 6) == "below:") {
            m.check = ValueCheck::kIndicesBelow;
            m.check_bound = need_int<std::uint32_t>(v.substr(6), line, "check bound");
          } else {
            malformed(line, "unknown check '" + std::string(v) + "'");
          }
        } else {
          malformed(line, "unknown comm field '" + std::string(k) + "'");
        }
      }
      if (m.tag.empty() || m.key.empty()) malformed(line, "comm step needs tag= and key=");
      std::string bad = m.descriptor.check();
      if (!bad.empty()) malformed(line, bad);
      if (is_point_to_point(m.descriptor.kind) && !m.peer) malformed(line, "send/recv needs peer=");
      out.back().steps.push_back(std::move(m));
    } else {
      malformed(line, "unknown record '" + std::string(tok[0]) + "'");
    }
  });
  if (!header) throw Error(ErrorCode::kMalformedRecord, "line 1: empty input");
  return out;
}

// ---- Memory -----------------------------------------------------------------

MemoryTimeline memory_timeline(const RankProgram& program, std::span<const Nanos> starts,
                               std::span<const Nanos> durations, const CostModel& cost) {
  struct Event {
    Nanos time;
    std::int64_t delta;
    std::size_t step;
  };
  std::vector<Event> events;
  for (std::size_t i = 0; i < program.steps.size(); ++i) {
    const Nanos s = starts[i];
    const Nanos e = s + durations[i];
    if (const auto* c = std::get_if<ComputeStep>(&program.steps[i])) {
      if (c->alloc_bytes) events.push_back({s, static_cast<std::int64_t>(c->alloc_bytes), i});
      if (c->free_bytes) events.push_back({e, -static_cast<std::int64_t>(c->free_bytes), i});
    } else if (cost.count_comm_buffers) {
      const auto& m = std::get<CommunicateStep>(program.steps[i]);
      if (m.local_bytes) {
        events.push_back({s, static_cast<std::int64_t>(m.local_bytes), i});
        events.push_back({e, -static_cast<std::int64_t>(m.local_bytes), i});
      }
    }
  }
  // Releases at an instant happen before allocations at the same instant.
  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    return std::tie(a.time, a.delta, a.step) < std::tie(b.time, b.delta, b.step);
  });
  MemoryTimeline out;
  std::int64_t level = 0;
  for (std::size_t i = 0; i < events.size(); ++i) {
    level += events[i].delta;
    out.peak = std::max(out.peak, level);
    if (i + 1 == events.size() || events[i + 1].time != events[i].time) {
      out.points.emplace_back(events[i].time, level);
    }
  }
  return out;
}

}  // namespace rankemu
