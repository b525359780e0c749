// Copyright 2026 The rankemu Authors.
// SPDX-License-Identifier: Apache-2.0

#include "rankemu/coordinator.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "hash_util.h"
#include "rankemu/collective.h"
#include "rankemu/error.h"
#include "text_util.h"

namespace rankemu {

// ---- Injection rules ------------------------------------------------------------

std::string_view to_string(InjectionKind kind) {
  switch (kind) {
    case InjectionKind::kConstantStatus: return "constant_status";
    case InjectionKind::kInRangeIndex: return "in_range_index";
    case InjectionKind::kZeroSplits: return "zero_splits";
  }
  return "?";
}

std::optional<InjectionKind> parse_injection_kind(std::string_view text) {
  if (text == "constant_status") return InjectionKind::kConstantStatus;
  if (text == "in_range_index") return InjectionKind::kInRangeIndex;
  if (text == "zero_splits") return InjectionKind::kZeroSplits;
  return std::nullopt;
}

bool InjectionRule::matches(const CommunicateStep& step) const {
  if (!kinds.empty() && std::find(kinds.begin(), kinds.end(), step.descriptor.kind) == kinds.end()) return false;
  if (!groups.empty() && std::find(groups.begin(), groups.end(), step.descriptor.group) == groups.end()) {
    return false;
  }
  if (tag.empty()) return true;
  if (tag.back() == '*') return step.tag.compare(0, tag.size() - 1, tag, 0, tag.size() - 1) == 0;
  return step.tag == tag;
}

std::optional<Payload> apply_injection(std::span<const InjectionRule> rules, const CommunicateStep& step,
                                       RankId rank, std::uint64_t seed) {
  for (const auto& rule : rules) {
    if (!rule.matches(step)) continue;
    const std::size_t n = std::max<std::uint32_t>(step.payload_elems, 1);
    Payload p(n, 0.0);
    switch (rule.kind) {
      case InjectionKind::kConstantStatus:
        std::fill(p.begin(), p.end(), 1.0);
        break;
      case InjectionKind::kInRangeIndex: {
        std::uint64_t h = hashing::mix(hashing::mix(seed, rank), step.key);
        for (std::size_t i = 0; i < n; ++i) {
          h = hashing::splitmix64(h + i);
          p[i] = static_cast<double>(h % std::max<std::uint32_t>(rule.vocab, 1));
        }
        break;
      }
      case InjectionKind::kZeroSplits:
        break;
    }
    return p;
  }
  return std::nullopt;
}

InjectionRule parse_injection_rule(std::string_view text) {
  auto tok = text::split_ws(text);
  if (tok.empty()) throw Error(ErrorCode::kConfigError, "empty injection rule");
  InjectionRule rule;
  auto kind = parse_injection_kind(tok[0]);
  if (!kind) throw Error(ErrorCode::kConfigError, "unknown injection kind '" + std::string(tok[0]) + "'");
  rule.kind = *kind;
  for (std::size_t i = 1; i < tok.size(); ++i) {
    auto kv = text::key_value(tok[i]);
    if (!kv) throw Error(ErrorCode::kConfigError, "expected key=value in rule: '" + std::string(tok[i]) + "'");
    auto [k, v] = *kv;
    if (k == "kinds") {
      for (auto s : text::split(v, ',')) {
        auto ck = parse_comm_kind(s);
        if (!ck) throw Error(ErrorCode::kConfigError, "unknown comm kind '" + std::string(s) + "'");
        rule.kinds.push_back(*ck);
      }
    } else if (k == "tag") {
      rule.tag = std::string(v);
    } else if (k == "groups") {
      for (auto s : text::split(v, ',')) {
        auto g = text::parse_int<GroupId>(s);
        if (!g) throw Error(ErrorCode::kConfigError, "bad group id '" + std::string(s) + "'");
        rule.groups.push_back(*g);
      }
    } else if (k == "vocab") {
      auto n = text::parse_int<std::uint32_t>(v);
      if (!n || *n == 0) throw Error(ErrorCode::kConfigError, "bad vocab '" + std::string(v) + "'");
      rule.vocab = *n;
    } else {
      throw Error(ErrorCode::kConfigError, "unknown rule field '" + std::string(k) + "'");
    }
  }
  return rule;
}

// ---- Host-side collectives ------------------------------------------------------

std::vector<Payload> cpu_execute_collective(const CommDescriptor& d, std::span<const RankId> members,
                                            std::span<const Payload> payloads) {
  const std::size_t k = members.size();
  if (payloads.size() != k) throw Error(ErrorCode::kShapeMismatch, "payload count differs from member count");
  std::vector<Payload> out(k);
  if (k == 0) return out;
  auto same_shape = [&] {
    for (const auto& p : payloads) {
      if (p.size() != payloads[0].size()) {
        throw Error(ErrorCode::kShapeMismatch, std::string(to_string(d.kind)) + " payload sizes differ");
      }
    }
    return payloads[0].size();
  };
  switch (d.kind) {
    case CommKind::kAllReduce:
      same_shape();
      return full_allreduce_oracle(payloads, d.reduce_op.value_or(ReduceOp::kSum));
    case CommKind::kReduceScatter: {
      const std::size_t n = same_shape();
      Payload full = full_allreduce_oracle(payloads, d.reduce_op.value_or(ReduceOp::kSum)).front();
      for (std::size_t i = 0; i < k; ++i) {
        auto [b, e] = chunk_range(n, k, i);
        out[i].assign(full.begin() + static_cast<std::ptrdiff_t>(b), full.begin() + static_cast<std::ptrdiff_t>(e));
      }
      return out;
    }
    case CommKind::kAllGather: {
      same_shape();
      Payload all;
      for (const auto& p : payloads) all.insert(all.end(), p.begin(), p.end());
      std::fill(out.begin(), out.end(), all);
      return out;
    }
    case CommKind::kAllToAll: {
      const std::size_t n = same_shape();
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          auto [b, e] = chunk_range(n, k, i);
          out[i].insert(out[i].end(), payloads[j].begin() + static_cast<std::ptrdiff_t>(b),
                        payloads[j].begin() + static_cast<std::ptrdiff_t>(e));
        }
      }
      return out;
    }
    case CommKind::kBroadcast:
      std::fill(out.begin(), out.end(), payloads[0]);
      return out;
    case CommKind::kSend:
    case CommKind::kRecv:
      if (k != 2) throw Error(ErrorCode::kShapeMismatch, "point-to-point needs two members");
      out[1] = payloads[0];
      return out;
    case CommKind::kBarrier:
      return out;
  }
  return out;
}

// ---- Coordinator ------------------------------------------------------------------

std::string_view to_string(RankStatus status) {
  switch (status) {
    case RankStatus::kRunning: return "running";
    case RankStatus::kBlocked: return "blocked";
    case RankStatus::kFrozen: return "frozen";
    case RankStatus::kFinished: return "finished";
  }
  return "?";
}

namespace {

std::optional<RankId> select_for_slot(std::uint32_t slot, std::optional<RankId> exclude,
                                      std::span<const RankState> states) {
  std::optional<RankId> best;
  for (RankId r = 0; r < states.size(); ++r) {
    const RankState& s = states[r];
    if (exclude && r == *exclude) continue;
    if (s.slot != slot || s.status != RankStatus::kFrozen || !s.head_ready) continue;
    if (!best || s.pending_ops > states[*best].pending_ops) best = r;
  }
  return best;
}

}  // namespace

std::optional<RankId> select_switch(RankId trigger, std::span<const RankState> states) {
  return select_for_slot(states[trigger].slot, trigger, states);
}

std::string CollectionStats::to_text() const {
  std::ostringstream os;
  os << "swap_outs=" << swap_outs << "\nswap_ins=" << swap_ins << "\nswaps=" << swaps()
     << "\nswap_cost_ns=" << swap_cost_ns << "\ndirect_executions=" << direct_executions
     << "\ncpu_executions=" << cpu_executions << "\ninjected_steps=" << injected_steps
     << "\noccurrences=" << occurrences << "\nstore_peak_bytes=" << store_peak_bytes
     << "\nspilled_bytes=" << spilled_bytes << '\n';
  return os.str();
}

struct Coordinator::Arrival {
  NodeId node = 0;
  Payload payload;
  std::uint64_t bytes = 0;
  bool staged = false;
  bool is_sender = false;
  const CommunicateStep* step = nullptr;
};

struct Coordinator::Occurrence {
  GroupId group = 0;
  std::string key;
  CommDescriptor descriptor;
  std::vector<RankId> participants;
  std::map<RankId, Arrival> arrivals;
  bool injected = false;
  bool executed = false;
  std::map<RankId, Payload> inputs;
  std::map<RankId, Payload> outputs;
};

Coordinator::Coordinator(std::vector<RankProgram> programs, const CommGroups& groups, CollectionOptions options)
    : groups_(groups), options_(std::move(options)) {
  if (options_.n_slots == 0) throw Error(ErrorCode::kInvalidArgument, "n_slots must be at least 1");
  std::uint32_t world = groups.world();
  for (const auto& p : programs) world = std::max(world, p.rank + 1);
  programs_.resize(world);
  has_program_.assign(world, false);
  for (auto& p : programs) {
    if (has_program_[p.rank]) throw Error(ErrorCode::kInvalidArgument, "two programs for rank " + std::to_string(p.rank));
    has_program_[p.rank] = true;
    RankId r = p.rank;
    programs_[r] = std::move(p);
  }
  graph_ = ExecutionGraph(world);
  nodes_.resize(world);
  states_.resize(world);
  resident_.assign(options_.n_slots, std::nullopt);
  for (RankId r = 0; r < world; ++r) {
    states_[r].slot = r % options_.n_slots;
    states_[r].status = has_program_[r] ? RankStatus::kFrozen : RankStatus::kFinished;
  }
  for (std::uint32_t s = 0; s < options_.n_slots; ++s) {
    if (auto c = select_for_slot(s, std::nullopt, states_)) activate(*c, s);
  }
}

Coordinator::~Coordinator() = default;

bool Coordinator::is_resident(RankId r) const {
  const auto& s = states_[r];
  return s.status == RankStatus::kRunning || s.status == RankStatus::kBlocked;
}

void Coordinator::stage(std::uint64_t bytes) {
  if (store_bytes_ + bytes > options_.store_capacity) {
    if (!options_.allow_spill) {
      throw Error(ErrorCode::kStoreOverflow, "staging " + std::to_string(bytes) + " bytes exceeds capacity " +
                                                 std::to_string(options_.store_capacity));
    }
    stats_.spilled_bytes += bytes;
  }
  store_bytes_ += bytes;
  stats_.store_peak_bytes = std::max(stats_.store_peak_bytes, store_bytes_);
}

void Coordinator::unstage(std::uint64_t bytes) { store_bytes_ -= std::min(bytes, store_bytes_); }

void Coordinator::activate(RankId r, std::uint32_t slot) {
  RankState& s = states_[r];
  if (s.started) {
    ++stats_.swap_ins;
    stats_.swap_cost_ns += options_.swap_in_ns;
    log_.push_back("swap_in " + std::to_string(r) + " slot " + std::to_string(slot));
  } else {
    log_.push_back("launch " + std::to_string(r) + " slot " + std::to_string(slot));
  }
  s.started = true;
  s.status = RankStatus::kRunning;
  resident_[slot] = r;
}

void Coordinator::freeze(RankId r) {
  RankState& s = states_[r];
  resident_[s.slot].reset();
  s.status = RankStatus::kFrozen;
  ++stats_.swap_outs;
  stats_.swap_cost_ns += options_.swap_out_ns;
  log_.push_back("swap_out " + std::to_string(r));
  if (auto w = waiting_on_.find(r); w != waiting_on_.end()) {
    Occurrence& occ = occurrences_.at(w->second);
    Arrival& a = occ.arrivals.at(r);
    if (!a.staged) {
      stage(a.bytes);
      a.staged = true;
    }
    s.head_ready = occ.executed;
  }
}

Payload Coordinator::make_payload(RankId r, const CommunicateStep& step) const {
  if (step.descriptor.kind == CommKind::kRecv || step.descriptor.kind == CommKind::kBarrier) return {};
  Payload p(step.payload_elems, 0.0);
  std::uint64_t h = hashing::mix(hashing::mix(hashing::mix(options_.seed, r), step.descriptor.group), step.key);
  for (std::size_t i = 0; i < p.size(); ++i) {
    h = hashing::splitmix64(h + i);
    switch (step.check) {
      case ValueCheck::kStatusOk: p[i] = 1.0; break;
      case ValueCheck::kIndicesBelow: p[i] = static_cast<double>(h % std::max<std::uint32_t>(step.check_bound, 1)); break;
      case ValueCheck::kNone: p[i] = static_cast<double>(static_cast<std::int64_t>(h % 17) - 8); break;
    }
  }
  return p;
}

void Coordinator::check_value(RankId r, const CommunicateStep& step, const Payload& out) const {
  auto fail = [&](const std::string& why) {
    throw Error(ErrorCode::kValueCheckFailed,
                "rank " + std::to_string(r) + " " + step.tag + " (" + step.key + "): " + why);
  };
  if (step.check == ValueCheck::kStatusOk) {
    for (double v : out) {
      if (v != 1.0) fail("status flag is not success");
    }
  } else if (step.check == ValueCheck::kIndicesBelow) {
    for (double v : out) {
      if (v < 0 || v >= step.check_bound || v != std::floor(v)) fail("index outside vocabulary");
    }
  }
}

void Coordinator::execute(Occurrence& occ) {
  std::vector<RankId> members = occ.participants;
  const bool p2p = is_point_to_point(occ.descriptor.kind);
  if (p2p && !occ.arrivals.at(members[0]).is_sender) std::swap(members[0], members[1]);
  std::vector<Payload> payloads;
  for (RankId m : members) {
    auto it = occ.arrivals.find(m);
    if (it != occ.arrivals.end()) {
      payloads.push_back(it->second.payload);
    } else {
      // Rank without a program behind an injected collective.
      CommunicateStep stub;
      stub.descriptor = occ.descriptor;
      stub.key = occ.key;
      stub.payload_elems = occ.arrivals.begin()->second.payload.size();
      payloads.push_back(apply_injection(options_.rules, stub, m, options_.seed).value_or(Payload{}));
    }
    occ.inputs[m] = payloads.back();
  }
  auto outputs = cpu_execute_collective(occ.descriptor, members, payloads);
  for (std::size_t i = 0; i < members.size(); ++i) occ.outputs[members[i]] = std::move(outputs[i]);
  occ.executed = true;
  ++stats_.occurrences;
  if (occ.injected) return;

  const bool all_resident =
      std::all_of(occ.participants.begin(), occ.participants.end(), [&](RankId m) { return is_resident(m); });
  ++(all_resident ? stats_.direct_executions : stats_.cpu_executions);
  log_.push_back(std::string(all_resident ? "execute_direct " : "execute_cpu ") + occ.key + "@" +
                 std::to_string(occ.group));
  for (RankId m : occ.participants) {
    --states_[m].pending_ops;
    Arrival& a = occ.arrivals.at(m);
    if (a.staged) unstage(a.bytes);
    a.staged = false;
    RankState& s = states_[m];
    if (s.status == RankStatus::kBlocked) s.status = RankStatus::kRunning;
    if (s.status == RankStatus::kFrozen) s.head_ready = true;
  }
}

void Coordinator::run_rank(RankId r) {
  RankState& s = states_[r];
  const auto& steps = programs_[r].steps;
  while (true) {
    if (auto w = waiting_on_.find(r); w != waiting_on_.end()) {
      Occurrence& occ = occurrences_.at(w->second);
      if (!occ.executed) {
        s.status = RankStatus::kBlocked;
        return;
      }
      check_value(r, std::get<CommunicateStep>(steps[s.pc]), occ.outputs.at(r));
      waiting_on_.erase(w);
      ++s.pc;
    }
    if (s.pc == steps.size()) {
      s.status = RankStatus::kFinished;
      resident_[s.slot].reset();
      log_.push_back("finish " + std::to_string(r));
      if (auto c = select_for_slot(s.slot, std::nullopt, states_)) activate(*c, s.slot);
      return;
    }
    GraphNode node;
    node.id = next_node_++;
    node.rank = r;
    const Step& step = steps[s.pc];
    if (const auto* c = std::get_if<ComputeStep>(&step)) {
      node.op = ComputeSpan{c->label, c->microbatch};
      graph_.add_node(std::move(node));
      nodes_[r].push_back(next_node_ - 1);
      ++s.pc;
      continue;
    }
    const auto& m = std::get<CommunicateStep>(step);
    node.op = CommEvent{m.descriptor, m.tag};
    graph_.add_node(std::move(node));
    nodes_[r].push_back(next_node_ - 1);

    auto key = std::make_pair(m.descriptor.group, m.key);
    auto [it, created] = occurrences_.try_emplace(key);
    Occurrence& occ = it->second;
    if (created) {
      occ.group = m.descriptor.group;
      occ.key = m.key;
      occ.descriptor = m.descriptor;
      occ.participants = participants(groups_, r, m);
    } else if (!occ.descriptor.matches(m.descriptor)) {
      throw Error(ErrorCode::kShapeMismatch, "rank " + std::to_string(r) + " joins " + m.key +
                                                 " with a different descriptor");
    }
    if (std::find(occ.participants.begin(), occ.participants.end(), r) == occ.participants.end()) {
      throw Error(ErrorCode::kInvalidArgument, "rank " + std::to_string(r) + " is not a member of group " +
                                                   std::to_string(m.descriptor.group));
    }
    if (occ.arrivals.count(r)) {
      throw Error(ErrorCode::kInvalidArgument, "rank " + std::to_string(r) + " reaches " + m.key + " twice");
    }
    Arrival arrival;
    arrival.node = next_node_ - 1;
    arrival.bytes = m.local_bytes;
    arrival.is_sender = m.descriptor.kind == CommKind::kSend;
    arrival.step = &m;

    if (auto injected = apply_injection(options_.rules, m, r, options_.seed)) {
      arrival.payload = std::move(*injected);
      occ.injected = true;
      occ.arrivals.emplace(r, std::move(arrival));
      ++stats_.injected_steps;
      std::size_t present = 0;
      for (RankId p : occ.participants) present += has_program_[p] ? 1 : 0;
      if (occ.arrivals.size() == present) {
        execute(occ);
        for (const auto& [p, a] : occ.arrivals) check_value(p, *a.step, occ.outputs.at(p));
      }
      ++s.pc;
      continue;
    }

    for (RankId p : occ.participants) {
      if (!has_program_[p]) {
        throw Error(ErrorCode::kUnknownParticipant,
                    "rank " + std::to_string(p) + " in " + m.key + "@" + std::to_string(m.descriptor.group) +
                        " has no program");
      }
    }
    arrival.payload = make_payload(r, m);
    if (occ.arrivals.empty()) {
      for (RankId p : occ.participants) ++states_[p].pending_ops;
    }
    occ.arrivals.emplace(r, std::move(arrival));
    waiting_on_[r] = key;
    if (occ.arrivals.size() == occ.participants.size()) {
      execute(occ);
      continue;  // consumed at the top of the loop
    }
    const bool all_resident =
        std::all_of(occ.participants.begin(), occ.participants.end(), [&](RankId p) { return is_resident(p); });
    s.status = RankStatus::kBlocked;
    if (all_resident) {
      log_.push_back("block " + std::to_string(r) + " on " + m.key);
      return;
    }
    if (auto c = select_switch(r, states_)) {
      const std::uint32_t slot = s.slot;
      freeze(r);
      activate(*c, slot);
    } else {
      log_.push_back("block " + std::to_string(r) + " on " + m.key);
    }
    return;
  }
}

bool Coordinator::switch_slot(std::uint32_t slot, RankId trigger) {
  auto c = select_for_slot(slot, trigger, states_);
  if (!c) return false;
  freeze(trigger);
  activate(*c, slot);
  return true;
}

bool Coordinator::step() {
  for (RankId r = 0; r < states_.size(); ++r) {
    if (states_[r].status == RankStatus::kRunning) {
      run_rank(r);
      return true;
    }
  }
  bool all_finished = std::all_of(states_.begin(), states_.end(),
                                  [](const RankState& s) { return s.status == RankStatus::kFinished; });
  if (all_finished) return false;
  for (std::uint32_t slot = 0; slot < options_.n_slots; ++slot) {
    if (!resident_[slot]) {
      if (auto c = select_for_slot(slot, std::nullopt, states_)) {
        activate(*c, slot);
        return true;
      }
    } else if (states_[*resident_[slot]].status == RankStatus::kBlocked && switch_slot(slot, *resident_[slot])) {
      return true;
    }
  }
  std::ostringstream os;
  os << "no rank can make progress; waiting:";
  for (const auto& [r, key] : waiting_on_) os << ' ' << r << "->" << key.second << "@" << key.first;
  throw Error(ErrorCode::kDeadlock, os.str());
}

std::vector<std::uint32_t> Coordinator::recount_pending() const {
  std::vector<std::uint32_t> out(states_.size(), 0);
  for (const auto& [key, occ] : occurrences_) {
    if (occ.injected || occ.executed || occ.arrivals.empty()) continue;
    for (RankId p : occ.participants) ++out[p];
  }
  return out;
}

CollectionResult Coordinator::run() {
  if (done_) throw Error(ErrorCode::kInvalidArgument, "coordinator already ran");
  while (step()) {
  }
  done_ = true;
  for (const auto& [key, occ] : occurrences_) {
    if (!occ.executed) {
      throw Error(ErrorCode::kDeadlock, "occurrence " + key.second + "@" + std::to_string(key.first) +
                                            " never completed");
    }
  }
  graph_.link_rank_chains();
  SyncGroupId sync = 0;
  CollectionResult result;
  for (auto& [key, occ] : occurrences_) {
    std::vector<NodeId> members;
    for (const auto& [r, a] : occ.arrivals) members.push_back(a.node);
    graph_.add_sync_group(sync++, members);
    OccurrenceRecord rec;
    rec.group = occ.group;
    rec.key = occ.key;
    rec.descriptor = occ.descriptor;
    rec.participants = occ.participants;
    rec.injected = occ.injected;
    rec.inputs = std::move(occ.inputs);
    rec.outputs = std::move(occ.outputs);
    result.records.push_back(std::move(rec));
  }
  result.graph = canonicalize(graph_);
  result.stats = stats_;
  return result;
}

CollectionResult run_collection(const std::vector<RankProgram>& programs, const CommGroups& groups,
                                const CollectionOptions& options) {
  return Coordinator(programs, groups, options).run();
}

// ---- Records file -------------------------------------------------------------

namespace {

void write_values(std::ostream& os, const Payload& p) {
  if (p.empty()) {
    os << '-';
    return;
  }
  for (std::size_t i = 0; i < p.size(); ++i) os << (i ? "," : "") << p[i];
}

}  // namespace

std::string serialize_records(std::span<const OccurrenceRecord> records) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "records v1\n";
  for (const auto& rec : records) {
    const auto& d = rec.descriptor;
    os << "O " << rec.group << ' ' << rec.key << ' ' << to_string(d.kind) << " bytes=" << d.bytes;
    if (d.reduce_op) os << " op=" << to_string(*d.reduce_op);
    os << " alg=" << to_string(d.algorithm) << " injected=" << (rec.injected ? 1 : 0) << " members=";
    for (std::size_t i = 0; i < rec.participants.size(); ++i) os << (i ? "," : "") << rec.participants[i];
    os << '\n';
    for (const auto& [r, p] : rec.inputs) {
      os << "I " << r << ' ';
      write_values(os, p);
      os << '\n';
    }
    for (const auto& [r, p] : rec.outputs) {
      os << "Q " << r << ' ';
      write_values(os, p);
      os << '\n';
    }
  }
  return os.str();
}

std::vector<OccurrenceRecord> parse_records(std::string_view text) {
  std::vector<OccurrenceRecord> out;
  bool header = false;
  auto malformed = [](std::size_t line, const std::string& what) {
    throw Error(ErrorCode::kMalformedRecord, "line " + std::to_string(line) + ": " + what);
  };
  text::for_each_line(text, [&](std::size_t line, std::string_view content) {
    auto tok = text::split_ws(content);
    if (!header) {
      if (tok.size() != 2 || tok[0] != "records") malformed(line, "missing records header");
      if (tok[1] != "v1") throw Error(ErrorCode::kUnknownVersion, "records " + std::string(tok[1]));
      header = true;
      return;
    }
    if (tok[0] == "O") {
      if (tok.size() < 5) malformed(line, "occurrence record too short");
      OccurrenceRecord rec;
      auto g = text::parse_int<GroupId>(tok[1]);
      auto kind = parse_comm_kind(tok[3]);
      if (!g || !kind) malformed(line, "bad occurrence header");
      rec.group = *g;
      rec.key = std::string(tok[2]);
      rec.descriptor.kind = *kind;
      rec.descriptor.group = *g;
      for (std::size_t i = 4; i < tok.size(); ++i) {
        auto kv = text::key_value(tok[i]);
        if (!kv) malformed(line, "expected key=value");
        auto [k, v] = *kv;
        if (k == "bytes") {
          auto b = text::parse_int<std::uint64_t>(v);
          if (!b) malformed(line, "bad bytes");
          rec.descriptor.bytes = *b;
        } else if (k == "op") {
          rec.descriptor.reduce_op = parse_reduce_op(v);
          if (!rec.descriptor.reduce_op) malformed(line, "bad op");
        } else if (k == "alg") {
          auto a = parse_algorithm_hint(v);
          if (!a) malformed(line, "bad alg");
          rec.descriptor.algorithm = *a;
        } else if (k == "injected") {
          rec.injected = v == "1";
        } else if (k == "members") {
          for (auto m : text::split(v, ',')) {
            auto r = text::parse_int<RankId>(m);
            if (!r) malformed(line, "bad member");
            rec.participants.push_back(*r);
          }
        } else {
          malformed(line, "unknown field '" + std::string(k) + "'");
        }
      }
      out.push_back(std::move(rec));
      return;
    }
    if ((tok[0] == "I" || tok[0] == "Q") && tok.size() == 3) {
      if (out.empty()) malformed(line, "values before any occurrence");
      auto r = text::parse_int<RankId>(tok[1]);
      if (!r) malformed(line, "bad rank");
      Payload p;
      if (tok[2] != "-") {
        for (auto s : text::split(tok[2], ',')) {
          auto v = text::parse_double(s);
          if (!v) malformed(line, "bad value '" + std::string(s) + "'");
          p.push_back(*v);
        }
      }
      (tok[0] == "I" ? out.back().inputs : out.back().outputs)[*r] = std::move(p);
      return;
    }
    malformed(line, "unknown record '" + std::string(tok[0]) + "'");
  });
  if (!header) throw Error(ErrorCode::kMalformedRecord, "line 1: empty input");
  return out;
}

}  // namespace rankemu
