// Copyright 2026 The rankemu Authors.
// SPDX-License-Identifier: Apache-2.0

#include "rankemu/trace_graph.h"

#include <algorithm>
#include <numeric>
#include <queue>
#include <set>
#include <sstream>
#include <tuple>

#include "rankemu/error.h"
#include "text_util.h"

namespace rankemu {
namespace {

constexpr std::string_view kMagic = "prismtrace";
constexpr std::string_view kVersion = "v1";

bool label_ok(std::string_view label) {
  if (label.empty()) return false;
  return std::none_of(label.begin(), label.end(), [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '=';
  });
}

// Union of collective members into super-nodes; everything else is a
// singleton. Returns the super-node id per node index.
struct Contraction {
  std::vector<std::size_t> super_of;              // node index -> super id
  std::vector<std::vector<std::size_t>> members;  // super id -> node indices (sorted by NodeId)
};

Contraction contract(const ExecutionGraph& g) {
  const auto& nodes = g.nodes();
  Contraction c;
  c.super_of.assign(nodes.size(), static_cast<std::size_t>(-1));
  for (const auto& [sync, ids] : g.sync_groups()) {
    std::vector<std::size_t> idx;
    for (NodeId id : ids) {
      std::size_t i = g.index_of(id);
      if (c.super_of[i] != static_cast<std::size_t>(-1)) continue;  // reported by validate
      c.super_of[i] = c.members.size();
      idx.push_back(i);
    }
    if (!idx.empty()) c.members.push_back(std::move(idx));
  }
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (c.super_of[i] == static_cast<std::size_t>(-1)) {
      c.super_of[i] = c.members.size();
      c.members.push_back({i});
    }
  }
  return c;
}

// Kahn's algorithm over super-nodes; ties by smallest member NodeId. Returns
// the super-node order (shorter than members.size() when cyclic).
std::vector<std::size_t> super_topo(const ExecutionGraph& g, const Contraction& c) {
  const auto& nodes = g.nodes();
  const std::size_t n = c.members.size();
  std::vector<std::vector<std::size_t>> succ(n);
  std::vector<std::size_t> indegree(n, 0);
  for (const auto& e : g.edges()) {
    if (e.kind != EdgeKind::kDirectional) continue;
    if (!g.contains(e.src) || !g.contains(e.dst)) continue;
    std::size_t a = c.super_of[g.index_of(e.src)];
    std::size_t b = c.super_of[g.index_of(e.dst)];
    succ[a].push_back(b);
    ++indegree[b];  // self-loops keep the super-node blocked: a cycle
  }
  std::vector<NodeId> key(n);
  for (std::size_t s = 0; s < n; ++s) {
    NodeId best = nodes[c.members[s].front()].id;
    for (std::size_t i : c.members[s]) best = std::min(best, nodes[i].id);
    key[s] = best;
  }
  using Item = std::pair<NodeId, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> ready;
  for (std::size_t s = 0; s < n; ++s) {
    if (indegree[s] == 0) ready.push({key[s], s});
  }
  std::vector<std::size_t> order;
  order.reserve(n);
  while (!ready.empty()) {
    auto [k, s] = ready.top();
    ready.pop();
    order.push_back(s);
    for (std::size_t t : succ[s]) {
      if (--indegree[t] == 0) ready.push({key[t], t});
    }
  }
  return order;
}

void write_time_fields(std::ostream& os, const GraphNode& n) {
  if (n.duration) os << " dur=" << *n.duration;
  if (n.start) os << " start=" << *n.start;
}

[[noreturn]] void malformed(std::size_t line, const std::string& what) {
  throw Error(ErrorCode::kMalformedRecord, "line " + std::to_string(line) + ": " + what);
}

template <typename T>
T need_int(std::string_view s, std::size_t line, std::string_view field) {
  auto v = text::parse_int<T>(s);
  if (!v) malformed(line, "bad integer for " + std::string(field) + ": '" + std::string(s) + "'");
  return *v;
}

}  // namespace

// ---- GraphNode / ExecutionGraph --------------------------------------------

std::string_view GraphNode::label() const {
  if (const auto* c = compute()) return c->label;
  const auto* m = comm();
  if (!m->tag.empty()) return m->tag;
  return to_string(m->descriptor.kind);
}

ExecutionGraph::ExecutionGraph(std::uint32_t world_size, std::string spec_ref)
    : world_size_(world_size), spec_ref_(std::move(spec_ref)), rank_order_(world_size) {}

void ExecutionGraph::add_node(GraphNode node) {
  if (node.rank >= world_size_) {
    throw Error(ErrorCode::kInvalidArgument,
                "node " + std::to_string(node.id) + " rank " + std::to_string(node.rank) +
                    " outside world " + std::to_string(world_size_));
  }
  if (!index_.emplace(node.id, nodes_.size()).second) {
    throw Error(ErrorCode::kInvalidArgument, "duplicate node id " + std::to_string(node.id));
  }
  rank_order_[node.rank].push_back(node.id);
  nodes_.push_back(std::move(node));
}

void ExecutionGraph::add_edge(const DependencyEdge& edge) { edges_.push_back(edge); }

void ExecutionGraph::add_sync_group(SyncGroupId sync, std::vector<NodeId> members) {
  std::sort(members.begin(), members.end());
  for (std::size_t i = 1; i < members.size(); ++i) {
    edges_.push_back({members[i - 1], members[i], EdgeKind::kSynchronization, sync});
  }
  if (members.size() == 1) {
    // A single-member collective is still an occurrence; a self edge records it.
    edges_.push_back({members[0], members[0], EdgeKind::kSynchronization, sync});
  }
}

void ExecutionGraph::link_rank_chains() {
  for (const auto& order : rank_order_) {
    for (std::size_t i = 1; i < order.size(); ++i) {
      edges_.push_back({order[i - 1], order[i], EdgeKind::kDirectional, 0});
    }
  }
}

const std::vector<NodeId>& ExecutionGraph::rank_order(RankId rank) const {
  return rank_order_.at(rank);
}

std::size_t ExecutionGraph::index_of(NodeId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) {
    throw Error(ErrorCode::kDanglingEdge, "unknown node id " + std::to_string(id));
  }
  return it->second;
}

std::map<SyncGroupId, std::vector<NodeId>> ExecutionGraph::sync_groups() const {
  std::map<SyncGroupId, std::set<NodeId>> sets;
  for (const auto& e : edges_) {
    if (e.kind != EdgeKind::kSynchronization) continue;
    sets[e.sync].insert(e.src);
    sets[e.sync].insert(e.dst);
  }
  std::map<SyncGroupId, std::vector<NodeId>> out;
  for (auto& [sync, ids] : sets) out[sync] = std::vector<NodeId>(ids.begin(), ids.end());
  return out;
}

bool ExecutionGraph::has_all_durations() const {
  return std::all_of(nodes_.begin(), nodes_.end(), [](const GraphNode& n) { return n.duration.has_value(); });
}

bool ExecutionGraph::has_all_starts() const {
  return std::all_of(nodes_.begin(), nodes_.end(), [](const GraphNode& n) { return n.start.has_value(); });
}

// ---- Serialization ----------------------------------------------------------

std::string serialize_graph(const ExecutionGraph& graph) {
  std::ostringstream os;
  os << kMagic << ' ' << kVersion << " world=" << graph.world_size();
  if (!graph.spec_ref().empty()) os << " spec=" << graph.spec_ref();
  os << '\n';
  for (RankId r = 0; r < graph.world_size(); ++r) {
    for (NodeId id : graph.rank_order(r)) {
      const GraphNode& n = graph.node(id);
      os << "N " << n.id << ' ' << n.rank << ' ';
      if (const auto* c = n.compute()) {
        os << "compute " << c->label;
        if (c->microbatch) os << " mb=" << *c->microbatch;
      } else {
        const auto& d = n.comm()->descriptor;
        os << to_string(d.kind) << " group=" << d.group << " bytes=" << d.bytes;
        if (d.reduce_op) os << " op=" << to_string(*d.reduce_op);
        os << " alg=" << to_string(d.algorithm);
        if (!n.comm()->tag.empty()) os << " tag=" << n.comm()->tag;
      }
      write_time_fields(os, n);
      os << '\n';
    }
  }
  std::vector<DependencyEdge> edges = graph.edges();
  std::sort(edges.begin(), edges.end(), [](const DependencyEdge& a, const DependencyEdge& b) {
    return std::tie(a.src, a.dst, a.kind, a.sync) < std::tie(b.src, b.dst, b.kind, b.sync);
  });
  for (const auto& e : edges) {
    os << "E " << e.src << ' ' << e.dst << ' ';
    if (e.kind == EdgeKind::kDirectional) {
      os << "D";
    } else {
      os << "S " << e.sync;
    }
    os << '\n';
  }
  return os.str();
}

ExecutionGraph parse_graph(std::string_view text) {
  std::optional<ExecutionGraph> graph;
  std::vector<std::pair<std::size_t, DependencyEdge>> edges;

  text::for_each_line(text, [&](std::size_t line, std::string_view content) {
    auto tok = text::split_ws(content);
    if (!graph) {
      if (tok.size() < 3 || tok[0] != kMagic) malformed(line, "missing prismtrace header");
      if (tok[1] != kVersion) {
        throw Error(ErrorCode::kUnknownVersion, "unsupported format version '" + std::string(tok[1]) + "'");
      }
      std::optional<std::uint32_t> world;
      std::string spec;
      for (std::size_t i = 2; i < tok.size(); ++i) {
        auto kv = text::key_value(tok[i]);
        if (!kv) malformed(line, "bad header field '" + std::string(tok[i]) + "'");
        if (kv->first == "world") {
          world = need_int<std::uint32_t>(kv->second, line, "world");
        } else if (kv->first == "spec") {
          spec = std::string(kv->second);
        } else {
          malformed(line, "unknown header field '" + std::string(kv->first) + "'");
        }
      }
      if (!world) malformed(line, "header lacks world=");
      graph.emplace(*world, spec);
      return;
    }
    if (tok[0] == "N") {
      if (tok.size() < 5) malformed(line, "node record too short");
      GraphNode node;
      node.id = need_int<NodeId>(tok[1], line, "id");
      node.rank = need_int<RankId>(tok[2], line, "rank");
      std::size_t i = 4;
      if (tok[3] == "compute") {
        ComputeSpan span;
        span.label = std::string(tok[4]);
        if (!label_ok(span.label)) malformed(line, "bad compute label");
        i = 5;
        node.op = std::move(span);
      } else {
        auto kind = parse_comm_kind(tok[3]);
        if (!kind) malformed(line, "unknown node kind '" + std::string(tok[3]) + "'");
        CommEvent ev;
        ev.descriptor.kind = *kind;
        node.op = std::move(ev);
      }
      bool have_group = false, have_bytes = false, have_alg = false;
      for (; i < tok.size(); ++i) {
        auto kv = text::key_value(tok[i]);
        if (!kv) malformed(line, "expected key=value, got '" + std::string(tok[i]) + "'");
        auto [k, v] = *kv;
        if (k == "dur") {
          node.duration = need_int<Nanos>(v, line, "dur");
        } else if (k == "start") {
          node.start = need_int<Nanos>(v, line, "start");
        } else if (auto* span = std::get_if<ComputeSpan>(&node.op)) {
          if (k != "mb") malformed(line, "unknown compute field '" + std::string(k) + "'");
          span->microbatch = need_int<std::uint32_t>(v, line, "mb");
        } else {
          auto& ev = std::get<CommEvent>(node.op);
          if (k == "group") {
            ev.descriptor.group = need_int<GroupId>(v, line, "group");
            have_group = true;
          } else if (k == "bytes") {
            ev.descriptor.bytes = need_int<std::uint64_t>(v, line, "bytes");
            have_bytes = true;
          } else if (k == "op") {
            auto op = parse_reduce_op(v);
            if (!op) malformed(line, "unknown reduce op '" + std::string(v) + "'");
            ev.descriptor.reduce_op = *op;
          } else if (k == "alg") {
            auto alg = parse_algorithm_hint(v);
            if (!alg) malformed(line, "unknown algorithm '" + std::string(v) + "'");
            ev.descriptor.algorithm = *alg;
            have_alg = true;
          } else if (k == "tag") {
            if (!label_ok(v)) malformed(line, "bad tag");
            ev.tag = std::string(v);
          } else {
            malformed(line, "unknown comm field '" + std::string(k) + "'");
          }
        }
      }
      if (node.is_comm()) {
        if (!have_group || !have_bytes || !have_alg) malformed(line, "comm record needs group=, bytes=, alg=");
        std::string bad = node.comm()->descriptor.check();
        if (!bad.empty()) malformed(line, bad);
      }
      if (node.rank >= graph->world_size()) malformed(line, "rank outside world");
      if (graph->contains(node.id)) malformed(line, "duplicate node id " + std::to_string(node.id));
      graph->add_node(std::move(node));
    } else if (tok[0] == "E") {
      if (tok.size() < 4) malformed(line, "edge record too short");
      DependencyEdge e;
      e.src = need_int<NodeId>(tok[1], line, "src");
      e.dst = need_int<NodeId>(tok[2], line, "dst");
      if (tok[3] == "D" && tok.size() == 4) {
        e.kind = EdgeKind::kDirectional;
      } else if (tok[3] == "S" && tok.size() == 5) {
        e.kind = EdgeKind::kSynchronization;
        e.sync = need_int<SyncGroupId>(tok[4], line, "sync");
      } else {
        malformed(line, "bad edge kind");
      }
      edges.emplace_back(line, e);
    } else {
      malformed(line, "unknown record type '" + std::string(tok[0]) + "'");
    }
  });

  if (!graph) throw Error(ErrorCode::kMalformedRecord, "line 1: empty input");
  for (const auto& [line, e] : edges) {
    for (NodeId id : {e.src, e.dst}) {
      if (!graph->contains(id)) {
        throw Error(ErrorCode::kDanglingEdge,
                    "node " + std::to_string(id) + " (line " + std::to_string(line) + ")");
      }
    }
    graph->add_edge(e);
  }
  auto violations = validate(*graph);
  if (!violations.empty()) {
    const auto& v = violations.front();
    throw Error(ErrorCode::kMalformedRecord,
                std::string(to_string(v.rule)) + " at " + v.where + ": " + v.detail);
  }
  return std::move(*graph);
}

// ---- Validation -------------------------------------------------------------

std::string_view to_string(Rule rule) {
  switch (rule) {
    case Rule::kRankOutOfRange: return "RankOutOfRange";
    case Rule::kBadDescriptor: return "BadDescriptor";
    case Rule::kBadLabel: return "BadLabel";
    case Rule::kTimingInconsistent: return "TimingInconsistent";
    case Rule::kDanglingEdge: return "DanglingEdge";
    case Rule::kCycleDetected: return "CycleDetected";
    case Rule::kRankOrderBroken: return "RankOrderBroken";
    case Rule::kSyncOnCompute: return "SyncOnCompute";
    case Rule::kNodeInTwoSyncGroups: return "NodeInTwoSyncGroups";
    case Rule::kSyncDescriptorMismatch: return "SyncDescriptorMismatch";
    case Rule::kSyncRankDuplicate: return "SyncRankDuplicate";
    case Rule::kDependencyViolated: return "DependencyViolated";
    case Rule::kSyncStartMismatch: return "SyncStartMismatch";
  }
  return "?";
}

std::vector<Violation> validate(const ExecutionGraph& g) {
  std::vector<Violation> out;
  auto node_where = [](NodeId id) { return "node " + std::to_string(id); };
  auto edge_where = [](const DependencyEdge& e) {
    return "edge " + std::to_string(e.src) + "->" + std::to_string(e.dst);
  };

  std::size_t with_dur = 0, with_start = 0;
  for (const auto& n : g.nodes()) {
    if (n.rank >= g.world_size()) out.push_back({Rule::kRankOutOfRange, node_where(n.id), "rank outside world"});
    if (const auto* c = n.compute()) {
      if (!label_ok(c->label)) out.push_back({Rule::kBadLabel, node_where(n.id), "empty or whitespace label"});
    } else {
      std::string bad = n.comm()->descriptor.check();
      if (!bad.empty()) out.push_back({Rule::kBadDescriptor, node_where(n.id), bad});
    }
    if (n.duration) {
      ++with_dur;
      if (*n.duration < 0) out.push_back({Rule::kTimingInconsistent, node_where(n.id), "negative duration"});
    }
    if (n.start) {
      ++with_start;
      if (*n.start < 0) out.push_back({Rule::kTimingInconsistent, node_where(n.id), "negative start"});
      if (!n.duration) out.push_back({Rule::kTimingInconsistent, node_where(n.id), "start without duration"});
    }
  }
  if (with_dur != 0 && with_dur != g.size()) {
    out.push_back({Rule::kTimingInconsistent, "graph", "durations present on only some nodes"});
  }
  if (with_start != 0 && with_start != g.size()) {
    out.push_back({Rule::kTimingInconsistent, "graph", "start times present on only some nodes"});
  }

  bool dangling = false;
  for (const auto& e : g.edges()) {
    if (!g.contains(e.src) || !g.contains(e.dst)) {
      out.push_back({Rule::kDanglingEdge, edge_where(e), "edge references an undefined node"});
      dangling = true;
      continue;
    }
    if (e.kind == EdgeKind::kDirectional && e.src == e.dst) {
      out.push_back({Rule::kCycleDetected, edge_where(e), "self loop"});
    }
    if (e.kind == EdgeKind::kSynchronization) {
      for (NodeId id : {e.src, e.dst}) {
        if (!g.node(id).is_comm()) {
          out.push_back({Rule::kSyncOnCompute, edge_where(e), "synchronization edge touches a compute span"});
          break;
        }
      }
    }
  }
  if (dangling) return out;

  // Per-rank order must be chained by directional edges.
  std::set<std::pair<NodeId, NodeId>> directional;
  for (const auto& e : g.edges()) {
    if (e.kind == EdgeKind::kDirectional) directional.insert({e.src, e.dst});
  }
  std::unordered_map<NodeId, std::size_t> position;
  for (RankId r = 0; r < g.world_size(); ++r) {
    const auto& order = g.rank_order(r);
    for (std::size_t i = 0; i < order.size(); ++i) position[order[i]] = i;
    for (std::size_t i = 1; i < order.size(); ++i) {
      if (!directional.count({order[i - 1], order[i]})) {
        out.push_back({Rule::kRankOrderBroken, node_where(order[i]),
                       "no directional edge from predecessor " + std::to_string(order[i - 1])});
      }
    }
  }
  for (const auto& e : g.edges()) {
    if (e.kind != EdgeKind::kDirectional) continue;
    const auto& a = g.node(e.src);
    const auto& b = g.node(e.dst);
    if (a.rank == b.rank && position[e.src] >= position[e.dst] && e.src != e.dst) {
      out.push_back({Rule::kRankOrderBroken, edge_where(e), "directional edge runs against rank order"});
    }
  }

  // Synchronization groups.
  std::unordered_map<NodeId, SyncGroupId> owner;
  auto groups = g.sync_groups();
  for (const auto& [sync, members] : groups) {
    std::set<RankId> ranks;
    const GraphNode& first = g.node(members.front());
    std::size_t sends = 0, recvs = 0;
    for (NodeId id : members) {
      auto [it, inserted] = owner.emplace(id, sync);
      if (!inserted && it->second != sync) {
        out.push_back({Rule::kNodeInTwoSyncGroups, node_where(id),
                       "in groups " + std::to_string(it->second) + " and " + std::to_string(sync)});
      }
      const GraphNode& n = g.node(id);
      if (!ranks.insert(n.rank).second) {
        out.push_back({Rule::kSyncRankDuplicate, node_where(id),
                       "rank " + std::to_string(n.rank) + " appears twice in group " + std::to_string(sync)});
      }
      if (!n.is_comm() || !first.is_comm()) continue;
      const auto& d = n.comm()->descriptor;
      if (d.kind == CommKind::kSend) ++sends;
      if (d.kind == CommKind::kRecv) ++recvs;
      if (!d.matches(first.comm()->descriptor)) {
        out.push_back({Rule::kSyncDescriptorMismatch, node_where(id),
                       "descriptor differs from node " + std::to_string(first.id)});
      }
    }
    if (sends + recvs > 0 && (sends != 1 || recvs != 1 || members.size() != 2)) {
      out.push_back({Rule::kSyncDescriptorMismatch, "sync " + std::to_string(sync),
                     "point-to-point group must pair exactly one send with one recv"});
    }
  }

  // Acyclicity over the contracted graph.
  Contraction c = contract(g);
  auto order = super_topo(g, c);
  if (order.size() != c.members.size()) {
    std::vector<bool> done(c.members.size(), false);
    for (std::size_t s : order) done[s] = true;
    for (std::size_t s = 0; s < c.members.size(); ++s) {
      if (!done[s]) {
        out.push_back({Rule::kCycleDetected, node_where(g.nodes()[c.members[s].front()].id),
                       "node lies on a dependency cycle"});
        break;
      }
    }
  }

  // Calibrated-graph invariants.
  if (with_start == g.size() && with_dur == g.size() && !g.empty()) {
    for (const auto& e : g.edges()) {
      if (e.kind != EdgeKind::kDirectional) continue;
      const auto& a = g.node(e.src);
      const auto& b = g.node(e.dst);
      if (*b.start < *a.start + *a.duration) {
        out.push_back({Rule::kDependencyViolated, edge_where(e),
                       "starts at " + std::to_string(*b.start) + " before predecessor ends at " +
                           std::to_string(*a.start + *a.duration)});
      }
    }
    for (const auto& [sync, members] : groups) {
      Nanos s0 = *g.node(members.front()).start;
      for (NodeId id : members) {
        if (*g.node(id).start != s0) {
          out.push_back({Rule::kSyncStartMismatch, node_where(id),
                         "group " + std::to_string(sync) + " members start at different times"});
          break;
        }
      }
    }
  }
  return out;
}

// ---- Scheduling -------------------------------------------------------------

std::vector<NodeId> topo_order(const ExecutionGraph& g) {
  Contraction c = contract(g);
  auto order = super_topo(g, c);
  if (order.size() != c.members.size()) {
    throw Error(ErrorCode::kCyclicGraph, "graph contains a dependency cycle");
  }
  std::vector<NodeId> out;
  out.reserve(g.size());
  for (std::size_t s : order) {
    for (std::size_t i : c.members[s]) out.push_back(g.nodes()[i].id);
  }
  return out;
}

AsapSchedule compute_asap(const ExecutionGraph& g, std::span<const Nanos> durations) {
  const auto& nodes = g.nodes();
  Contraction c = contract(g);
  auto order = super_topo(g, c);
  if (order.size() != c.members.size()) {
    throw Error(ErrorCode::kCyclicGraph, "graph contains a dependency cycle");
  }
  std::vector<std::vector<std::size_t>> preds(nodes.size());
  for (const auto& e : g.edges()) {
    if (e.kind != EdgeKind::kDirectional) continue;
    preds[g.index_of(e.dst)].push_back(g.index_of(e.src));
  }
  AsapSchedule s;
  s.start.assign(nodes.size(), 0);
  s.critical_pred.assign(nodes.size(), AsapSchedule::kNoPred);
  for (std::size_t sup : order) {
    Nanos ready = 0;
    std::size_t via = AsapSchedule::kNoPred;
    for (std::size_t m : c.members[sup]) {
      for (std::size_t p : preds[m]) {
        Nanos end = s.start[p] + durations[p];
        if (end > ready || (end == ready && via != AsapSchedule::kNoPred && nodes[p].id < nodes[via].id)) {
          ready = end;
          via = p;
        }
      }
    }
    for (std::size_t m : c.members[sup]) {
      s.start[m] = ready;
      s.critical_pred[m] = via;
    }
  }
  return s;
}

CriticalPath critical_path(const ExecutionGraph& g) {
  CriticalPath out;
  if (g.empty()) return out;
  std::vector<Nanos> dur;
  dur.reserve(g.size());
  for (const auto& n : g.nodes()) {
    if (!n.duration) throw Error(ErrorCode::kMissingDuration, "node " + std::to_string(n.id) + " has no duration");
    dur.push_back(*n.duration);
  }
  AsapSchedule s = compute_asap(g, dur);
  std::size_t last = 0;
  for (std::size_t i = 1; i < g.size(); ++i) {
    Nanos a = s.start[i] + dur[i];
    Nanos b = s.start[last] + dur[last];
    if (a > b || (a == b && g.nodes()[i].id < g.nodes()[last].id)) last = i;
  }
  out.length = s.start[last] + dur[last];
  for (std::size_t i = last; i != AsapSchedule::kNoPred; i = s.critical_pred[i]) {
    out.path.push_back(g.nodes()[i].id);
  }
  std::reverse(out.path.begin(), out.path.end());
  return out;
}

// ---- DP replication ---------------------------------------------------------

ExecutionGraph expand_dp(const ExecutionGraph& tmpl, const ReplicaRemap& remap) {
  if (remap.replicas == 0) throw Error(ErrorCode::kInvalidArgument, "dp_size must be positive");
  const std::uint32_t rsize = remap.replica_size ? remap.replica_size : tmpl.world_size();
  for (const auto& n : tmpl.nodes()) {
    if (n.rank >= rsize) {
      throw Error(ErrorCode::kRemapConflict, "template node " + std::to_string(n.id) + " outside replica");
    }
  }
  NodeId stride = 0;
  for (const auto& n : tmpl.nodes()) stride = std::max(stride, n.id + 1);

  ExecutionGraph out(rsize * remap.replicas, tmpl.spec_ref());
  auto map_group = [&](GroupId g, std::uint32_t d) {
    return remap.group ? remap.group(g, d) : g;
  };
  for (std::uint32_t d = 0; d < remap.replicas; ++d) {
    for (RankId r = 0; r < rsize; ++r) {
      for (NodeId id : tmpl.rank_order(r)) {
        GraphNode n = tmpl.node(id);
        n.id = id + d * stride;
        n.rank = r + d * rsize;
        if (auto* ev = std::get_if<CommEvent>(&n.op)) {
          ev->descriptor.group = map_group(ev->descriptor.group, d);
        }
        out.add_node(std::move(n));
      }
    }
    for (const auto& e : tmpl.edges()) {
      if (e.kind != EdgeKind::kDirectional) continue;
      out.add_edge({e.src + d * stride, e.dst + d * stride, EdgeKind::kDirectional, 0});
    }
  }

  // Merge collective copies that land in the same group.
  std::map<std::pair<SyncGroupId, GroupId>, std::vector<NodeId>> merged;
  for (const auto& [sync, members] : tmpl.sync_groups()) {
    for (std::uint32_t d = 0; d < remap.replicas; ++d) {
      const auto& first = out.node(members.front() + d * stride);
      GroupId g = first.comm() ? first.comm()->descriptor.group : 0;
      auto& bucket = merged[{sync, g}];
      for (NodeId id : members) bucket.push_back(id + d * stride);
    }
  }
  SyncGroupId next = 0;
  for (auto& [key, ids] : merged) {
    std::set<RankId> ranks;
    for (NodeId id : ids) {
      if (!ranks.insert(out.node(id).rank).second) {
        throw Error(ErrorCode::kRemapConflict, "collective copies collide on rank " +
                                                   std::to_string(out.node(id).rank) + " in group " +
                                                   std::to_string(key.second));
      }
    }
    out.add_sync_group(next++, ids);
  }
  return out;
}

// ---- Canonical form ---------------------------------------------------------

ExecutionGraph canonicalize(const ExecutionGraph& g) {
  std::unordered_map<NodeId, NodeId> new_id;
  NodeId next = 0;
  for (RankId r = 0; r < g.world_size(); ++r) {
    for (NodeId id : g.rank_order(r)) new_id[id] = next++;
  }
  ExecutionGraph out(g.world_size(), g.spec_ref());
  for (RankId r = 0; r < g.world_size(); ++r) {
    for (NodeId id : g.rank_order(r)) {
      GraphNode n = g.node(id);
      n.id = new_id.at(id);
      out.add_node(std::move(n));
    }
  }
  auto groups = g.sync_groups();
  // Order groups by the smallest renumbered member.
  std::vector<std::pair<NodeId, std::vector<NodeId>>> renamed;
  for (const auto& [sync, members] : groups) {
    std::vector<NodeId> ids;
    for (NodeId id : members) ids.push_back(new_id.at(id));
    std::sort(ids.begin(), ids.end());
    renamed.emplace_back(ids.front(), std::move(ids));
  }
  std::sort(renamed.begin(), renamed.end());
  for (const auto& e : g.edges()) {
    if (e.kind == EdgeKind::kDirectional) {
      out.add_edge({new_id.at(e.src), new_id.at(e.dst), EdgeKind::kDirectional, 0});
    }
  }
  SyncGroupId s = 0;
  for (auto& [key, ids] : renamed) out.add_sync_group(s++, ids);
  return out;
}

ExecutionGraph strip_timing(const ExecutionGraph& g) {
  ExecutionGraph out(g.world_size(), g.spec_ref());
  for (RankId r = 0; r < g.world_size(); ++r) {
    for (NodeId id : g.rank_order(r)) {
      GraphNode n = g.node(id);
      n.duration.reset();
      n.start.reset();
      out.add_node(std::move(n));
    }
  }
  for (const auto& e : g.edges()) out.add_edge(e);
  return out;
}

bool isomorphic(const ExecutionGraph& a, const ExecutionGraph& b, bool compare_timing) {
  if (a.world_size() != b.world_size() || a.size() != b.size()) return false;
  ExecutionGraph ca = canonicalize(compare_timing ? a : strip_timing(a));
  ExecutionGraph cb = canonicalize(compare_timing ? b : strip_timing(b));
  ca.set_spec_ref({});
  cb.set_spec_ref({});
  return serialize_graph(ca) == serialize_graph(cb);
}

}  // namespace rankemu
