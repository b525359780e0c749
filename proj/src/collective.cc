// Copyright 2026 The rankemu Authors.
// SPDX-License-Identifier: Apache-2.0

#include "rankemu/collective.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>
#include <sstream>

#include "rankemu/error.h"

namespace rankemu {
namespace {

double apply(ReduceOp op, double a, double b) {
  switch (op) {
    case ReduceOp::kSum: return a + b;
    case ReduceOp::kMax: return std::max(a, b);
    case ReduceOp::kMin: return std::min(a, b);
  }
  return a;
}

void fold_into(Vec& acc, const Vec& x, ReduceOp op) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = apply(op, acc[i], x[i]);
}

Vec slice(const Vec& v, std::size_t k, std::size_t i) {
  auto [b, e] = chunk_range(v.size(), k, i);
  return Vec(v.begin() + static_cast<std::ptrdiff_t>(b), v.begin() + static_cast<std::ptrdiff_t>(e));
}

std::size_t check_shapes(std::span<const Vec> contributions, ErrorCode code) {
  if (contributions.empty()) throw Error(code, "no contributions");
  const std::size_t n = contributions.front().size();
  for (std::size_t j = 0; j < contributions.size(); ++j) {
    if (contributions[j].size() != n) {
      throw Error(code, "contribution " + std::to_string(j) + " has " + std::to_string(contributions[j].size()) +
                            " elements, expected " + std::to_string(n));
    }
  }
  return n;
}

Vec reduce_all(std::span<const Vec> contributions, ReduceOp op) {
  Vec acc = contributions.front();
  for (std::size_t j = 1; j < contributions.size(); ++j) fold_into(acc, contributions[j], op);
  return acc;
}

}  // namespace

std::vector<Vec> full_allreduce_oracle(std::span<const Vec> contributions, ReduceOp op) {
  check_shapes(contributions, ErrorCode::kShapeMismatch);
  return std::vector<Vec>(contributions.size(), reduce_all(contributions, op));
}

std::pair<std::size_t, std::size_t> chunk_range(std::size_t n, std::size_t k, std::size_t i) {
  return {i * n / k, (i + 1) * n / k};
}

std::vector<Vec> ring_allreduce(std::span<const Vec> contributions, ReduceOp op) {
  const std::size_t n = check_shapes(contributions, ErrorCode::kShapeMismatch);
  const std::size_t k = contributions.size();
  Vec result(n);
  for (std::size_t i = 0; i < k; ++i) {
    Vec acc = slice(contributions[(i + 1) % k], k, i);
    for (std::size_t step = 2; step <= k; ++step) fold_into(acc, slice(contributions[(i + step) % k], k, i), op);
    std::copy(acc.begin(), acc.end(), result.begin() + static_cast<std::ptrdiff_t>(chunk_range(n, k, i).first));
  }
  return std::vector<Vec>(k, result);
}

// ---- Ring pruning -------------------------------------------------------------

std::string_view to_string(PruningPlan::Role role) {
  switch (role) {
    case PruningPlan::Role::kNone: return "none";
    case PruningPlan::Role::kRoot: return "root";
    case PruningPlan::Role::kLeaf: return "leaf";
    case PruningPlan::Role::kIntermediate: return "intermediate";
  }
  return "?";
}

std::string PruningPlan::describe() const {
  std::ostringstream os;
  os << "algorithm=" << rankemu::to_string(algorithm) << " members=" << members.size() << " sandbox=";
  for (std::size_t i = 0; i < sandbox.size(); ++i) os << (i ? "," : "") << members[sandbox[i]];
  os << " neighbors=";
  for (std::size_t i = 0; i < neighbors.size(); ++i) os << (i ? "," : "") << members[neighbors[i]];
  os << " injector=" << (injector ? std::to_string(members[*injector]) : "-");
  if (pass_through) os << " pass_through";
  if (role != Role::kNone) os << " role=" << to_string(role);
  return os.str();
}

PruningPlan plan_ring_pruning(const RingTopology& ring, std::span<const RankId> sandbox) {
  const std::size_t k = ring.size();
  if (sandbox.empty()) throw Error(ErrorCode::kInvalidArgument, "empty sandbox");
  std::vector<bool> in(k, false);
  for (RankId r : sandbox) {
    auto it = std::find(ring.members.begin(), ring.members.end(), r);
    if (it == ring.members.end()) {
      throw Error(ErrorCode::kInvalidArgument, "sandbox rank " + std::to_string(r) + " not in ring");
    }
    in[static_cast<std::size_t>(it - ring.members.begin())] = true;
  }
  const auto count = static_cast<std::size_t>(std::count(in.begin(), in.end(), true));
  PruningPlan plan;
  plan.members = ring.members;
  if (count == k) {
    plan.pass_through = true;
    for (std::size_t i = 0; i < k; ++i) plan.sandbox.push_back(i);
    return plan;
  }
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i < k; ++i) {
    if (in[i] && !in[(i + k - 1) % k]) starts.push_back(i);
  }
  if (starts.size() != 1) {
    throw Error(ErrorCode::kNonContiguousSandbox,
                "sandbox forms " + std::to_string(starts.size()) + " blocks in ring order");
  }
  const std::size_t a = starts.front();
  for (std::size_t j = 0; j < count; ++j) plan.sandbox.push_back((a + j) % k);
  const std::size_t pred = (a + k - 1) % k;
  const std::size_t succ = (a + count) % k;
  plan.neighbors.push_back(pred);
  if (succ != pred) plan.neighbors.push_back(succ);
  plan.injector = pred;
  return plan;
}

Injection compensation_values(const PruningPlan& plan, std::span<const Vec> contributions, ReduceOp op) {
  const std::size_t k = plan.members.size();
  if (contributions.size() != k) {
    throw Error(ErrorCode::kMissingContribution,
                "have " + std::to_string(contributions.size()) + " contributions for " + std::to_string(k) + " ranks");
  }
  check_shapes(contributions, ErrorCode::kMissingContribution);
  Injection inj;
  inj.reduce.resize(k);
  if (plan.pass_through) return inj;
  const Vec full = reduce_all(contributions, op);
  std::vector<bool> owned(k, false);
  for (std::size_t p : plan.sandbox) owned[p] = true;
  for (std::size_t i = 0; i < k; ++i) {
    Vec full_chunk = slice(full, k, i);
    if (!owned[i]) {
      inj.reduce[i].value.assign(full_chunk.size(), 0.0);
      inj.broadcast[i] = std::move(full_chunk);
      continue;
    }
    ChunkSpec& spec = inj.reduce[i];
    spec.compensated = true;
    spec.value = full_chunk;
    if (op == ReduceOp::kSum) {
      // Remove what the real ranks from the block start up to the owner add.
      for (std::size_t p : plan.sandbox) {
        Vec part = slice(contributions[p], k, i);
        for (std::size_t e = 0; e < part.size(); ++e) spec.value[e] -= part[e];
        if (p == i) break;
      }
    }
  }
  return inj;
}

std::map<std::size_t, Vec> pruned_ring_reduce_phase(const PruningPlan& plan, const Injection& injection,
                                                    std::span<const Vec> contributions, ReduceOp op) {
  const std::size_t k = plan.members.size();
  if (contributions.size() != k) throw Error(ErrorCode::kPlanMismatch, "contribution count differs from plan");
  std::map<std::size_t, Vec> out;
  if (plan.pass_through) {
    auto full = ring_allreduce(contributions, op);
    for (std::size_t i = 0; i < k; ++i) out[i] = slice(full[i], k, i);
    return out;
  }
  if (injection.reduce.size() != k) throw Error(ErrorCode::kPlanMismatch, "injection has wrong chunk count");
  const std::size_t n = contributions[plan.sandbox.front()].size();
  for (std::size_t p : plan.sandbox) {
    if (contributions[p].size() != n) throw Error(ErrorCode::kPlanMismatch, "sandbox shapes differ");
  }
  for (std::size_t owner : plan.sandbox) {
    const ChunkSpec& spec = injection.reduce[owner];
    const auto [b, e] = chunk_range(n, k, owner);
    if (!spec.compensated || spec.value.size() != e - b) {
      throw Error(ErrorCode::kPlanMismatch, "chunk " + std::to_string(owner) + " lacks a compensated value");
    }
    // The injector's value enters at the block start and travels to the owner.
    Vec acc = spec.value;
    for (std::size_t p : plan.sandbox) {
      fold_into(acc, slice(contributions[p], k, owner), op);
      if (p == owner) break;
    }
    out[owner] = std::move(acc);
  }
  return out;
}

std::map<std::size_t, Vec> pruned_ring_allreduce(const PruningPlan& plan, const Injection& injection,
                                                 std::span<const Vec> contributions, ReduceOp op) {
  const std::size_t k = plan.members.size();
  std::map<std::size_t, Vec> owned = pruned_ring_reduce_phase(plan, injection, contributions, op);
  const std::size_t n = contributions[plan.sandbox.front()].size();
  Vec result(n);
  for (std::size_t i = 0; i < k; ++i) {
    const Vec* chunk = nullptr;
    if (auto it = owned.find(i); it != owned.end()) {
      chunk = &it->second;  // broadcast from its owner around the block
    } else if (auto b = injection.broadcast.find(i); b != injection.broadcast.end()) {
      chunk = &b->second;  // final value forwarded by the injector
    } else {
      throw Error(ErrorCode::kPlanMismatch, "no final value for chunk " + std::to_string(i));
    }
    const auto [b, e] = chunk_range(n, k, i);
    if (chunk->size() != e - b) throw Error(ErrorCode::kPlanMismatch, "chunk " + std::to_string(i) + " size");
    std::copy(chunk->begin(), chunk->end(), result.begin() + static_cast<std::ptrdiff_t>(b));
  }
  std::map<std::size_t, Vec> out;
  for (std::size_t p : plan.sandbox) out[p] = result;
  return out;
}

// ---- Tree pruning -------------------------------------------------------------

std::optional<std::size_t> TreeTopology::parent(std::size_t i) const {
  if (i == 0) return std::nullopt;
  return (i - 1) / 2;
}

std::vector<std::size_t> TreeTopology::children(std::size_t i) const {
  std::vector<std::size_t> out;
  for (std::size_t c : {2 * i + 1, 2 * i + 2}) {
    if (c < nodes) out.push_back(c);
  }
  return out;
}

PruningPlan::Role tree_role(const TreeTopology& tree, std::size_t node) {
  if (node == 0) return PruningPlan::Role::kRoot;
  if (tree.children(node).empty()) return PruningPlan::Role::kLeaf;
  return PruningPlan::Role::kIntermediate;
}

TreePlan plan_tree_pruning(const TreeTopology& tree) {
  if (tree.sandbox_node >= tree.nodes) throw Error(ErrorCode::kInvalidArgument, "sandbox node outside tree");
  TreePlan plan;
  plan.role = tree_role(tree, tree.sandbox_node);
  plan.parent = tree.parent(tree.sandbox_node);
  plan.children = tree.children(tree.sandbox_node);
  if (tree.nodes == 1) {
    plan.pass_through = true;
    return plan;
  }
  if (plan.role == PruningPlan::Role::kRoot) {
    // One child carries the compensation; the other child stays silent.
    plan.injector = plan.children.front();
  } else {
    plan.injector = plan.parent;
  }
  return plan;
}

std::vector<Vec> pruned_tree_allreduce(const TreeTopology& tree, const TreePlan& plan,
                                       std::span<const std::vector<Vec>> node_contributions, ReduceOp op,
                                       std::optional<Vec> any_value) {
  if (node_contributions.size() != tree.nodes || tree.sandbox_node >= tree.nodes) {
    throw Error(ErrorCode::kPlanMismatch, "contributions do not cover the tree");
  }
  std::vector<Vec> flat;
  for (const auto& node : node_contributions) {
    if (node.empty()) throw Error(ErrorCode::kMissingContribution, "tree node without ranks");
    flat.insert(flat.end(), node.begin(), node.end());
  }
  check_shapes(flat, ErrorCode::kMissingContribution);
  const auto& internal = node_contributions[tree.sandbox_node];
  const std::size_t n = internal.front().size();
  // Intra-node chain reduction behind the proxy.
  const Vec local = reduce_all(internal, op);
  const Vec full = reduce_all(flat, op);
  Vec result;
  if (plan.pass_through) {
    result = local;
  } else if (plan.role == PruningPlan::Role::kRoot) {
    if (!plan.injector) throw Error(ErrorCode::kPlanMismatch, "root plan without injector");
    Vec injected = full;
    if (op == ReduceOp::kSum) {
      for (std::size_t e = 0; e < n; ++e) injected[e] -= local[e];
    }
    result = local;
    fold_into(result, injected, op);
  } else {
    // Leaf / intermediate: whatever goes up (including the children's ANY
    // values) is overwritten by the parent's broadcast of the final value.
    if (any_value && any_value->size() != n) throw Error(ErrorCode::kPlanMismatch, "ANY value has wrong size");
    if (!plan.parent) throw Error(ErrorCode::kPlanMismatch, "non-root plan without parent");
    result = full;
  }
  return std::vector<Vec>(internal.size(), result);
}

// ---- Decomposition ----------------------------------------------------------

std::vector<Phase> decompose(CommKind kind) {
  switch (kind) {
    case CommKind::kAllReduce: return {Phase::kReduce, Phase::kBroadcast};
    case CommKind::kReduceScatter: return {Phase::kReduce};
    case CommKind::kAllGather: return {Phase::kBroadcast};
    case CommKind::kBroadcast: return {Phase::kBroadcast};
    case CommKind::kAllToAll:
    case CommKind::kSend:
    case CommKind::kRecv: return {Phase::kDirectExchange};
    case CommKind::kBarrier: return {};
  }
  return {};
}

std::string_view to_string(Phase phase) {
  switch (phase) {
    case Phase::kReduce: return "reduce";
    case Phase::kBroadcast: return "broadcast";
    case Phase::kDirectExchange: return "direct";
  }
  return "?";
}

// ---- Group instantiation ------------------------------------------------------

double InstantiationPlan::reduction_factor() const {
  if (active_groups.empty()) return 0;
  return static_cast<double>(total_groups) / static_cast<double>(active_groups.size());
}

InstantiationPlan plan_instantiation(const CommGroups& groups, std::span<const RankId> sandbox, AlgorithmHint hint) {
  std::set<RankId> in_sandbox(sandbox.begin(), sandbox.end());
  InstantiationPlan plan;
  plan.total_groups = groups.size();
  std::set<RankId> virt;
  for (const auto& g : groups.groups()) {
    const std::size_t k = g.members.size();
    std::vector<std::size_t> touched;
    for (std::size_t i = 0; i < k; ++i) {
      if (in_sandbox.count(g.members[i])) touched.push_back(i);
    }
    if (touched.empty()) continue;
    plan.active_groups.push_back(g.id);
    auto add = [&](std::size_t pos) {
      if (!in_sandbox.count(g.members[pos])) virt.insert(g.members[pos]);
    };
    for (std::size_t i : touched) {
      if (g.role == GroupRole::kExpert) {
        for (std::size_t j = 0; j < k; ++j) add(j);
      } else if (g.role == GroupRole::kPipeline) {
        if (i > 0) add(i - 1);
        if (i + 1 < k) add(i + 1);
      } else if (hint == AlgorithmHint::kTree) {
        TreeTopology t{k, i};
        if (auto p = t.parent(i)) add(*p);
        for (std::size_t c : t.children(i)) add(c);
      } else {
        add((i + k - 1) % k);
        add((i + 1) % k);
      }
    }
  }
  plan.active_virtual.assign(virt.begin(), virt.end());
  for (GroupId id : plan.active_groups) {
    const auto& g = groups.at(id);
    std::uint32_t instantiated = 0;
    for (RankId r : g.members) instantiated += (in_sandbox.count(r) || virt.count(r)) ? 1 : 0;
    plan.proxy_count[id] = static_cast<std::uint32_t>(g.members.size()) - instantiated;
  }
  if (!plan.active_virtual.empty()) plan.leader = plan.active_virtual.front();
  return plan;
}

CompletionRecord skip_transfer(const CommDescriptor& descriptor, std::uint64_t occurrence,
                               std::span<const RankId> participants, std::span<const RankId> sandbox) {
  for (RankId r : participants) {
    if (std::find(sandbox.begin(), sandbox.end(), r) != sandbox.end()) {
      throw Error(ErrorCode::kPreconditionViolated,
                  std::string(to_string(descriptor.kind)) + " occurrence " + std::to_string(occurrence) +
                      " involves sandbox rank " + std::to_string(r));
    }
  }
  return {occurrence, 0};
}


// ---- Randomized verification -------------------------------------------------

namespace {

struct Payloads {
  std::vector<Vec> values;
  bool integer = false;
};

Payloads random_payloads(std::mt19937_64& rng, std::size_t count, std::size_t n, bool integer) {
  Payloads p;
  p.integer = integer;
  std::uniform_int_distribution<int> ints(-1000, 1000);
  std::uniform_real_distribution<double> reals(-1.0, 1.0);
  p.values.assign(count, Vec(n));
  for (auto& v : p.values) {
    for (auto& x : v) x = integer ? ints(rng) : reals(rng);
  }
  return p;
}

ReduceOp random_op(std::mt19937_64& rng) {
  const int pick = std::uniform_int_distribution<int>(0, 4)(rng);
  return pick < 3 ? ReduceOp::kSum : (pick == 3 ? ReduceOp::kMax : ReduceOp::kMin);
}

// Compares `got` with the elementwise reduction of `all` over [b, e).
bool matches_reduction(const Vec& got, std::span<const Vec> all, std::size_t b, std::size_t e, ReduceOp op,
                       bool integer, double tol, double& worst) {
  if (got.size() != e - b) return false;
  for (std::size_t j = b; j < e; ++j) {
    double want = all[0][j], magnitude = std::abs(all[0][j]);
    for (std::size_t i = 1; i < all.size(); ++i) {
      want = apply(op, want, all[i][j]);
      magnitude += std::abs(all[i][j]);
    }
    const double err = std::abs(got[j - b] - want);
    if (integer || op != ReduceOp::kSum) {
      if (err != 0) return false;
      continue;
    }
    const double rel = magnitude == 0 ? err : err / magnitude;
    worst = std::max(worst, rel);
    if (rel > tol) return false;
  }
  return true;
}

}  // namespace

std::string SweepSummary::to_text() const {
  char err[32];
  std::snprintf(err, sizeof(err), "%.3e", max_float_error);
  std::ostringstream out;
  out << "ring_cases=" << ring_cases << "\nring_passed=" << ring_passed << "\ntree_cases=" << tree_cases
      << "\ntree_passed=" << tree_passed << "\nmax_float_error=" << err << "\nresult=" << (ok() ? "PASS" : "FAIL")
      << "\n";
  return out.str();
}

SweepSummary pruning_sweep(std::uint32_t ring_cases, std::uint32_t tree_cases_per_role, std::uint64_t seed,
                           double float_tolerance) {
  std::mt19937_64 rng(seed);
  auto uniform = [&rng](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  SweepSummary out;
  for (std::uint32_t c = 0; c < ring_cases; ++c) {
    const std::size_t k = uniform(4, 64);
    const std::size_t block = uniform(1, 4);
    const std::size_t first = uniform(0, k - 1);
    RingTopology ring;
    for (std::size_t i = 0; i < k; ++i) ring.members.push_back(static_cast<RankId>(3 * i + 1));
    std::vector<RankId> sandbox;
    for (std::size_t j = 0; j < block; ++j) sandbox.push_back(ring.members[(first + j) % k]);
    const std::size_t n = uniform(1, 3 * k);
    const bool integer = uniform(0, 1) == 0;
    const ReduceOp op = random_op(rng);
    const Payloads p = random_payloads(rng, k, n, integer);

    ++out.ring_cases;
    bool ok = true;
    try {
      const PruningPlan plan = plan_ring_pruning(ring, sandbox);
      const Injection inj = compensation_values(plan, p.values, op);
      const auto full = pruned_ring_allreduce(plan, inj, p.values, op);
      const auto owned = pruned_ring_reduce_phase(plan, inj, p.values, op);
      for (std::size_t pos : plan.sandbox) {
        ok = ok && matches_reduction(full.at(pos), p.values, 0, n, op, integer, float_tolerance, out.max_float_error);
        const auto [b, e] = chunk_range(n, k, pos);
        ok = ok && matches_reduction(owned.at(pos), p.values, b, e, op, integer, float_tolerance,
                                     out.max_float_error);
      }
    } catch (const Error&) {
      ok = false;
    }
    if (ok) ++out.ring_passed;
  }

  for (PruningPlan::Role role :
       {PruningPlan::Role::kRoot, PruningPlan::Role::kLeaf, PruningPlan::Role::kIntermediate}) {
    for (std::uint32_t c = 0; c < tree_cases_per_role; ++c) {
      TreeTopology tree;
      tree.nodes = uniform(role == PruningPlan::Role::kIntermediate ? 4 : 2, 15);
      std::vector<std::size_t> candidates;
      for (std::size_t i = 0; i < tree.nodes; ++i) {
        if (tree_role(tree, i) == role) candidates.push_back(i);
      }
      tree.sandbox_node = candidates[uniform(0, candidates.size() - 1)];
      const std::size_t n = uniform(1, 32);
      const bool integer = uniform(0, 1) == 0;
      const ReduceOp op = random_op(rng);
      std::vector<std::vector<Vec>> per_node;
      std::vector<Vec> flat;
      for (std::size_t i = 0; i < tree.nodes; ++i) {
        per_node.push_back(random_payloads(rng, uniform(1, 4), n, integer).values);
        flat.insert(flat.end(), per_node.back().begin(), per_node.back().end());
      }
      const Vec any = random_payloads(rng, 1, n, integer).values.front();

      ++out.tree_cases;
      bool ok = true;
      try {
        const TreePlan plan = plan_tree_pruning(tree);
        for (const Vec& got : pruned_tree_allreduce(tree, plan, per_node, op, any)) {
          ok = ok && matches_reduction(got, flat, 0, n, op, integer, float_tolerance, out.max_float_error);
        }
      } catch (const Error&) {
        ok = false;
      }
      if (ok) ++out.tree_passed;
    }
  }
  return out;
}

}  // namespace rankemu
