// Copyright 2026 The rankemu Authors.
// SPDX-License-Identifier: Apache-2.0

#include "rankemu/config.h"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "rankemu/error.h"
#include "text_util.h"

namespace rankemu {

namespace pt = boost::property_tree;

namespace {

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  throw Error(ErrorCode::kConfigError, where + ": " + what);
}

template <typename T>
T as_int(const std::string& where, const std::string& value) {
  auto v = text::parse_int<T>(text::trim(value));
  if (!v) bad(where, "expected an integer, got '" + value + "'");
  return *v;
}

double as_double(const std::string& where, const std::string& value) {
  auto v = text::parse_double(text::trim(value));
  if (!v) bad(where, "expected a number, got '" + value + "'");
  return *v;
}

bool as_bool(const std::string& where, const std::string& value) {
  const std::string v(text::trim(value));
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad(where, "expected a boolean, got '" + value + "'");
}

using Setter = std::function<void(const std::string& where, const std::string& value)>;

void apply(const pt::ptree& section, const std::string& name, const std::map<std::string, Setter>& setters,
           const std::function<bool(const std::string&, const std::string&, const std::string&)>& fallback = {}) {
  for (const auto& [key, child] : section) {
    const std::string where = name + "." + key;
    const std::string value = child.get_value<std::string>();
    if (auto it = setters.find(key); it != setters.end()) {
      it->second(where, value);
    } else if (!fallback || !fallback(where, key, value)) {
      bad(where, "unknown key");
    }
  }
}

}  // namespace

std::vector<RankId> parse_rank_set(std::string_view text) {
  const std::string where = "sandbox";
  std::vector<RankId> out;
  const std::string_view t = text::trim(text);
  if (t.empty()) bad(where, "empty rank set");
  if (auto dash = t.find('-'); dash != std::string_view::npos) {
    auto a = text::parse_int<RankId>(t.substr(0, dash));
    auto b = text::parse_int<RankId>(t.substr(dash + 1));
    if (!a || !b || *a > *b) bad(where, "bad range '" + std::string(t) + "'");
    for (RankId r = *a; r <= *b; ++r) out.push_back(r);
    return out;
  }
  for (auto part : text::split(t, ',')) {
    auto r = text::parse_int<RankId>(text::trim(part));
    if (!r) bad(where, "bad rank '" + std::string(part) + "'");
    out.push_back(*r);
  }
  return out;
}

void RunConfig::check() const {
  spec.check();
  if (n_slots == 0) bad("run.n_slots", "must be positive");
  if (slice_size == 0) bad("run.slice_size", "must be positive");
  if (jitter < 0) bad("run.jitter", "must be non-negative");
  for (RankId r : sandbox) {
    if (r >= spec.world()) bad("run.sandbox", "rank " + std::to_string(r) + " outside world " +
                                                  std::to_string(spec.world()));
  }
}

RunConfig parse_run_config(std::string_view text) {
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    bad("line " + std::to_string(e.line()), e.message());
  }

  RunConfig c;
  // The preset goes first so that explicit keys refine it.
  if (auto par = tree.get_child_optional("parallelism")) {
    std::uint32_t world = 0;
    if (auto w = par->get_optional<std::string>("world")) world = as_int<std::uint32_t>("parallelism.world", *w);
    if (auto p = par->get_optional<std::string>("preset")) {
      c.preset = std::string(text::trim(*p));
      Preset pr = preset(c.preset, world);
      c.spec = pr.spec;
      c.cost = pr.cost;
    }
    auto u32 = [](std::uint32_t& field) {
      return [&field](const std::string& w, const std::string& v) { field = as_int<std::uint32_t>(w, v); };
    };
    apply(*par, "parallelism",
          {{"preset", [](auto&, auto&) {}},
           {"world", [](auto&, auto&) {}},
           {"tp", u32(c.spec.tp)},
           {"pp", u32(c.spec.pp)},
           {"vpp", u32(c.spec.vpp)},
           {"ep", u32(c.spec.ep)},
           {"dp", u32(c.spec.dp)},
           {"ga", u32(c.spec.ga)}});
  }

  for (const auto& [name, section] : tree) {
    if (name == "parallelism") continue;
    if (name == "cost") {
      CostModel& m = c.cost;
      auto ns = [](Nanos& field) {
        return [&field](const std::string& w, const std::string& v) { field = as_int<Nanos>(w, v); };
      };
      auto u64 = [](std::uint64_t& field) {
        return [&field](const std::string& w, const std::string& v) { field = as_int<std::uint64_t>(w, v); };
      };
      auto u32 = [](std::uint32_t& field) {
        return [&field](const std::string& w, const std::string& v) { field = as_int<std::uint32_t>(w, v); };
      };
      apply(section, name,
            {{"compute_ns", ns(m.compute_ns)},
             {"p2p_ns", ns(m.p2p_ns)},
             {"collective_latency_ns", ns(m.collective_latency_ns)},
             {"bytes_per_us", u64(m.bytes_per_us)},
             {"activation_bytes", u64(m.activation_bytes)},
             {"tp_bytes", u64(m.tp_bytes)},
             {"pp_bytes", u64(m.pp_bytes)},
             {"ep_bytes", u64(m.ep_bytes)},
             {"dp_bytes", u64(m.dp_bytes)},
             {"splits_bytes", u64(m.splits_bytes)},
             {"samples_bytes", u64(m.samples_bytes)},
             {"status_bytes", u64(m.status_bytes)},
             {"count_comm_buffers", [&m](auto& w, auto& v) { m.count_comm_buffers = as_bool(w, v); }},
             {"swap_out_ns", ns(m.swap_out_ns)},
             {"swap_in_ns", ns(m.swap_in_ns)},
             {"payload_elems", u32(m.payload_elems)},
             {"vocab", u32(m.vocab)}},
            [&m](const std::string& w, const std::string& key, const std::string& v) {
              constexpr std::string_view kPrefix = "override.";
              if (key.rfind(kPrefix, 0) != 0 || key.size() == kPrefix.size()) return false;
              m.label_overrides[key.substr(kPrefix.size())] = as_int<Nanos>(w, v);
              return true;
            });
    } else if (name == "moe") {
      MoeConfig& m = c.moe;
      auto dbl = [](double& field) {
        return [&field](const std::string& w, const std::string& v) { field = as_double(w, v); };
      };
      apply(section, name,
            {{"enabled", [&m](auto& w, auto& v) { m.enabled = as_bool(w, v); }},
             {"br_min", dbl(m.profile.br_min)},
             {"br_max", dbl(m.profile.br_max)},
             {"br_avg", dbl(m.profile.br_avg)},
             {"br_std", dbl(m.profile.br_std)},
             {"br_med", dbl(m.profile.br_med)},
             {"br_skew", dbl(m.profile.br_skew)},
             {"events", [&m](auto& w, auto& v) { m.events = as_int<std::uint32_t>(w, v); }},
             {"normalize", [&m](auto& w, auto& v) { m.normalize = as_bool(w, v); }},
             {"seed", [&m](auto& w, auto& v) { m.seed = as_int<std::uint64_t>(w, v); }}});
    } else if (name == "inject") {
      for (const auto& [key, child] : section) {
        try {
          c.rules.push_back(parse_injection_rule(child.get_value<std::string>()));
        } catch (const Error& e) {
          bad("inject." + key, e.detail());
        }
      }
    } else if (name == "run") {
      auto u64 = [](std::uint64_t& field) {
        return [&field](const std::string& w, const std::string& v) { field = as_int<std::uint64_t>(w, v); };
      };
      auto u32 = [](std::uint32_t& field) {
        return [&field](const std::string& w, const std::string& v) { field = as_int<std::uint32_t>(w, v); };
      };
      apply(section, name,
            {{"seed", u64(c.seed)},
             {"n_slots", u32(c.n_slots)},
             {"store_capacity", u64(c.store_capacity)},
             {"allow_spill", [&c](auto& w, auto& v) { c.allow_spill = as_bool(w, v); }},
             {"sandbox", [&c](auto&, auto& v) { c.sandbox = parse_rank_set(v); }},
             {"slice_size", u32(c.slice_size)},
             {"jitter", [&c](auto& w, auto& v) { c.jitter = as_double(w, v); }},
             {"gpu_pool_bytes", u64(c.pool.gpu_capacity)},
             {"cpu_pool_bytes", u64(c.pool.cpu_capacity)},
             {"prefetch_depth", u32(c.pool.prefetch_depth)},
             {"verify_cases", u32(c.verify_cases)}});
    } else {
      bad(name, "unknown section");
    }
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_run_config(buf.str());
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.detail());
  }
}

std::optional<BrSchedule> moe_schedule(const RunConfig& config) {
  if (!config.moe.enabled) return std::nullopt;
  return derive_schedule(config.moe.profile, config.moe.events, config.spec.ep_effective(), config.moe.seed,
                         config.moe.normalize);
}

}  // namespace rankemu
