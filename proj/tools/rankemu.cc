// Copyright 2026 The rankemu Authors.
// SPDX-License-Identifier: Apache-2.0

// rankemu: generate -> collect -> slices -> calibrate -> emulate, plus
// verify-pruning and report. Every stage reads the previous stage's files
// from the output directory.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rankemu/collective.h"
#include "rankemu/config.h"
#include "rankemu/coordinator.h"
#include "rankemu/error.h"
#include "rankemu/moe_router.h"
#include "rankemu/replayer.h"
#include "rankemu/slicer.h"
#include "rankemu/trace_graph.h"
#include "rankemu/workload.h"

namespace fs = std::filesystem;
using namespace rankemu;

namespace {

struct Flags {
  std::string config;
  std::string out = "rankemu_out";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> sandbox;
  std::optional<std::uint32_t> slice_size;
  std::optional<double> jitter;
  std::string input;
  std::string durations;
  std::vector<std::string> what_if;
  std::string fault;
  std::optional<std::uint32_t> cases;
  std::vector<std::string> reports;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
}

// Runs `parse` on the file, prefixing errors with the path.
template <typename F>
auto parse_file(const fs::path& path, F parse) {
  const std::string text = read_file(path);
  try {
    return parse(text);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.detail());
  }
}

RunConfig load_config(const Flags& f) {
  if (f.config.empty()) throw Error(ErrorCode::kConfigError, "--config is required");
  RunConfig c = load_run_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (f.sandbox) c.sandbox = parse_rank_set(*f.sandbox);
  if (f.slice_size) c.slice_size = *f.slice_size;
  if (f.jitter) c.jitter = *f.jitter;
  c.check();
  return c;
}

fs::path input_or(const Flags& f, const char* name) { return f.input.empty() ? fs::path(f.out) / name : fs::path(f.input); }

int cmd_generate(const Flags& f) {
  const RunConfig c = load_config(f);
  const std::optional<BrSchedule> br = moe_schedule(c);
  const auto programs = build_programs(c.spec, c.cost, br ? &*br : nullptr);
  const CommGroups groups = build_groups(c.spec);
  write_file(fs::path(f.out) / "programs.txt", serialize_programs(programs, c.spec.world()));
  write_file(fs::path(f.out) / "groups.txt", serialize_groups(groups));
  if (br) write_file(fs::path(f.out) / "moe_schedule.csv", schedule_csv(*br));
  std::size_t steps = 0;
  for (const auto& p : programs) steps += p.steps.size();
  std::cout << "spec=" << c.spec.to_string() << "\nworld=" << c.spec.world() << "\ngroups=" << groups.size()
            << "\nsteps=" << steps << "\n";
  return 0;
}

int cmd_collect(const Flags& f) {
  const RunConfig c = load_config(f);
  const fs::path dir(f.out);
  const auto programs = parse_file(dir / "programs.txt", parse_programs);
  const CommGroups groups = parse_file(dir / "groups.txt", parse_groups);
  CollectionOptions opt;
  opt.n_slots = c.n_slots;
  opt.rules = c.rules;
  opt.seed = c.seed;
  opt.store_capacity = c.store_capacity;
  opt.allow_spill = c.allow_spill;
  opt.swap_out_ns = c.cost.swap_out_ns;
  opt.swap_in_ns = c.cost.swap_in_ns;
  CollectionResult result = run_collection(programs, groups, opt);
  result.graph.set_spec_ref(c.spec.to_string());
  write_file(dir / "bare.ptg", serialize_graph(result.graph));
  write_file(dir / "collection_stats.txt", result.stats.to_text());
  write_file(dir / "records.txt", serialize_records(result.records));
  std::cout << "nodes=" << result.graph.size() << "\n" << result.stats.to_text();
  return 0;
}

int cmd_slices(const Flags& f) {
  const RunConfig c = load_config(f);
  const ExecutionGraph bare = parse_file(input_or(f, "bare.ptg"), parse_graph);
  MeasurementSource src = SimulatedSource{c.cost, c.jitter, c.seed};
  if (!f.durations.empty()) src = parse_file(f.durations, parse_imported_durations);
  const auto slices = plan_slices(bare.world_size(), c.slice_size);
  const ExecutionGraph timed = fill_all_slices(bare, slices, src);
  write_file(fs::path(f.out) / "timed.ptg", serialize_graph(timed));
  std::cout << "slices=" << slices.size() << "\nnodes=" << timed.size() << "\n";
  return 0;
}

int cmd_calibrate(const Flags& f) {
  const ExecutionGraph timed = parse_file(input_or(f, "timed.ptg"), parse_graph);
  const ExecutionGraph calibrated = calibrate(timed);
  write_file(fs::path(f.out) / "calibrated.ptg", serialize_graph(calibrated));
  std::cout << "iteration_time_ns=" << iteration_time(calibrated) << "\n";
  return 0;
}

int cmd_emulate(const Flags& f) {
  const RunConfig c = load_config(f);
  const fs::path dir(f.out);
  const ExecutionGraph calibrated = parse_file(input_or(f, "calibrated.ptg"), parse_graph);
  const auto programs = parse_file(dir / "programs.txt", parse_programs);
  const CommGroups groups = parse_file(dir / "groups.txt", parse_groups);
  std::vector<OccurrenceRecord> records;
  if (fs::exists(dir / "records.txt")) records = parse_file(dir / "records.txt", parse_records);

  EmulationSetup setup;
  setup.sandbox = c.sandbox;
  setup.programs = programs;
  setup.groups = &groups;
  setup.cost = c.cost;
  setup.pool = c.pool;
  setup.records = records;

  EmulationReport report;
  if (!f.fault.empty()) {
    const auto colon = f.fault.find(':');
    if (colon == std::string::npos) throw Error(ErrorCode::kInvalidArgument, "--fault expects <rank>:<factor>");
    const RankId rank = static_cast<RankId>(std::stoul(f.fault.substr(0, colon)));
    report = fault_inject(calibrated, setup, rank, std::stod(f.fault.substr(colon + 1)));
  } else if (!f.what_if.empty()) {
    std::map<std::string, Nanos> overrides;
    for (const auto& w : f.what_if) {
      const auto eq = w.rfind('=');
      if (eq == std::string::npos) throw Error(ErrorCode::kInvalidArgument, "--what-if expects <label>=<ns>");
      overrides[w.substr(0, eq)] = std::stoll(w.substr(eq + 1));
    }
    report = what_if(calibrated, setup, overrides);
  } else {
    report = emulate(calibrated, setup);
  }
  const std::string text = format_report(report);
  write_file(dir / "report.txt", text);
  write_file(dir / "trace.json", export_chrome_trace(report));
  write_file(dir / "timings.csv", timings_csv(report));
  std::cout << text;
  return 0;
}

int cmd_verify_pruning(const Flags& f) {
  std::uint64_t seed = 7;
  std::uint32_t cases = 1000;
  if (!f.config.empty()) {
    const RunConfig c = load_run_config(f.config);
    seed = c.seed;
    cases = c.verify_cases;
  }
  if (f.seed) seed = *f.seed;
  if (f.cases) cases = *f.cases;
  const SweepSummary s = pruning_sweep(cases, cases / 5, seed);
  write_file(fs::path(f.out) / "verify_pruning.txt", s.to_text());
  std::cout << s.to_text();
  return s.ok() ? 0 : 1;
}

int cmd_report(const Flags& f) {
  if (f.reports.empty()) throw Error(ErrorCode::kInvalidArgument, "report needs at least one report file");
  std::vector<std::string> keys;
  std::vector<std::map<std::string, std::string>> tables;
  for (const auto& path : f.reports) {
    std::map<std::string, std::string> kv;
    std::istringstream in(read_file(path));
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw Error(ErrorCode::kMalformedRecord, path + ":" + std::to_string(n) + ": expected key=value");
      }
      const std::string key = line.substr(0, eq);
      if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
      kv[key] = line.substr(eq + 1);
    }
    tables.push_back(std::move(kv));
  }
  std::size_t width = 3;
  for (const auto& k : keys) width = std::max(width, k.size());
  std::printf("%-*s", static_cast<int>(width), "key");
  for (const auto& path : f.reports) std::printf("  %s", fs::path(path).parent_path().filename().string().c_str());
  std::printf("\n");
  for (const auto& k : keys) {
    std::printf("%-*s", static_cast<int>(width), k.c_str());
    for (const auto& t : tables) {
      auto it = t.find(k);
      std::printf("  %s", it == t.end() ? "-" : it->second.c_str());
    }
    std::printf("\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rankemu: rank-level emulation of large training jobs"};
  app.require_subcommand(1);
  Flags f;
  auto common = [&f](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", f.config, "INI run configuration");
    if (needs_config) opt->required();
    sub->add_option("--out", f.out, "working directory for inputs and outputs");
    sub->add_option("--seed", f.seed, "seed overriding [run] seed");
    sub->add_option("--sandbox", f.sandbox, "sandbox ranks, e.g. 0-3");
    sub->add_option("--slice-size", f.slice_size, "ranks per timing slice");
    sub->add_option("--jitter", f.jitter, "relative jitter of simulated durations");
  };
  std::map<CLI::App*, int (*)(const Flags&)> handlers;
  auto add = [&](const char* name, const char* help, bool needs_config, int (*fn)(const Flags&)) {
    CLI::App* sub = app.add_subcommand(name, help);
    common(sub, needs_config);
    handlers[sub] = fn;
    return sub;
  };
  add("generate", "write rank programs and communication groups", true, cmd_generate);
  add("collect", "collect the bare execution graph", true, cmd_collect);
  add("slices", "fill durations slice by slice", true, cmd_slices)
      ->add_option("--input", f.input, "bare graph (default <out>/bare.ptg)");
  app.get_subcommand("slices")->add_option("--durations", f.durations, "imported '<node> <ns>' durations");
  add("calibrate", "align slice timings into one schedule", false, cmd_calibrate)
      ->add_option("--input", f.input, "timed graph (default <out>/timed.ptg)");
  CLI::App* em = add("emulate", "hybrid emulation of the sandbox ranks", true, cmd_emulate);
  em->add_option("--input", f.input, "calibrated graph (default <out>/calibrated.ptg)");
  em->add_option("--what-if", f.what_if, "override a label's duration: <label>=<ns>");
  em->add_option("--fault", f.fault, "slow a rank's compute: <rank>:<factor>");
  add("verify-pruning", "randomized pruned-collective checks", false, cmd_verify_pruning)
      ->add_option("--cases", f.cases, "ring cases (tree cases per role: cases/5)");
  add("report", "compare report files", false, cmd_report)->add_option("reports", f.reports, "report.txt files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  try {
    for (const auto& [sub, fn] : handlers) {
      if (sub->parsed()) return fn(f);
    }
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::logic_error& e) {
    // Numeric flag values that failed to convert.
    std::cerr << "error: bad argument: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}
