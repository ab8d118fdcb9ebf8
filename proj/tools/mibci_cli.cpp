// Command-line front end: simulate, grid, replay.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mibci/mibci.hpp"

namespace fs = std::filesystem;
using namespace mibci;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> jobs;
  bool steps = false;
};

ExperimentConfig resolve(const Overrides& o) {
  auto cfg = load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.out = *o.out;
  if (o.jobs) cfg.jobs = *o.jobs;
  if (o.steps) cfg.steps = true;
  cfg.validate();
  return cfg;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Returns the number of failed runs.
std::size_t execute(const std::string& command, const ExperimentConfig& cfg, const fs::path& out) {
  const auto t0 = std::chrono::steady_clock::now();
  if (command == "grid") {
    const auto g = run_grid(cfg);
    export_records(cfg, command, g.records, out, seconds_since(t0), &g);
    return g.failed_runs;
  }
  const auto records = run_experiment(cfg);
  export_records(cfg, command, records, out, seconds_since(t0));
  std::size_t failed = 0;
  for (const auto& r : records) failed += r.failed ? 1 : 0;
  return failed;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot read '" + p.string() + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

int replay(const std::string& summary_path, bool keep) {
  const fs::path summary_file(summary_path);
  const auto summary = nlohmann::json::parse(slurp(summary_file));
  const std::string command = summary.at("command").get<std::string>();
  const auto cfg = config_from_json(summary.at("config"));
  const fs::path original = summary_file.parent_path();

  const fs::path scratch = fs::temp_directory_path() /
                           ("mibci-replay-" + std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
  execute(command, cfg, scratch);

  int mismatches = 0;
  for (const auto& [key, name] : summary.at("outputs").items()) {
    const auto file = name.get<std::string>();
    const bool same = slurp(original / file) == slurp(scratch / file);
    std::cout << (same ? "identical " : "DIFFERENT ") << file << '\n';
    mismatches += same ? 0 : 1;
  }
  if (keep)
    std::cout << "replay output kept in " << scratch.string() << '\n';
  else
    fs::remove_all(scratch);
  return mismatches == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Active-inference simulation of MI-BCI neurofeedback training"};
  app.require_subcommand(1);

  Overrides sim_opts, grid_opts;
  auto add_common = [](CLI::App* sub, Overrides& o) {
    sub->add_option("--config", o.config, "Config file (.json or .toml)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Master seed");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--steps", o.steps, "Write per-step traces to steps.csv");
  };
  auto* sim = app.add_subcommand("simulate", "Run one experiment");
  add_common(sim, sim_opts);
  auto* grid = app.add_subcommand("grid", "Sweep the action-prior grid");
  add_common(grid, grid_opts);

  std::string summary_path;
  bool keep = false;
  auto* rep = app.add_subcommand("replay", "Re-run from summary.json and diff the outputs");
  rep->add_option("--summary", summary_path, "summary.json of a previous run")->required()->check(CLI::ExistingFile);
  rep->add_flag("--keep", keep, "Keep the replay output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (rep->parsed()) return replay(summary_path, keep);
    const bool is_grid = grid->parsed();
    const auto cfg = resolve(is_grid ? grid_opts : sim_opts);
    const std::string command = is_grid ? "grid" : "simulate";
    const std::size_t failed = execute(command, cfg, cfg.out);
    std::cout << command << ": wrote " << cfg.out << (failed ? " with " + std::to_string(failed) + " failed runs" : "")
              << '\n';
    return failed ? 2 : 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
