#pragma once

// Experiment execution: independent agent runs on a bounded worker pool,
// per-trial aggregation, before/after performance metrics, the prior grid
// sweep, and CSV/JSON persistence.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "mibci/config.hpp"
#include "mibci/environment.hpp"
#include "mibci/inference.hpp"
#include "mibci/model.hpp"
#include "mibci/rng.hpp"

namespace mibci {

/// MI-phase means of one trial.
struct TrialSummary {
  std::size_t trial = 0;
  double mean_intensity = 0.0;
  double mean_orientation = 0.0;
  double mean_asymmetry = 0.0;
  double mean_feedback = 0.0;
  double mean_vfe = 0.0;
  double mean_risk = 0.0;
  double mean_ambiguity = 0.0;
  double mean_novelty = 0.0;
  double high_right_fraction = 0.0;
};

struct RunRecord {
  std::string experiment;
  std::size_t cell_i = 0;  ///< grid row (b_pre intensity)
  std::size_t cell_a = 0;  ///< grid column (b_pre orientation)
  std::size_t agent = 0;
  std::uint64_t seed = 0;
  std::vector<TrialSummary> trials;
  std::vector<StepRecord> steps;  ///< empty unless traces were requested
  DirichletCounts final_a;
  std::vector<DirichletCounts> final_b;
  bool failed = false;
  std::string error;
};

inline TrialSummary summarize_trial(const TrialLog& log, const ProcessModel& process) {
  TrialSummary s;
  s.trial = log.trial;
  const std::size_t top_i = process.space.levels(kIntensity) - 1;
  const std::size_t top_a = process.space.levels(kOrientation) - 1;
  std::size_t n = 0;
  for (const auto& r : log.steps) {
    if (r.phase != Phase::mi) continue;
    ++n;
    s.mean_intensity += static_cast<double>(r.state.intensity);
    s.mean_orientation += static_cast<double>(r.state.orientation);
    s.mean_asymmetry += r.outcome.noiseless_asymmetry;
    s.mean_feedback += static_cast<double>(r.outcome.feedback.value_or(0));
    s.mean_vfe += r.vfe;
    s.mean_risk += r.terms.risk;
    s.mean_ambiguity += r.terms.ambiguity;
    s.mean_novelty += r.terms.novelty();
    if (r.state.intensity == top_i && r.state.orientation == top_a) s.high_right_fraction += 1.0;
  }
  if (n == 0) return s;
  const double inv = 1.0 / static_cast<double>(n);
  for (double* v : {&s.mean_intensity, &s.mean_orientation, &s.mean_asymmetry, &s.mean_feedback, &s.mean_vfe,
                    &s.mean_risk, &s.mean_ambiguity, &s.mean_novelty, &s.high_right_fraction})
    *v *= inv;
  return s;
}

/// One subject trained for `protocol.n_trials` trials from its own seed.
inline RunRecord run_agent(const ProcessModel& process, const AgentModel& model, const TrialProtocol& protocol,
                           std::uint64_t seed, bool keep_steps, bool persist_beliefs = false) {
  RunRecord rec;
  rec.seed = seed;
  Xoshiro256ss rng(seed);
  Agent agent(model);
  Environment env(process);
  for (std::size_t t = 0; t < protocol.n_trials; ++t) {
    auto log = run_trial(agent, env, protocol, t, rng, !persist_beliefs);
    rec.trials.push_back(summarize_trial(log, process));
    if (keep_steps) rec.steps.insert(rec.steps.end(), log.steps.begin(), log.steps.end());
  }
  rec.final_a = agent.model().a;
  rec.final_b = agent.model().b;
  return rec;
}

/// Runs `task(k)` for k in [0, n) on up to `jobs` threads. Tasks must not throw.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& task) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t k = 0; k < n; ++k) task(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> workers;
  workers.reserve(jobs);
  for (std::size_t w = 0; w < jobs; ++w)
    workers.emplace_back([&] {
      for (std::size_t k = next++; k < n; k = next++) task(k);
    });
}

/// Performance of one run over its first (`after == false`) or last window.
inline double performance(const RunRecord& rec, std::size_t window, bool after, Metric metric) {
  if (window == 0 || 2 * window > rec.trials.size()) throw ConfigError("performance: window outside run bounds");
  const std::size_t begin = after ? rec.trials.size() - window : 0;
  double acc = 0.0;
  for (std::size_t t = begin; t < begin + window; ++t) {
    const auto& s = rec.trials[t];
    switch (metric) {
      case Metric::asymmetry: acc += s.mean_asymmetry; break;
      case Metric::feedback: acc += (s.mean_feedback - 2.0) / 2.0; break;
      case Metric::occupancy: acc += s.high_right_fraction; break;
    }
  }
  return acc / static_cast<double>(window);
}

/// Mean of a per-trial field over a window of trials.
inline double window_mean(const RunRecord& rec, std::size_t first, std::size_t count,
                          double TrialSummary::*field) {
  double acc = 0.0;
  for (std::size_t t = first; t < first + count; ++t) acc += rec.trials.at(t).*field;
  return acc / static_cast<double>(count);
}

struct RunSpec {
  std::size_t cell_i = 0;
  std::size_t cell_a = 0;
  std::size_t agent = 0;
  std::array<double, kNumFactors> b_pre{};
};

/// Executes independent runs in parallel. Failures are captured per run.
/// Output order follows `specs`, independent of scheduling.
inline std::vector<RunRecord> execute_runs(const ExperimentConfig& cfg, const ProcessModel& process,
                                           const std::vector<RunSpec>& specs, std::size_t cells_per_row) {
  std::vector<RunRecord> out(specs.size());
  parallel_for(specs.size(), cfg.jobs, [&](std::size_t k) {
    const auto& spec = specs[k];
    const auto cell = static_cast<std::uint32_t>(spec.cell_i * cells_per_row + spec.cell_a);
    RunRecord rec;
    try {
      PriorConfig prior = cfg.prior;
      prior.b_pre = spec.b_pre;
      const auto model = build_agent_model(process, prior, cfg.preference_scale, cfg.planning);
      rec = run_agent(process, model, cfg.protocol, seed_for(cfg.seed, cell, static_cast<std::uint32_t>(spec.agent)),
                      cfg.steps, cfg.persist_beliefs);
    } catch (const std::exception& e) {
      rec.failed = true;
      rec.error = e.what();
    }
    rec.experiment = cfg.name;
    rec.cell_i = spec.cell_i;
    rec.cell_a = spec.cell_a;
    rec.agent = spec.agent;
    out[k] = std::move(rec);
  });
  std::stable_sort(out.begin(), out.end(), [](const RunRecord& x, const RunRecord& y) {
    return std::tie(x.cell_i, x.cell_a, x.agent) < std::tie(y.cell_i, y.cell_a, y.agent);
  });
  return out;
}

/// n_agents runs at the configured priors.
inline std::vector<RunRecord> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto process = build_process(cfg.process);
  std::vector<RunSpec> specs;
  for (std::size_t a = 0; a < cfg.n_agents; ++a) specs.push_back({0, 0, a, cfg.prior.b_pre});
  return execute_runs(cfg, process, specs, 1);
}

inline std::vector<RunRecord> run_experiment_familiar(const std::function<void(ExperimentConfig&)>& overrides = {}) {
  auto cfg = familiar_config();
  if (overrides) overrides(cfg);
  return run_experiment(cfg);
}

inline std::vector<RunRecord> run_experiment_naive(const std::function<void(ExperimentConfig&)>& overrides = {}) {
  auto cfg = naive_config();
  if (overrides) overrides(cfg);
  return run_experiment(cfg);
}

struct GridResult {
  std::vector<double> axis;                  ///< b_pre values, shared by both axes
  std::vector<std::vector<double>> before;   ///< [row = b_pre(i)][col = b_pre(alpha)]
  std::vector<std::vector<double>> after;
  std::vector<RunRecord> records;
  std::size_t failed_runs = 0;
  std::size_t failed_cells = 0;
};

/// Sweeps b_pre(intensity) x b_pre(orientation). A cell with any failed run
/// reports NaN; the sweep itself always completes.
inline GridResult run_grid(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto process = build_process(cfg.process);
  const std::size_t n = cfg.grid.resolution;
  GridResult g;
  for (std::size_t k = 0; k < n; ++k) g.axis.push_back(cfg.grid.value(k));
  std::vector<RunSpec> specs;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c)
      for (std::size_t a = 0; a < cfg.n_agents; ++a) specs.push_back({r, c, a, {g.axis[r], g.axis[c]}});
  g.records = execute_runs(cfg, process, specs, n);

  const double nan = std::numeric_limits<double>::quiet_NaN();
  g.before.assign(n, std::vector<double>(n, 0.0));
  g.after.assign(n, std::vector<double>(n, 0.0));
  std::vector<std::vector<bool>> bad(n, std::vector<bool>(n, false));
  for (const auto& rec : g.records) {
    if (rec.failed) {
      ++g.failed_runs;
      bad[rec.cell_i][rec.cell_a] = true;
      continue;
    }
    g.before[rec.cell_i][rec.cell_a] += performance(rec, cfg.window, false, cfg.metric);
    g.after[rec.cell_i][rec.cell_a] += performance(rec, cfg.window, true, cfg.metric);
  }
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      if (bad[r][c]) {
        ++g.failed_cells;
        g.before[r][c] = g.after[r][c] = nan;
      } else {
        g.before[r][c] /= static_cast<double>(cfg.n_agents);
        g.after[r][c] /= static_cast<double>(cfg.n_agents);
      }
    }
  return g;
}

// ---------------------------------------------------------------------------
// Persistence

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Shortest text that round-trips: 17 significant digits.
inline std::string fmt_real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  return f;
}

inline void close_output(std::ofstream& f, const std::filesystem::path& path) {
  f.close();
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

inline void write_trials_csv(const std::vector<RunRecord>& records, const std::filesystem::path& path) {
  auto f = open_output(path);
  f << "experiment,cell_i,cell_a,agent,trial,mean_intensity_idx,mean_orientation_idx,mean_noiseless_asi,"
       "mean_feedback,mean_vfe,mean_G_risk,mean_G_ambiguity,mean_G_novelty\n";
  for (const auto& r : records)
    for (const auto& t : r.trials)
      f << r.experiment << ',' << r.cell_i << ',' << r.cell_a << ',' << r.agent << ',' << t.trial << ','
        << fmt_real(t.mean_intensity) << ',' << fmt_real(t.mean_orientation) << ',' << fmt_real(t.mean_asymmetry)
        << ',' << fmt_real(t.mean_feedback) << ',' << fmt_real(t.mean_vfe) << ',' << fmt_real(t.mean_risk) << ','
        << fmt_real(t.mean_ambiguity) << ',' << fmt_real(t.mean_novelty) << '\n';
  close_output(f, path);
}

inline void write_steps_csv(const std::vector<RunRecord>& records, const std::filesystem::path& path) {
  auto f = open_output(path);
  f << "experiment,cell_i,cell_a,agent,trial,step,phase,intensity_idx,orientation_idx,action_intensity,"
       "action_orientation,feedback,l_erd,noiseless_asi,vfe,G_risk,G_ambiguity,G_novelty\n";
  for (const auto& r : records)
    for (const auto& s : r.steps) {
      f << r.experiment << ',' << r.cell_i << ',' << r.cell_a << ',' << r.agent << ',' << s.trial << ',' << s.step
        << ',' << (s.phase == Phase::mi ? "mi" : "rest") << ',' << s.state.intensity << ',' << s.state.orientation
        << ',' << s.action[kIntensity] << ',' << s.action[kOrientation] << ',';
      if (s.outcome.feedback) f << *s.outcome.feedback;
      f << ',' << s.outcome.left_erd << ',' << fmt_real(s.outcome.noiseless_asymmetry) << ',' << fmt_real(s.vfe) << ','
        << fmt_real(s.terms.risk) << ',' << fmt_real(s.terms.ambiguity) << ',' << fmt_real(s.terms.novelty()) << '\n';
    }
  close_output(f, path);
}

/// Matrix with b_pre(orientation) across and b_pre(intensity) down.
inline void write_grid_csv(const std::vector<double>& axis, const std::vector<std::vector<double>>& m,
                           const std::filesystem::path& path) {
  auto f = open_output(path);
  f << "b_pre_intensity\\b_pre_orientation";
  for (double v : axis) f << ',' << fmt_real(v);
  f << '\n';
  for (std::size_t r = 0; r < m.size(); ++r) {
    f << fmt_real(axis[r]);
    for (double v : m[r]) f << ',' << fmt_real(v);
    f << '\n';
  }
  close_output(f, path);
}

inline void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  auto f = open_output(path);
  f << j.dump(2) << '\n';
  close_output(f, path);
}

/// Group-level statistics echoed into summary.json.
inline nlohmann::json aggregate_stats(const ExperimentConfig& cfg, const std::vector<RunRecord>& records) {
  double before = 0.0, after = 0.0, o_first = 0.0, o_last = 0.0, i_first = 0.0, i_last = 0.0;
  std::size_t ok = 0;
  for (const auto& r : records) {
    if (r.failed) continue;
    ++ok;
    const std::size_t w = cfg.window;
    const std::size_t last = r.trials.size() - w;
    before += performance(r, w, false, cfg.metric);
    after += performance(r, w, true, cfg.metric);
    o_first += window_mean(r, 0, w, &TrialSummary::mean_orientation);
    o_last += window_mean(r, last, w, &TrialSummary::mean_orientation);
    i_first += window_mean(r, 0, w, &TrialSummary::mean_intensity);
    i_last += window_mean(r, last, w, &TrialSummary::mean_intensity);
  }
  const double n = ok ? static_cast<double>(ok) : std::numeric_limits<double>::quiet_NaN();
  return {{"completed_runs", ok},
          {"window", cfg.window},
          {"metric", to_string(cfg.metric)},
          {"performance_first_window", before / n},
          {"performance_last_window", after / n},
          {"orientation_first_window", o_first / n},
          {"orientation_last_window", o_last / n},
          {"intensity_first_window", i_first / n},
          {"intensity_last_window", i_last / n}};
}

/// Writes trials.csv, steps.csv (if traced), grid matrices (if given) and
/// summary.json into `dir`.
inline void export_records(const ExperimentConfig& cfg, const std::string& command,
                           const std::vector<RunRecord>& records, const std::filesystem::path& dir,
                           double wall_time_s, const GridResult* grid = nullptr) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

  std::vector<const RunRecord*> sorted;
  for (const auto& r : records) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(), [](const RunRecord* x, const RunRecord* y) {
    return std::tie(x->cell_i, x->cell_a, x->agent) < std::tie(y->cell_i, y->cell_a, y->agent);
  });
  std::vector<RunRecord> ordered;
  ordered.reserve(sorted.size());
  for (const auto* r : sorted) ordered.push_back(*r);

  nlohmann::json outputs = {{"trials", "trials.csv"}};
  write_trials_csv(ordered, dir / "trials.csv");
  if (cfg.steps) {
    write_steps_csv(ordered, dir / "steps.csv");
    outputs["steps"] = "steps.csv";
  }
  std::size_t failures = 0;
  nlohmann::json errors = nlohmann::json::array();
  for (const auto& r : ordered)
    if (r.failed) {
      ++failures;
      errors.push_back({{"cell_i", r.cell_i}, {"cell_a", r.cell_a}, {"agent", r.agent}, {"error", r.error}});
    }
  nlohmann::json summary = {{"command", command},
                            {"config", to_json(cfg)},
                            {"runs", ordered.size()},
                            {"failures", failures},
                            {"errors", errors},
                            {"wall_time_s", wall_time_s},
                            {"aggregates", aggregate_stats(cfg, ordered)},
                            {"process_steps_per_eeg_update", 1.0 / static_cast<double>(cfg.protocol.eeg_updates_per_step)}};
  if (grid) {
    write_grid_csv(grid->axis, grid->before, dir / "grid_before.csv");
    write_grid_csv(grid->axis, grid->after, dir / "grid_after.csv");
    outputs["grid_before"] = "grid_before.csv";
    outputs["grid_after"] = "grid_after.csv";
    summary["failed_cells"] = grid->failed_cells;
  }
  summary["outputs"] = outputs;
  write_json(summary, dir / "summary.json");
}

}  // namespace mibci
