#pragma once

// Experiment configuration: defaults, named presets, JSON/TOML loading with
// strict key checking, and a JSON echo with every default materialized.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "mibci/environment.hpp"
#include "mibci/model.hpp"

namespace mibci {

/// How "performance" is scored over a window of trials.
enum class Metric {
  asymmetry,  ///< mean feedback-oriented noiseless asymmetry, in [-1, 1]
  feedback,   ///< mean feedback bin rescaled to [-1, 1]
  occupancy,  ///< fraction of MI steps spent at (high, R), in [0, 1]
};

struct GridSpec {
  double min = 0.0;
  double max = 2.0;
  std::size_t resolution = 21;

  [[nodiscard]] double value(std::size_t k) const {
    if (resolution < 2) return min;
    return min + (max - min) * static_cast<double>(k) / static_cast<double>(resolution - 1);
  }
};

struct ExperimentConfig {
  std::string preset = "custom";
  std::string name = "custom";

  ProcessParams process;
  PriorConfig prior;
  double preference_scale = 2.0;
  PlanningParams planning;
  bool persist_beliefs = false;
  TrialProtocol protocol;

  std::size_t n_agents = 10;
  std::uint64_t seed = 20240901;
  std::size_t window = 5;
  Metric metric = Metric::asymmetry;
  GridSpec grid;
  std::size_t jobs = 1;
  std::string out = "out";
  bool steps = false;

  void validate() const {
    auto prob = [](double p, const char* what) {
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(what) + " must lie in [0,1]");
    };
    prob(process.p_effect, "process.p_effect");
    prob(process.p_decay, "process.p_decay");
    prob(planning.prune_threshold, "agent.prune_threshold");
    if (!(process.sigma_proc > 0)) throw ConfigError("process.sigma_proc must be > 0");
    if (!(process.epsilon > 0)) throw ConfigError("process.epsilon must be > 0");
    prior.validate();
    protocol.validate();
    if (planning.horizon < 1) throw ConfigError("agent.horizon must be >= 1");
    if (planning.gamma < 0) throw ConfigError("agent.gamma must be >= 0");
    if (preference_scale < 0) throw ConfigError("agent.preference_scale must be >= 0");
    if (n_agents < 1) throw ConfigError("experiment.n_agents must be >= 1");
    if (grid.resolution < 1) throw ConfigError("experiment.grid_resolution must be >= 1");
    if (grid.max < grid.min) throw ConfigError("experiment.grid_max must be >= grid_min");
    if (window < 1 || 2 * window > protocol.n_trials)
      throw ConfigError("experiment.window must satisfy 1 <= window <= n_trials / 2");
    if (jobs < 1) throw ConfigError("experiment.jobs must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Presets for the three reference experiments

/// Subjects already familiar with MI: informed action priors, noisy feedback.
inline ExperimentConfig familiar_config() {
  ExperimentConfig c;
  c.preset = c.name = "familiar";
  c.prior.b_pre = {1.0, 1.0};
  c.process.sigma_proc = 1.5;
  c.protocol.n_trials = 10;
  c.n_agents = 10;
  c.planning.horizon = 2;
  c.window = 3;
  return c;
}

/// Subjects with no lateralization prior and a reliable biomarker.
inline ExperimentConfig naive_config() {
  ExperimentConfig c;
  c.preset = c.name = "naive";
  c.prior.b_pre = {0.1, 0.0};
  c.process.sigma_proc = 0.5;
  c.protocol.n_trials = 100;
  c.n_agents = 10;
  c.planning.horizon = 2;
  c.window = 10;
  return c;
}

/// Sweep over b_pre(intensity) x b_pre(orientation) with very noisy feedback.
/// Trial budget and window are interpretations: 40 trials, first/last 5.
inline ExperimentConfig grid_config() {
  ExperimentConfig c;
  c.preset = c.name = "grid";
  c.process.sigma_proc = 1.5;
  c.protocol.n_trials = 40;
  c.n_agents = 10;
  c.planning.horizon = 1;
  c.window = 5;
  c.grid = {0.0, 2.0, 21};
  return c;
}

inline ExperimentConfig preset_config(const std::string& name) {
  if (name == "familiar") return familiar_config();
  if (name == "naive") return naive_config();
  if (name == "grid") return grid_config();
  if (name == "custom") return ExperimentConfig{};
  throw ConfigError("unknown preset '" + name + "'");
}

// ---------------------------------------------------------------------------
// Enum spellings

inline std::string to_string(FeedbackPolarity p) { return p == FeedbackPolarity::right ? "right" : "left"; }
inline std::string to_string(GaussianRule r) { return r == GaussianRule::center_density ? "center" : "interval"; }
inline std::string to_string(PriorMean m) {
  switch (m) {
    case PriorMean::product: return "product";
    case PriorMean::additive: return "additive";
    case PriorMean::intensity_only: return "intensity";
  }
  return "product";
}
inline std::string to_string(Metric m) {
  switch (m) {
    case Metric::asymmetry: return "asymmetry";
    case Metric::feedback: return "feedback";
    case Metric::occupancy: return "occupancy";
  }
  return "asymmetry";
}

template <class E>
E parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, E>> table, const std::string& key) {
  for (const auto& [name, value] : table)
    if (s == name) return value;
  throw ConfigError("invalid value '" + s + "' for " + key);
}

// ---------------------------------------------------------------------------
// JSON echo

inline nlohmann::json to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  return json{
      {"process",
       {{"sigma_proc", c.process.sigma_proc},
        {"p_effect", c.process.p_effect},
        {"p_decay", c.process.p_decay},
        {"epsilon", c.process.epsilon},
        {"feedback_polarity", to_string(c.process.polarity)},
        {"gaussian_rule", to_string(c.process.rule)}}},
      {"agent",
       {{"c_a", c.prior.c_a},
        {"s_a", c.prior.s_a},
        {"sigma_model", c.prior.sigma_model},
        {"c_b", c.prior.c_b},
        {"s_b", c.prior.s_b},
        {"b_pre_intensity", c.prior.b_pre[kIntensity]},
        {"b_pre_orientation", c.prior.b_pre[kOrientation]},
        {"prior_mean", to_string(c.prior.mean)},
        {"preference_scale", c.preference_scale},
        {"horizon", c.planning.horizon},
        {"gamma", c.planning.gamma},
        {"novelty_a", c.planning.novelty_a},
        {"novelty_b", c.planning.novelty_b},
        {"digamma", c.planning.use_digamma},
        {"eta_a", c.planning.eta_a},
        {"eta_b", c.planning.eta_b},
        {"prune_threshold", c.planning.prune_threshold},
        {"persist_beliefs", c.persist_beliefs}}},
      {"protocol", {{"t_rest", c.protocol.t_rest}, {"t_mi", c.protocol.t_mi}, {"n_trials", c.protocol.n_trials}}},
      {"experiment",
       {{"preset", c.preset},
        {"name", c.name},
        {"n_agents", c.n_agents},
        {"seed", c.seed},
        {"window", c.window},
        {"metric", to_string(c.metric)},
        {"grid_min", c.grid.min},
        {"grid_max", c.grid.max},
        {"grid_resolution", c.grid.resolution},
        {"jobs", c.jobs},
        {"out", c.out},
        {"steps", c.steps}}},
  };
}

namespace detail {

/// Reads typed values out of one config section and rejects leftovers.
class SectionReader {
 public:
  SectionReader(const nlohmann::json& j, std::string section) : section_(std::move(section)) {
    if (j.contains(section_)) {
      if (!j[section_].is_object()) throw ConfigError("section '" + section_ + "' must be a table");
      obj_ = j[section_];
    }
  }

  template <class T>
  void read(const char* key, T& target) {
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!it->is_number()) throw ConfigError("");
        target = it->template get<double>();
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError("");
        target = it->template get<bool>();
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw ConfigError("");
        target = it->template get<std::string>();
      } else {
        if (!it->is_number_integer() || (!it->is_number_unsigned() && it->template get<long long>() < 0))
          throw ConfigError("");
        target = it->template get<T>();
      }
    } catch (const std::exception&) {
      throw ConfigError("wrong type for " + section_ + "." + key);
    }
    obj_.erase(it);
  }

  template <class E>
  void read_enum(const char* key, E& target, std::initializer_list<std::pair<const char*, E>> table) {
    std::string s;
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    read(key, s);
    target = parse_enum(s, table, section_ + "." + key);
  }

  void finish() const {
    if (!obj_.empty()) throw ConfigError("unknown key " + section_ + "." + obj_.begin().key());
  }

 private:
  std::string section_;
  nlohmann::json obj_ = nlohmann::json::object();
};

}  // namespace detail

/// Builds a config from a parsed document. The `experiment.preset` key, if
/// present, selects the starting defaults; every other key overrides them.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config root must be a table");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k != "process" && k != "agent" && k != "protocol" && k != "experiment")
      throw ConfigError("unknown section '" + k + "'");
  }
  std::string preset = "custom";
  if (j.contains("experiment") && j["experiment"].is_object() && j["experiment"].contains("preset")) {
    if (!j["experiment"]["preset"].is_string()) throw ConfigError("wrong type for experiment.preset");
    preset = j["experiment"]["preset"].get<std::string>();
  }
  ExperimentConfig c = preset_config(preset);

  detail::SectionReader p(j, "process");
  p.read("sigma_proc", c.process.sigma_proc);
  p.read("p_effect", c.process.p_effect);
  p.read("p_decay", c.process.p_decay);
  p.read("epsilon", c.process.epsilon);
  p.read_enum("feedback_polarity", c.process.polarity,
              {{"right", FeedbackPolarity::right}, {"left", FeedbackPolarity::left}});
  p.read_enum("gaussian_rule", c.process.rule,
              {{"center", GaussianRule::center_density}, {"interval", GaussianRule::interval_integral}});
  p.finish();

  detail::SectionReader a(j, "agent");
  a.read("c_a", c.prior.c_a);
  a.read("s_a", c.prior.s_a);
  a.read("sigma_model", c.prior.sigma_model);
  a.read("c_b", c.prior.c_b);
  a.read("s_b", c.prior.s_b);
  a.read("b_pre_intensity", c.prior.b_pre[kIntensity]);
  a.read("b_pre_orientation", c.prior.b_pre[kOrientation]);
  a.read_enum("prior_mean", c.prior.mean,
              {{"product", PriorMean::product}, {"additive", PriorMean::additive}, {"intensity", PriorMean::intensity_only}});
  a.read("preference_scale", c.preference_scale);
  a.read("horizon", c.planning.horizon);
  a.read("gamma", c.planning.gamma);
  a.read("novelty_a", c.planning.novelty_a);
  a.read("novelty_b", c.planning.novelty_b);
  a.read("digamma", c.planning.use_digamma);
  a.read("eta_a", c.planning.eta_a);
  a.read("eta_b", c.planning.eta_b);
  a.read("prune_threshold", c.planning.prune_threshold);
  a.read("persist_beliefs", c.persist_beliefs);
  a.finish();

  detail::SectionReader t(j, "protocol");
  t.read("t_rest", c.protocol.t_rest);
  t.read("t_mi", c.protocol.t_mi);
  t.read("n_trials", c.protocol.n_trials);
  t.finish();

  detail::SectionReader e(j, "experiment");
  e.read("preset", c.preset);
  e.read("name", c.name);
  e.read("n_agents", c.n_agents);
  e.read("seed", c.seed);
  e.read("window", c.window);
  e.read_enum("metric", c.metric,
              {{"asymmetry", Metric::asymmetry}, {"feedback", Metric::feedback}, {"occupancy", Metric::occupancy}});
  e.read("grid_min", c.grid.min);
  e.read("grid_max", c.grid.max);
  e.read("grid_resolution", c.grid.resolution);
  e.read("jobs", c.jobs);
  e.read("out", c.out);
  e.read("steps", c.steps);
  e.finish();

  c.validate();
  return c;
}

/// Minimal TOML reader: `[section]` headers, `key = value` pairs with
/// integer, float, boolean and quoted-string values, and `#` comments.
inline nlohmann::json parse_toml(const std::string& text) {
  nlohmann::json root = nlohmann::json::object();
  nlohmann::json* section = &root;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string{};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  auto fail = [&](const std::string& why) {
    throw ConfigError("TOML line " + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    // strip comments outside quotes
    bool quoted = false;
    char quote = 0;
    for (std::size_t k = 0; k < line.size(); ++k) {
      const char ch = line[k];
      if (quoted) {
        if (ch == quote) quoted = false;
      } else if (ch == '"' || ch == '\'') {
        quoted = true;
        quote = ch;
      } else if (ch == '#') {
        line.resize(k);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      const auto name = trim(line.substr(1, line.size() - 2));
      if (name.empty()) fail("empty section name");
      if (root.contains(name)) fail("duplicate section '" + name + "'");
      root[name] = nlohmann::json::object();
      section = &root[name];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const auto key = trim(line.substr(0, eq));
    const auto raw = trim(line.substr(eq + 1));
    if (key.empty() || raw.empty()) fail("expected key = value");
    if (section->contains(key)) fail("duplicate key '" + key + "'");
    nlohmann::json value;
    if (raw.front() == '"' || raw.front() == '\'') {
      if (raw.size() < 2 || raw.back() != raw.front()) fail("unterminated string");
      value = raw.substr(1, raw.size() - 2);
    } else if (raw == "true" || raw == "false") {
      value = raw == "true";
    } else {
      std::string num;
      for (char ch : raw)
        if (ch != '_') num += ch;
      const bool is_float = num.find_first_of(".eE") != std::string::npos || num == "inf" || num == "nan";
      try {
        std::size_t used = 0;
        if (is_float) {
          value = std::stod(num, &used);
        } else if (!num.empty() && num.front() == '-') {
          value = std::stoll(num, &used);
        } else {
          value = static_cast<std::uint64_t>(std::stoull(num, &used));
        }
        if (used != num.size()) fail("bad number '" + raw + "'");
      } catch (const std::logic_error&) {
        fail("bad value '" + raw + "'");
      }
    }
    (*section)[key] = std::move(value);
  }
  return root;
}

/// Loads a `.json` or `.toml` file; the extension decides the syntax.
inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << f.rdbuf();
  const std::string text = buf.str();
  const bool toml = path.size() >= 5 && path.substr(path.size() - 5) == ".toml";
  try {
    return config_from_json(toml ? parse_toml(text) : nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("'" + path + "': " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError("'" + path + "': " + e.what());
  }
}

}  // namespace mibci
