#pragma once

// Builders for both sides of the loop: the true BCI process (A, B, D) and the
// subject's generative model (a, b, c, d, e).

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <tuple>
#include <vector>

#include "mibci/belief.hpp"
#include "mibci/physiology.hpp"

namespace mibci {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Hidden-state factors of the task.
enum Factor : std::size_t { kIntensity = 0, kOrientation = 1 };
inline constexpr std::size_t kNumFactors = 2;

struct StateSpace {
  std::vector<std::string> intensity_labels{"null", "low", "medium", "high"};
  std::vector<double> intensity_values{0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};
  std::vector<std::string> orientation_labels{"L", "CL", "C", "CR", "R"};
  std::vector<double> orientation_angles{0.0, std::numbers::pi / 8, std::numbers::pi / 4, 3 * std::numbers::pi / 8,
                                         std::numbers::pi / 2};
  std::size_t intensity_rest = 0;
  std::size_t orientation_rest = 2;

  [[nodiscard]] std::size_t levels(std::size_t factor) const {
    return factor == kIntensity ? intensity_values.size() : orientation_angles.size();
  }
  [[nodiscard]] std::size_t resting(std::size_t factor) const {
    return factor == kIntensity ? intensity_rest : orientation_rest;
  }
  [[nodiscard]] std::vector<std::size_t> dims() const { return {levels(kIntensity), levels(kOrientation)}; }
  [[nodiscard]] std::size_t joint_size() const { return levels(kIntensity) * levels(kOrientation); }
  [[nodiscard]] std::size_t joint_index(std::size_t i, std::size_t a) const { return i * levels(kOrientation) + a; }

  void validate() const {
    auto increasing = [](const std::vector<double>& v, double lo, double hi) {
      if (v.empty()) return false;
      for (std::size_t k = 0; k < v.size(); ++k) {
        if (v[k] < lo || v[k] > hi) return false;
        if (k > 0 && !(v[k] > v[k - 1])) return false;
      }
      return true;
    };
    if (!increasing(intensity_values, 0.0, 1.0)) throw ConfigError("StateSpace: intensity values must increase in [0,1]");
    if (!increasing(orientation_angles, 0.0, std::numbers::pi / 2 + 1e-12))
      throw ConfigError("StateSpace: angles must increase in [0,pi/2]");
    if (intensity_rest >= intensity_values.size() || orientation_rest >= orientation_angles.size())
      throw ConfigError("StateSpace: resting index out of range");
  }
};

/// Per-factor mental actions: index 0 moves up, 1 moves down, the rest are
/// neutral. For orientation "up" points towards R.
struct ActionSpace {
  std::size_t n_up = 1;
  std::size_t n_down = 1;
  std::size_t n_neutral = 10;

  static constexpr std::size_t kUp = 0;
  static constexpr std::size_t kDown = 1;

  [[nodiscard]] std::size_t per_factor() const { return n_up + n_down + n_neutral; }
  [[nodiscard]] std::size_t joint_size() const { return per_factor() * per_factor(); }
  [[nodiscard]] bool is_up(std::size_t u) const { return u < n_up; }
  [[nodiscard]] bool is_down(std::size_t u) const { return u >= n_up && u < n_up + n_down; }
  [[nodiscard]] bool is_neutral(std::size_t u) const { return u >= n_up + n_down && u < per_factor(); }
  /// The neutral action the process follows while the subject rests.
  [[nodiscard]] std::size_t rest_action() const { return n_up + n_down; }
  [[nodiscard]] std::string label(std::size_t u) const {
    if (is_up(u)) return "up";
    if (is_down(u)) return "down";
    return "neutral" + std::to_string(u - n_up - n_down);
  }
};

struct EmissionGrids {
  BinGrid asymmetry = BinGrid({-1.0, -0.5, 0.0, 0.5, 1.0});
  BinGrid left_erd = BinGrid({0.0, 0.25, 0.5, 0.75, 1.0});
};

struct ProcessParams {
  double sigma_proc = 1.5;  ///< bin widths
  double p_effect = 0.99;
  double p_decay = 0.1;
  double epsilon = 0.01;
  FeedbackPolarity polarity = FeedbackPolarity::right;
  GaussianRule rule = GaussianRule::center_density;
};

/// The true BCI loop. Immutable once built; shared read-only between runs.
struct ProcessModel {
  StateSpace space;
  ActionSpace actions;
  EmissionGrids grids;
  ProcessParams params;
  ConditionalTensor asymmetry_emission;       ///< [feedback, intensity, orientation]
  ConditionalTensor left_erd_emission;        ///< [level, intensity, orientation]
  std::array<ConditionalTensor, kNumFactors> transitions;  ///< [next, current, action]
  std::array<std::size_t, kNumFactors> initial_state{};

  /// Feedback-oriented asymmetry of a state: positive = trained direction.
  [[nodiscard]] double noiseless_asymmetry(std::size_t i, std::size_t a) const {
    const auto erd = erd_from_polar(space.intensity_values[i], space.orientation_angles[a], params.epsilon);
    return polarity_sign(params.polarity) * asymmetry_index(erd);
  }
};

/// Transition tensor [next, current, action] of one factor.
inline ConditionalTensor build_factor_transitions(std::size_t levels, std::size_t resting, const ActionSpace& actions,
                                                  double p_effect, double p_decay) {
  if (p_effect < 0.0 || p_effect > 1.0 || p_decay < 0.0 || p_decay > 1.0)
    throw ConfigError("transition probabilities must lie in [0,1]");
  const std::size_t n_act = actions.per_factor();
  ConditionalTensor t(levels, {levels, n_act});
  for (std::size_t k = 0; k < levels; ++k) {
    for (std::size_t u = 0; u < n_act; ++u) {
      const std::size_t cond = k * n_act + u;
      std::size_t target = k;
      double p_move = 0.0;
      if (actions.is_up(u)) {
        target = std::min(k + 1, levels - 1);
        p_move = p_effect;
      } else if (actions.is_down(u)) {
        target = k == 0 ? 0 : k - 1;
        p_move = p_effect;
      } else if (k != resting) {
        target = k < resting ? k + 1 : k - 1;
        p_move = p_decay;
      }
      t.at(target, cond) += p_move;
      t.at(k, cond) += 1.0 - p_move;
    }
  }
  return t;
}

/// Emission tensor whose (i, k) slice is a discretized Gaussian around mean_of(i, k).
inline ConditionalTensor build_emission(const StateSpace& space, const BinGrid& grid, double sigma_bins,
                                        GaussianRule rule, auto&& mean_of) {
  ConditionalTensor a(grid.size(), space.dims());
  const double sigma = sigma_bins * grid.bin_width();
  for (std::size_t i = 0; i < space.levels(kIntensity); ++i)
    for (std::size_t k = 0; k < space.levels(kOrientation); ++k) {
      const auto slice = discretize_gaussian(mean_of(i, k), sigma, grid, rule);
      a.set_slice(space.joint_index(i, k), slice.probs());
    }
  return a;
}

/// AsI and L-ERD emission tensors of the process.
inline std::pair<ConditionalTensor, ConditionalTensor> build_process_emissions(const StateSpace& space,
                                                                               const EmissionGrids& grids,
                                                                               const ProcessParams& p) {
  auto erd = [&](std::size_t i, std::size_t k) {
    return erd_from_polar(space.intensity_values[i], space.orientation_angles[k], p.epsilon);
  };
  auto asym = build_emission(space, grids.asymmetry, p.sigma_proc, p.rule, [&](std::size_t i, std::size_t k) {
    return polarity_sign(p.polarity) * asymmetry_index(erd(i, k));
  });
  auto left = build_emission(space, grids.left_erd, p.sigma_proc, p.rule,
                             [&](std::size_t i, std::size_t k) { return erd(i, k).left; });
  return {std::move(asym), std::move(left)};
}

inline std::array<ConditionalTensor, kNumFactors> build_process_transitions(const StateSpace& space,
                                                                            const ActionSpace& actions,
                                                                            double p_effect, double p_decay) {
  return {build_factor_transitions(space.levels(kIntensity), space.intensity_rest, actions, p_effect, p_decay),
          build_factor_transitions(space.levels(kOrientation), space.orientation_rest, actions, p_effect, p_decay)};
}

inline ProcessModel build_process(const ProcessParams& params, StateSpace space = {}, ActionSpace actions = {},
                                  EmissionGrids grids = {}) {
  space.validate();
  if (!(params.sigma_proc > 0.0)) throw ConfigError("sigma_proc must be > 0");
  if (!(params.epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  ProcessModel m{space, actions, grids, params, {}, {}, {}, {}};
  std::tie(m.asymmetry_emission, m.left_erd_emission) = build_process_emissions(space, grids, params);
  m.transitions = build_process_transitions(space, actions, params.p_effect, params.p_decay);
  m.initial_state = {space.intensity_rest, space.orientation_rest};
  return m;
}

// ---------------------------------------------------------------------------
// Subject priors

/// How the believed feedback mean combines intensity and laterality.
enum class PriorMean {
  product,         ///< intensity * laterality
  additive,        ///< (intensity + laterality) / 2
  intensity_only,  ///< intensity alone
};

struct PriorConfig {
  double c_a = 1.0;
  double s_a = 100.0;
  double sigma_model = 0.5;  ///< bin widths
  double c_b = 1.0;
  double s_b = 1.0;
  std::array<double, kNumFactors> b_pre{0.0, 0.0};
  PriorMean mean = PriorMean::product;

  void validate() const {
    if (c_a < 0 || s_a < 0 || c_b < 0 || s_b < 0) throw ConfigError("prior concentrations must be >= 0");
    if (!(sigma_model > 0.0)) throw ConfigError("sigma_model must be > 0");
    for (double v : b_pre) {
      if (v < 0) throw ConfigError("b_pre must be >= 0");
      if (c_b == 0 && s_b == 0 && v == 0) throw ConfigError("b prior is identically zero");
    }
  }
};

/// Laterality of an orientation at unit strength, feedback-oriented.
inline double laterality(const StateSpace& space, std::size_t k, double epsilon, FeedbackPolarity polarity) {
  return polarity_sign(polarity) * asymmetry_index(erd_from_polar(1.0, space.orientation_angles[k], epsilon));
}

/// Feedback value the subject initially expects from state (i, k).
inline double believed_feedback_mean(const StateSpace& space, std::size_t i, std::size_t k, PriorMean rule,
                                     double epsilon, FeedbackPolarity polarity) {
  const double intensity = space.intensity_values[i];
  const double lat = laterality(space, k, epsilon, polarity);
  switch (rule) {
    case PriorMean::product: return intensity * lat;
    case PriorMean::additive: return 0.5 * (intensity + lat);
    case PriorMean::intensity_only: return intensity;
  }
  return 0.0;
}

/// Counts never drop to zero; cells with no prior mass get this floor.
inline constexpr double kCountFloor = 1e-16;

/// a0 = c_a + s_a * Cat(N(m(i, k), sigma_model)) over the feedback grid.
inline DirichletCounts build_prior_a(const StateSpace& space, const BinGrid& grid, const PriorConfig& cfg,
                                     double epsilon = 0.01, FeedbackPolarity polarity = FeedbackPolarity::right,
                                     GaussianRule rule = GaussianRule::center_density) {
  cfg.validate();
  auto shape = build_emission(space, grid, cfg.sigma_model, rule, [&](std::size_t i, std::size_t k) {
    return believed_feedback_mean(space, i, k, cfg.mean, epsilon, polarity);
  });
  for (double& x : shape.data()) x = std::max(cfg.c_a + cfg.s_a * x, kCountFloor);
  return DirichletCounts(std::move(shape));
}

/// b0 = c_b + s_b * Id + b_pre * B_true, identity broadcast over actions.
inline DirichletCounts build_prior_b(const ConditionalTensor& process_b, double c_b, double s_b, double b_pre) {
  const auto& dims = process_b.condition_dims();
  if (dims.size() != 2 || dims[0] != process_b.outcomes()) throw ShapeError("build_prior_b: expected [n, n, u] tensor");
  const std::size_t n = process_b.outcomes();
  const std::size_t n_act = dims[1];
  ConditionalTensor counts = process_b;
  for (std::size_t next = 0; next < n; ++next)
    for (std::size_t cur = 0; cur < n; ++cur)
      for (std::size_t u = 0; u < n_act; ++u) {
        const std::size_t cond = cur * n_act + u;
        const double v = c_b + (next == cur ? s_b : 0.0) + b_pre * process_b.at(next, cond);
        counts.at(next, cond) = std::max(v, kCountFloor);
      }
  return DirichletCounts(std::move(counts));
}

/// Log-preferences rising linearly with the feedback level, top level at 0.
inline std::vector<double> build_preferences(std::size_t n_levels, double scale) {
  if (scale < 0) throw ConfigError("preference scale must be >= 0");
  std::vector<double> c(n_levels);
  for (std::size_t j = 0; j < n_levels; ++j) c[j] = scale * (static_cast<double>(j) - static_cast<double>(n_levels - 1));
  return c;
}

struct PlanningParams {
  std::size_t horizon = 2;
  double gamma = 16.0;
  bool novelty_a = true;
  bool novelty_b = true;
  bool use_digamma = true;
  double eta_a = 1.0;
  double eta_b = 1.0;
  double prune_threshold = 1.0 / 16.0;
};

/// The subject's generative model. Factors are ordered; joint states and joint
/// actions are row-major over factors (last factor fastest).
struct AgentModel {
  DirichletCounts a;               ///< [outcome, factor0, factor1, ...]
  std::vector<DirichletCounts> b;  ///< per factor [next, current, action]
  std::vector<double> c;           ///< log-preferences over outcomes
  std::vector<Categorical> d;      ///< initial-state belief per factor
  Categorical e;                   ///< habits over joint actions
  PlanningParams planning;

  [[nodiscard]] std::vector<std::size_t> state_dims() const {
    std::vector<std::size_t> dims;
    for (const auto& df : d) dims.push_back(df.size());
    return dims;
  }
  [[nodiscard]] std::vector<std::size_t> action_dims() const {
    std::vector<std::size_t> dims;
    for (const auto& bf : b) dims.push_back(bf.tensor().condition_dims().at(1));
    return dims;
  }
  [[nodiscard]] std::size_t joint_states() const { return a.conditions(); }
  [[nodiscard]] std::size_t joint_actions() const { return e.size(); }

  void validate() const {
    if (b.size() != d.size() || b.empty()) throw ShapeError("AgentModel: factor count mismatch");
    std::size_t states = 1, acts = 1;
    for (std::size_t f = 0; f < b.size(); ++f) {
      const auto& dims = b[f].tensor().condition_dims();
      if (dims.size() != 2 || dims[0] != d[f].size() || b[f].outcomes() != d[f].size())
        throw ShapeError("AgentModel: b shape does not match d");
      states *= d[f].size();
      acts *= dims[1];
    }
    if (a.conditions() != states) throw ShapeError("AgentModel: a conditions do not match the state space");
    if (c.size() != a.outcomes()) throw ShapeError("AgentModel: preferences do not match outcomes");
    if (e.size() != acts) throw ShapeError("AgentModel: habits do not match the action space");
    if (planning.horizon < 1) throw ConfigError("planning horizon must be >= 1");
    if (planning.gamma < 0) throw ConfigError("gamma must be >= 0");
  }
};

/// The subject model for the MI task: a over the AsI modality only.
inline AgentModel build_agent_model(const ProcessModel& process, const PriorConfig& prior, double preference_scale,
                                    const PlanningParams& planning) {
  AgentModel m;
  m.a = build_prior_a(process.space, process.grids.asymmetry, prior, process.params.epsilon, process.params.polarity,
                      process.params.rule);
  for (std::size_t f = 0; f < kNumFactors; ++f) {
    m.b.push_back(build_prior_b(process.transitions[f], prior.c_b, prior.s_b, prior.b_pre[f]));
    m.d.push_back(Categorical::one_hot(process.space.levels(f), process.space.resting(f)));
  }
  m.c = build_preferences(process.grids.asymmetry.size(), preference_scale);
  m.e = Categorical::uniform(process.actions.joint_size());
  m.planning = planning;
  m.validate();
  return m;
}

}  // namespace mibci
