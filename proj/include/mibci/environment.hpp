#pragma once

// The simulated BCI: hidden ERD state, its stochastic dynamics, the feedback
// channel, and the rest/MI trial protocol that couples it to an agent.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mibci/inference.hpp"
#include "mibci/model.hpp"
#include "mibci/physiology.hpp"
#include "mibci/rng.hpp"

namespace mibci {

struct TrueState {
  std::size_t intensity = 0;
  std::size_t orientation = 0;

  friend bool operator==(const TrueState&, const TrueState&) = default;
};

struct TrialProtocol {
  std::size_t t_rest = 40;
  std::size_t t_mi = 40;
  std::size_t n_trials = 10;
  /// Each process step stands for this many EEG feedback updates. Metadata only.
  std::size_t eeg_updates_per_step = 2;

  void validate() const {
    if (n_trials < 1) throw ConfigError("protocol: n_trials must be >= 1");
  }
};

enum class Phase { rest, mi };

struct StepOutcome {
  std::optional<std::size_t> feedback;  ///< present only during MI
  std::size_t left_erd = 0;             ///< logged, never shown to the agent
  double noiseless_asymmetry = 0.0;     ///< feedback-oriented, before noise
};

inline ErdPair erd_levels(const TrueState& s, const StateSpace& space, double epsilon = 0.01) {
  return erd_from_polar(space.intensity_values.at(s.intensity), space.orientation_angles.at(s.orientation), epsilon);
}

/// Samples each factor independently from its transition slice.
inline TrueState step_process(const TrueState& s, std::span<const std::size_t> action,
                              const std::array<ConditionalTensor, kNumFactors>& transitions, Xoshiro256ss& rng) {
  auto step = [&](const ConditionalTensor& t, std::size_t cur, std::size_t u) {
    const std::size_t n_act = t.condition_dims()[1];
    return sample_index(t.slice(cur * n_act + u), rng);
  };
  return {step(transitions[kIntensity], s.intensity, action[kIntensity]),
          step(transitions[kOrientation], s.orientation, action[kOrientation])};
}

inline StepOutcome emit(const TrueState& s, const ProcessModel& process, Phase phase, Xoshiro256ss& rng) {
  const std::size_t joint = process.space.joint_index(s.intensity, s.orientation);
  StepOutcome out;
  // L-ERD first so both phases consume the stream identically up to the feedback draw
  out.left_erd = sample_index(process.left_erd_emission.slice(joint), rng);
  if (phase == Phase::mi) out.feedback = sample_index(process.asymmetry_emission.slice(joint), rng);
  out.noiseless_asymmetry = process.noiseless_asymmetry(s.intensity, s.orientation);
  return out;
}

struct StepRecord {
  std::size_t trial = 0;
  std::size_t step = 0;
  Phase phase = Phase::rest;
  TrueState state;
  std::array<std::size_t, kNumFactors> action{};
  StepOutcome outcome;
  double vfe = 0.0;
  EfeTerms terms;
};

struct TrialLog {
  std::size_t trial = 0;
  std::vector<StepRecord> steps;

  friend bool operator==(const TrialLog& x, const TrialLog& y) {
    if (x.trial != y.trial || x.steps.size() != y.steps.size()) return false;
    for (std::size_t k = 0; k < x.steps.size(); ++k) {
      const auto& p = x.steps[k];
      const auto& q = y.steps[k];
      if (p.step != q.step || p.phase != q.phase || !(p.state == q.state) || p.action != q.action ||
          p.outcome.feedback != q.outcome.feedback || p.outcome.left_erd != q.outcome.left_erd ||
          p.outcome.noiseless_asymmetry != q.outcome.noiseless_asymmetry || p.vfe != q.vfe ||
          p.terms.risk != q.terms.risk || p.terms.ambiguity != q.terms.ambiguity ||
          p.terms.a_novelty != q.terms.a_novelty || p.terms.b_novelty != q.terms.b_novelty)
        return false;
    }
    return true;
  }
};

/// Hidden state of one simulated subject's cortex, carried across trials.
class Environment {
 public:
  explicit Environment(const ProcessModel& process)
      : process_(&process), state_{process.initial_state[kIntensity], process.initial_state[kOrientation]} {}

  [[nodiscard]] const ProcessModel& process() const { return *process_; }
  [[nodiscard]] const TrueState& state() const { return state_; }
  void set_state(TrueState s) { state_ = s; }

  StepOutcome step(std::span<const std::size_t> action, Phase phase, Xoshiro256ss& rng) {
    state_ = step_process(state_, action, process_->transitions, rng);
    return emit(state_, *process_, phase, rng);
  }

 private:
  const ProcessModel* process_;
  TrueState state_;
};

/// Throws ConfigError unless the agent's model matches the process shapes.
inline void check_compatible(const AgentModel& m, const ProcessModel& p) {
  if (m.a.outcomes() != p.asymmetry_emission.outcomes() || m.state_dims() != p.space.dims())
    throw ConfigError("agent model does not match the process state/outcome space");
  for (auto n : m.action_dims())
    if (n != p.actions.per_factor()) throw ConfigError("agent model does not match the process action space");
}

/// Rest phase: the process drifts under the neutral action and the agent is
/// idle. MI phase: plan, act, step, emit, infer, learn.
inline TrialLog run_trial(Agent& agent, Environment& env, const TrialProtocol& protocol, std::size_t trial_index,
                          Xoshiro256ss& rng, bool reset_beliefs = true) {
  const auto& process = env.process();
  check_compatible(agent.model(), process);
  TrialLog log;
  log.trial = trial_index;
  log.steps.reserve(protocol.t_rest + protocol.t_mi);

  const std::array<std::size_t, kNumFactors> rest_action{process.actions.rest_action(), process.actions.rest_action()};
  for (std::size_t t = 0; t < protocol.t_rest; ++t) {
    StepRecord r;
    r.trial = trial_index;
    r.step = t;
    r.phase = Phase::rest;
    r.action = rest_action;
    r.outcome = env.step(rest_action, Phase::rest, rng);
    r.state = env.state();
    log.steps.push_back(r);
  }

  if (reset_beliefs) agent.reset();
  for (std::size_t t = 0; t < protocol.t_mi; ++t) {
    StepRecord r;
    r.trial = trial_index;
    r.step = protocol.t_rest + t;
    r.phase = Phase::mi;
    const auto decision = agent.act(rng);
    r.action = {decision.action[kIntensity], decision.action[kOrientation]};
    r.terms = decision.terms;
    r.outcome = env.step(decision.action, Phase::mi, rng);
    r.state = env.state();
    r.vfe = agent.observe(decision.action, r.outcome.feedback);
    log.steps.push_back(r);
  }
  return log;
}

}  // namespace mibci
