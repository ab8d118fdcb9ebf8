#pragma once

// Active-inference loop for a factorized discrete state space: exact joint
// state inference, expected free energy, sophisticated (observation-branching)
// planning, action sampling and Dirichlet count learning.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "mibci/belief.hpp"
#include "mibci/model.hpp"
#include "mibci/rng.hpp"

namespace mibci {

struct InvalidObservation : std::out_of_range {
  using std::out_of_range::out_of_range;
};

/// Joint belief over all factors, row-major with the last factor fastest.
class BeliefState {
 public:
  BeliefState() = default;
  BeliefState(std::vector<std::size_t> dims, Categorical joint) : dims_(std::move(dims)), joint_(std::move(joint)) {
    std::size_t n = 1;
    for (auto d : dims_) n *= d;
    if (n != joint_.size()) throw ShapeError("BeliefState: joint size does not match factor dims");
  }

  /// Independent factors.
  static BeliefState from_factors(const std::vector<Categorical>& factors) {
    std::vector<std::size_t> dims;
    std::vector<double> joint{1.0};
    for (const auto& f : factors) {
      dims.push_back(f.size());
      std::vector<double> next(joint.size() * f.size());
      for (std::size_t j = 0; j < joint.size(); ++j)
        for (std::size_t k = 0; k < f.size(); ++k) next[j * f.size() + k] = joint[j] * f[k];
      joint = std::move(next);
    }
    return {std::move(dims), normalize(joint)};
  }

  [[nodiscard]] const std::vector<std::size_t>& dims() const { return dims_; }
  [[nodiscard]] const Categorical& joint() const { return joint_; }
  [[nodiscard]] std::size_t size() const { return joint_.size(); }

  [[nodiscard]] Categorical marginal(std::size_t factor) const {
    return Categorical::from_probs(marginalize(joint_.probs(), dims_, factor));
  }

  /// Sums a joint vector over every factor but one.
  static std::vector<double> marginalize(std::span<const double> joint, const std::vector<std::size_t>& dims,
                                         std::size_t factor) {
    std::size_t inner = 1;
    for (std::size_t f = factor + 1; f < dims.size(); ++f) inner *= dims[f];
    const std::size_t n = dims[factor];
    std::vector<double> m(n, 0.0);
    for (std::size_t s = 0; s < joint.size(); ++s) m[(s / inner) % n] += joint[s];
    return m;
  }

 private:
  std::vector<std::size_t> dims_;
  Categorical joint_;
};

/// Applies one factor's transition matrix along its axis of a joint vector.
/// `trans` is a [next, current, action] tensor; `action` selects the slice.
inline void apply_factor_transition(std::span<const double> in, std::span<double> out,
                                    const std::vector<std::size_t>& dims, std::size_t factor,
                                    const ConditionalTensor& trans, std::size_t action) {
  std::size_t inner = 1;
  for (std::size_t f = factor + 1; f < dims.size(); ++f) inner *= dims[f];
  const std::size_t n = dims[factor];
  const std::size_t outer = in.size() / (n * inner);
  const std::size_t n_act = trans.condition_dims()[1];
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t r = 0; r < inner; ++r) {
      const std::size_t base = o * n * inner + r;
      for (std::size_t next = 0; next < n; ++next) {
        double acc = 0.0;
        for (std::size_t cur = 0; cur < n; ++cur) acc += trans.at(next, cur * n_act + action) * in[base + cur * inner];
        out[base + next * inner] = acc;
      }
    }
}

struct InferenceResult {
  BeliefState posterior;
  double vfe = 0.0;  ///< -ln evidence; exact because inference is exact
};

/// Exact Bayes update of a joint belief given a log-likelihood tensor
/// [outcome, joint state].
inline InferenceResult infer_states(const BeliefState& prior, std::optional<std::size_t> obs,
                                    const ConditionalTensor& log_likelihood) {
  if (!obs) return {prior, 0.0};
  if (*obs >= log_likelihood.outcomes()) throw InvalidObservation("infer_states: observation index out of range");
  if (log_likelihood.conditions() != prior.size()) throw ShapeError("infer_states: likelihood/state size mismatch");
  // Scale by the largest log-likelihood so exp() cannot underflow everywhere.
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < prior.size(); ++s)
    if (prior.joint()[s] > 0.0) top = std::max(top, log_likelihood.at(*obs, s));
  std::vector<double> post(prior.size());
  double mass = 0.0;
  for (std::size_t s = 0; s < prior.size(); ++s) {
    post[s] = prior.joint()[s] > 0.0 ? std::exp(log_likelihood.at(*obs, s) - top) * prior.joint()[s] : 0.0;
    mass += post[s];
  }
  const double vfe = -(std::log(mass) + top);
  return {BeliefState(prior.dims(), normalize(post)), vfe};
}

/// Infers with the Dirichlet-expected log-likelihood of `a`.
inline InferenceResult infer_states(const BeliefState& prior, std::optional<std::size_t> obs,
                                    const DirichletCounts& a, bool use_digamma = true) {
  if (!obs) return {prior, 0.0};
  return infer_states(prior, obs, expected_log(a, use_digamma));
}

/// Pushes the belief through the expected transitions of the chosen actions.
inline BeliefState predict_states(const BeliefState& belief, std::span<const std::size_t> action,
                                  const std::vector<DirichletCounts>& b) {
  const auto& dims = belief.dims();
  if (action.size() != dims.size() || b.size() != dims.size()) throw ShapeError("predict_states: factor count mismatch");
  std::vector<double> cur(belief.joint().vec()), next(cur.size());
  for (std::size_t f = 0; f < dims.size(); ++f) {
    if (action[f] >= b[f].tensor().condition_dims()[1]) throw ShapeError("predict_states: action out of range");
    apply_factor_transition(cur, next, dims, f, b[f].expectation(), action[f]);
    std::swap(cur, next);
  }
  return {dims, normalize(cur)};
}

struct EfeTerms {
  double risk = 0.0;
  double ambiguity = 0.0;
  double a_novelty = 0.0;
  double b_novelty = 0.0;

  [[nodiscard]] double total() const { return risk + ambiguity - a_novelty - b_novelty; }
  [[nodiscard]] double novelty() const { return a_novelty + b_novelty; }
};

/// Dirichlet information-gain weight 0.5 * (1/count - 1/slice_sum) for one cell.
inline double novelty_weight(double count, double slice_sum) { return 0.5 * (1.0 / count - 1.0 / slice_sum); }

/// Risk, ambiguity and (optionally) likelihood novelty of a predicted joint
/// state. b_novelty is left at zero; see transition_novelty.
inline EfeTerms expected_free_energy(const BeliefState& predicted, const DirichletCounts& a,
                                     std::span<const double> log_preferences, bool include_novelty) {
  if (a.conditions() != predicted.size() || log_preferences.size() != a.outcomes())
    throw ShapeError("expected_free_energy: shape mismatch");
  const auto ahat = a.expectation();
  const auto pref = softmax(log_preferences, 1.0);
  const auto& q = predicted.joint();
  std::vector<double> qo(a.outcomes(), 0.0);
  EfeTerms t;
  for (std::size_t s = 0; s < q.size(); ++s) {
    if (q[s] <= 0.0) continue;
    double h = 0.0, nov = 0.0;
    const double sum = a.slice_sum(s);
    for (std::size_t o = 0; o < a.outcomes(); ++o) {
      const double p = ahat.at(o, s);
      qo[o] += p * q[s];
      if (p > 0.0) h -= p * std::log(p);
      nov += p * novelty_weight(a.at(o, s), sum);
    }
    t.ambiguity += q[s] * h;
    if (include_novelty) t.a_novelty += q[s] * nov;
  }
  for (std::size_t o = 0; o < qo.size(); ++o)
    if (qo[o] > 0.0) t.risk += qo[o] * (std::log(qo[o]) - safe_log(pref[o]));
  return t;
}

/// Expected information gain about one factor's transition counts when
/// `action` is taken from belief `current`.
inline double transition_novelty(const Categorical& current, const DirichletCounts& b, std::size_t action) {
  const std::size_t n = b.outcomes();
  const std::size_t n_act = b.tensor().condition_dims()[1];
  double g = 0.0;
  for (std::size_t cur = 0; cur < n; ++cur) {
    const std::size_t cond = cur * n_act + action;
    const double sum = b.slice_sum(cond);
    double w = 0.0;
    for (std::size_t next = 0; next < n; ++next) w += (b.at(next, cond) / sum) * novelty_weight(b.at(next, cond), sum);
    g += current[cur] * w;
  }
  return g;
}

struct PlanResult {
  Categorical action_probs;        ///< over joint actions
  std::vector<double> g_total;     ///< accumulated G per joint action
  std::vector<EfeTerms> g_step;    ///< first-step terms per joint action
};

/// Sophisticated-inference planner. Captures the agent's current parameters;
/// rebuild after learning.
class Planner {
 public:
  explicit Planner(const AgentModel& model)
      : params_(model.planning), dims_(model.state_dims()), adims_(model.action_dims()) {
    model.validate();
    n_states_ = model.joint_states();
    n_obs_ = model.a.outcomes();
    n_actions_ = model.joint_actions();

    ahat_ = model.a.expectation();
    ambiguity_.assign(n_states_, 0.0);
    a_novelty_.assign(n_states_, 0.0);
    for (std::size_t s = 0; s < n_states_; ++s) {
      const double sum = model.a.slice_sum(s);
      for (std::size_t o = 0; o < n_obs_; ++o) {
        const double p = ahat_.at(o, s);
        if (p > 0.0) ambiguity_[s] -= p * std::log(p);
        if (params_.novelty_a) a_novelty_[s] += p * novelty_weight(model.a.at(o, s), sum);
      }
    }
    const auto pref = softmax(model.c, 1.0);
    log_pref_.resize(n_obs_);
    for (std::size_t o = 0; o < n_obs_; ++o) log_pref_[o] = safe_log(pref[o]);
    log_habit_.resize(n_actions_);
    for (std::size_t u = 0; u < n_actions_; ++u) log_habit_[u] = safe_log(model.e[u]);

    for (std::size_t f = 0; f < dims_.size(); ++f) {
      const auto& b = model.b[f];
      bhat_.push_back(b.expectation());
      const std::size_t n = dims_[f], n_act = adims_[f];
      std::vector<std::vector<double>> nov(n_act, std::vector<double>(n, 0.0));
      if (params_.novelty_b) {
        for (std::size_t u = 0; u < n_act; ++u) nov[u] = transition_novelty_row(b, u);
      }
      b_novelty_.push_back(std::move(nov));
      canonical_.push_back(canonical_actions(b));
    }

    // joint actions whose per-factor representatives coincide share one evaluation
    rep_of_.resize(n_actions_);
    std::vector<std::size_t> stride(adims_.size(), 1);
    for (std::size_t f = adims_.size(); f-- > 1;) stride[f - 1] = stride[f] * adims_[f];
    for (std::size_t u = 0; u < n_actions_; ++u) {
      std::size_t rep = 0;
      for (std::size_t f = 0; f < adims_.size(); ++f) rep += canonical_[f][(u / stride[f]) % adims_[f]] * stride[f];
      rep_of_[u] = rep;
      if (rep == u) unique_.push_back(u);
    }
    factor_actions_.resize(n_actions_);
    for (std::size_t u = 0; u < n_actions_; ++u) {
      factor_actions_[u].resize(adims_.size());
      for (std::size_t f = 0; f < adims_.size(); ++f) factor_actions_[u][f] = (u / stride[f]) % adims_[f];
    }
    build_kernels();
  }

  [[nodiscard]] PlanResult plan(const BeliefState& belief) const {
    if (belief.size() != n_states_) throw ShapeError("Planner: belief size mismatch");
    PlanResult r;
    r.g_step.resize(n_actions_);
    r.g_total = evaluate(belief.joint().vec(), params_.horizon, &r.g_step);
    r.action_probs = action_distribution(r.g_total);
    return r;
  }

  /// softmax(-gamma * G + ln e).
  [[nodiscard]] Categorical action_distribution(std::span<const double> g) const {
    std::vector<double> logits(g.size());
    for (std::size_t u = 0; u < g.size(); ++u) logits[u] = -params_.gamma * g[u] + log_habit_[u];
    return softmax(logits, 1.0);
  }

  [[nodiscard]] std::span<const std::size_t> factor_actions(std::size_t joint_action) const {
    return factor_actions_[joint_action];
  }
  [[nodiscard]] std::size_t unique_action_count() const { return unique_.size(); }

 private:
  std::vector<double> transition_novelty_row(const DirichletCounts& b, std::size_t u) const {
    const std::size_t n = b.outcomes();
    const std::size_t n_act = b.tensor().condition_dims()[1];
    std::vector<double> row(n, 0.0);
    for (std::size_t cur = 0; cur < n; ++cur) {
      const std::size_t cond = cur * n_act + u;
      const double sum = b.slice_sum(cond);
      for (std::size_t next = 0; next < n; ++next)
        row[cur] += (b.at(next, cond) / sum) * novelty_weight(b.at(next, cond), sum);
    }
    return row;
  }

  /// For each action, the first action whose count slice is bitwise identical.
  static std::vector<std::size_t> canonical_actions(const DirichletCounts& b) {
    const std::size_t n = b.outcomes();
    const std::size_t n_act = b.tensor().condition_dims()[1];
    std::vector<std::size_t> rep(n_act);
    for (std::size_t u = 0; u < n_act; ++u) {
      rep[u] = u;
      for (std::size_t v = 0; v < u; ++v) {
        if (rep[v] != v) continue;
        bool same = true;
        for (std::size_t next = 0; next < n && same; ++next)
          for (std::size_t cur = 0; cur < n && same; ++cur)
            same = b.at(next, cur * n_act + u) == b.at(next, cur * n_act + v);
        if (same) {
          rep[u] = v;
          break;
        }
      }
    }
    return rep;
  }

  /// Folds the last factor's transition into the outcome and state-cost maps.
  /// kernel_[(u * S + s) * W + j] = sum_next X_j[(rest, next)] * T[next, cur(s), u]
  /// where X_j is Ahat[j, .] for j < O, then ambiguity, then likelihood novelty.
  void build_kernels() {
    const std::size_t last = dims_.size() - 1;
    const std::size_t n = dims_[last];
    const std::size_t m = adims_[last];
    const std::size_t outer = n_states_ / n;
    const std::size_t w = kernel_width();
    const auto& t = bhat_[last];
    kernel_.assign(m * n_states_ * w, 0.0);
    for (std::size_t u = 0; u < m; ++u)
      for (std::size_t r = 0; r < outer; ++r)
        for (std::size_t cur = 0; cur < n; ++cur) {
          double* row = &kernel_[(u * n_states_ + r * n + cur) * w];
          for (std::size_t next = 0; next < n; ++next) {
            const double p = t.at(next, cur * m + u);
            if (p == 0.0) continue;
            const std::size_t s_next = r * n + next;
            for (std::size_t o = 0; o < n_obs_; ++o) row[o] += ahat_.at(o, s_next) * p;
            row[n_obs_] += ambiguity_[s_next] * p;
            row[n_obs_ + 1] += a_novelty_[s_next] * p;
          }
        }
  }

  [[nodiscard]] std::size_t kernel_width() const { return n_obs_ + 2; }

  /// acc[j] = sum_s k[s * W + j] * v[s]. Fixed width keeps accumulators in registers.
  template <std::size_t W>
  static void contract(const double* k, const double* v, std::size_t n, double* out) {
    std::array<double, W> acc{};
    for (std::size_t s = 0; s < n; ++s, k += W)
      for (std::size_t j = 0; j < W; ++j) acc[j] += k[j] * v[s];
    std::copy(acc.begin(), acc.end(), out);
  }

  static void contract_dynamic(const double* k, const double* v, std::size_t n, std::size_t w, double* out) {
    std::fill(out, out + w, 0.0);
    for (std::size_t s = 0; s < n; ++s, k += w)
      for (std::size_t j = 0; j < w; ++j) out[j] += k[j] * v[s];
  }

  /// Joint beliefs after applying every combination of actions on all
  /// factors but the last, indexed row-major by the action prefix.
  [[nodiscard]] std::vector<std::vector<double>> prefix_predictions(const std::vector<double>& q) const {
    std::vector<std::vector<double>> level{q};
    for (std::size_t f = 0; f + 1 < dims_.size(); ++f) {
      std::vector<std::vector<double>> next;
      next.reserve(level.size() * adims_[f]);
      for (const auto& p : level)
        for (std::size_t u = 0; u < adims_[f]; ++u) {
          std::vector<double> out(n_states_);
          apply_factor_transition(p, out, dims_, f, bhat_[f], u);
          next.push_back(std::move(out));
        }
      level = std::move(next);
    }
    return level;
  }

  /// G of every joint action from joint belief q, looking `depth` steps ahead.
  std::vector<double> evaluate(const std::vector<double>& q, std::size_t depth, std::vector<EfeTerms>* terms) const {
    const std::size_t last = dims_.size() - 1;
    const std::size_t m_last = adims_[last];

    // transition novelty per factor action, from the current marginals
    std::vector<std::vector<double>> b_nov(dims_.size());
    if (params_.novelty_b)
      for (std::size_t f = 0; f < dims_.size(); ++f) {
        const auto marg = BeliefState::marginalize(q, dims_, f);
        b_nov[f].assign(adims_[f], 0.0);
        for (std::size_t u = 0; u < adims_[f]; ++u)
          for (std::size_t k = 0; k < marg.size(); ++k) b_nov[f][u] += marg[k] * b_novelty_[f][u][k];
      }

    const auto prefixes = prefix_predictions(q);
    std::vector<double> g(n_actions_, 0.0);
    std::vector<double> pred(n_states_), qo(n_obs_), post(n_states_), acc(kernel_width());
    for (std::size_t u : unique_) {
      const auto& mid = prefixes[u / m_last];
      const std::size_t ul = u % m_last;
      const std::size_t w = kernel_width();
      const double* k = &kernel_[ul * n_states_ * w];
      if (w == 7)
        contract<7>(k, mid.data(), n_states_, acc.data());
      else
        contract_dynamic(k, mid.data(), n_states_, w, acc.data());
      EfeTerms t;
      t.ambiguity = acc[n_obs_];
      t.a_novelty = acc[n_obs_ + 1];
      for (std::size_t o = 0; o < n_obs_; ++o) {
        qo[o] = acc[o];
        if (acc[o] > 0.0) t.risk += acc[o] * (std::log(acc[o]) - log_pref_[o]);
      }
      if (params_.novelty_b)
        for (std::size_t f = 0; f < dims_.size(); ++f) t.b_novelty += b_nov[f][factor_actions_[u][f]];
      double total = t.total();

      if (depth > 1) {
        apply_factor_transition(mid, pred, dims_, last, bhat_[last], ul);
        // expectation over the retained observation branches, renormalized
        double kept = 0.0, future = 0.0;
        for (std::size_t o = 0; o < n_obs_; ++o) {
          if (qo[o] < params_.prune_threshold) continue;
          for (std::size_t s = 0; s < n_states_; ++s) post[s] = ahat_.at(o, s) * pred[s] / qo[o];
          const auto g_next = evaluate(post, depth - 1, nullptr);
          const auto w = action_distribution(g_next);
          double expected = 0.0;
          for (std::size_t v = 0; v < n_actions_; ++v) expected += w[v] * g_next[v];
          future += qo[o] * expected;
          kept += qo[o];
        }
        if (kept > 0.0) total += future / kept;
      }
      g[u] = total;
      if (terms) (*terms)[u] = t;
    }
    for (std::size_t u = 0; u < n_actions_; ++u) {
      if (rep_of_[u] == u) continue;
      g[u] = g[rep_of_[u]];
      if (terms) (*terms)[u] = (*terms)[rep_of_[u]];
    }
    return g;
  }

  PlanningParams params_;
  std::vector<std::size_t> dims_, adims_;
  std::size_t n_states_ = 0, n_obs_ = 0, n_actions_ = 0;
  ConditionalTensor ahat_;
  std::vector<double> ambiguity_, a_novelty_, log_pref_, log_habit_;
  std::vector<ConditionalTensor> bhat_;
  std::vector<std::vector<std::vector<double>>> b_novelty_;  // [factor][action][current]
  std::vector<std::vector<std::size_t>> canonical_;
  std::vector<std::size_t> rep_of_, unique_;
  std::vector<std::vector<std::size_t>> factor_actions_;
  std::vector<double> kernel_;
};

/// Convenience wrapper: plan from scratch with the model's current parameters.
inline PlanResult plan(const BeliefState& belief, const AgentModel& model) { return Planner(model).plan(belief); }

/// Draws a joint action and decodes it into one index per factor.
inline std::vector<std::size_t> select_action(const Categorical& dist, std::span<const std::size_t> action_dims,
                                              Xoshiro256ss& rng) {
  std::size_t u = sample_index(dist.probs(), rng);
  std::vector<std::size_t> out(action_dims.size());
  for (std::size_t f = action_dims.size(); f-- > 0;) {
    out[f] = u % action_dims[f];
    u /= action_dims[f];
  }
  return out;
}

/// a[obs, s] += eta * q(s).
inline void update_a(DirichletCounts& a, std::size_t obs, const BeliefState& posterior, double eta = 1.0) {
  if (obs >= a.outcomes()) throw InvalidObservation("update_a: observation index out of range");
  if (posterior.size() != a.conditions()) throw ShapeError("update_a: posterior size mismatch");
  for (std::size_t s = 0; s < posterior.size(); ++s)
    if (posterior.joint()[s] > 0.0) a.add(obs, s, eta * posterior.joint()[s]);
}

/// b_f[s', s, u_f] += eta * q_t(s') q_{t-1}(s) for every factor f.
inline void update_b(std::vector<DirichletCounts>& b, std::span<const std::size_t> action, const BeliefState& current,
                     const BeliefState& previous, double eta = 1.0) {
  if (action.size() != b.size()) throw ShapeError("update_b: action/factor mismatch");
  for (std::size_t f = 0; f < b.size(); ++f) {
    const auto now = current.marginal(f);
    const auto before = previous.marginal(f);
    const std::size_t n_act = b[f].tensor().condition_dims()[1];
    for (std::size_t next = 0; next < now.size(); ++next) {
      if (now[next] <= 0.0) continue;
      for (std::size_t cur = 0; cur < before.size(); ++cur)
        if (before[cur] > 0.0) b[f].add(next, cur * n_act + action[f], eta * now[next] * before[cur]);
    }
  }
}

/// One subject: owns its generative model and current belief.
class Agent {
 public:
  explicit Agent(AgentModel model) : model_(std::move(model)) {
    model_.validate();
    reset();
  }

  /// Belief back to the initial-state prior d.
  void reset() { belief_ = BeliefState::from_factors(model_.d); }

  [[nodiscard]] PlanResult plan() const { return Planner(model_).plan(belief_); }

  struct Decision {
    std::vector<std::size_t> action;
    EfeTerms terms;
    double g_total = 0.0;
  };

  Decision act(Xoshiro256ss& rng) const {
    const Planner planner(model_);
    const auto r = planner.plan(belief_);
    Decision d;
    d.action = select_action(r.action_probs, model_.action_dims(), rng);
    std::size_t u = 0;
    const auto adims = model_.action_dims();
    for (std::size_t f = 0; f < adims.size(); ++f) u = u * adims[f] + d.action[f];
    d.terms = r.g_step[u];
    d.g_total = r.g_total[u];
    return d;
  }

  /// Transition under `action`, then Bayes update on `obs` and learning.
  /// Returns the variational free energy of the update.
  double observe(std::span<const std::size_t> action, std::optional<std::size_t> obs, bool learn = true) {
    const auto prior = predict_states(belief_, action, model_.b);
    auto [posterior, vfe] = infer_states(prior, obs, model_.a, model_.planning.use_digamma);
    if (learn && obs) {
      update_a(model_.a, *obs, posterior, model_.planning.eta_a);
      update_b(model_.b, action, posterior, belief_, model_.planning.eta_b);
    }
    belief_ = std::move(posterior);
    return vfe;
  }

  [[nodiscard]] const BeliefState& belief() const { return belief_; }
  [[nodiscard]] const AgentModel& model() const { return model_; }

 private:
  AgentModel model_;
  BeliefState belief_;
};

}  // namespace mibci
