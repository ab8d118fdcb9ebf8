#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "mibci/inference.hpp"
#include "mibci/model.hpp"
#include "oracles.hpp"

using namespace mibci;

namespace {

AgentModel task_model(std::size_t horizon = 1, std::array<double, 2> b_pre = {1.0, 1.0}) {
  static const auto process = build_process(ProcessParams{});
  PriorConfig prior;
  prior.b_pre = b_pre;
  PlanningParams planning;
  planning.horizon = horizon;
  return build_agent_model(process, prior, 2.0, planning);
}

BeliefState random_belief(const std::vector<std::size_t>& dims, Xoshiro256ss& rng) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return {dims, Categorical::from_probs(oracle::random_simplex(n, rng))};
}

}  // namespace

TEST(BeliefState, FactorProductAndMarginals) {
  const auto b = BeliefState::from_factors({Categorical::from_probs({0.25, 0.75}), Categorical::from_probs({0.1, 0.2, 0.7})});
  EXPECT_EQ(b.size(), 6u);
  EXPECT_DOUBLE_EQ(b.joint()[1 * 3 + 2], 0.75 * 0.7);
  EXPECT_NEAR(b.marginal(0)[1], 0.75, 1e-15);
  EXPECT_NEAR(b.marginal(1)[2], 0.7, 1e-15);
  EXPECT_THROW(BeliefState({2, 2}, Categorical::uniform(3)), ShapeError);
}

TEST(InferStates, MatchesEnumeration) {
  Xoshiro256ss rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto prior = random_belief({4, 5}, rng);
    std::vector<std::vector<double>> lik(5, std::vector<double>(20));
    ConditionalTensor loglik(5, {4, 5});
    for (std::size_t s = 0; s < 20; ++s) {
      const auto col = oracle::random_simplex(5, rng);
      for (std::size_t o = 0; o < 5; ++o) {
        lik[o][s] = col[o];
        loglik.at(o, s) = std::log(col[o]);
      }
    }
    const std::size_t obs = trial % 5;
    const auto got = infer_states(prior, obs, loglik);
    const auto want = oracle::bayes(prior.joint().vec(), lik, obs);
    for (std::size_t s = 0; s < 20; ++s) ASSERT_NEAR(got.posterior.joint()[s], want.q[s], 1e-12);
    ASSERT_NEAR(got.vfe, want.vfe, 1e-10);
  }
}

TEST(InferStates, PosteriorDominance) {
  Xoshiro256ss rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const auto prior = random_belief({4, 5}, rng);
    ConditionalTensor counts(5, {4, 5});
    for (auto& x : counts.data()) x = 0.2 + 5.0 * rng.uniform();
    const std::size_t o = trial % 5, target = (trial * 7) % 20;
    const double before = infer_states(prior, o, DirichletCounts(counts)).posterior.joint()[target];
    counts.at(o, target) += 1.0 + rng.uniform();
    const double after = infer_states(prior, o, DirichletCounts(counts)).posterior.joint()[target];
    ASSERT_GT(after, before);
  }
}

TEST(InferStates, DigammaLikelihoodFromCounts) {
  ConditionalTensor counts(2, {2});
  counts.at(0, 0) = 1.0;
  counts.at(1, 0) = 3.0;
  counts.at(0, 1) = 2.0;
  counts.at(1, 1) = 2.0;
  const BeliefState prior({2}, Categorical::uniform(2));
  const auto r = infer_states(prior, std::size_t{0}, DirichletCounts(counts));
  // exp(psi(1) - psi(4)) vs exp(psi(2) - psi(4)) = exp(-11/6) vs exp(-5/6)
  const double l0 = std::exp(-11.0 / 6), l1 = std::exp(-5.0 / 6);
  EXPECT_NEAR(r.posterior.joint()[0], l0 / (l0 + l1), 1e-14);
  EXPECT_NEAR(r.vfe, -std::log(0.5 * l0 + 0.5 * l1), 1e-14);
}

TEST(InferStates, MissingObservationKeepsPrior) {
  const BeliefState prior({2}, Categorical::from_probs({0.3, 0.7}));
  ConditionalTensor ll(2, {2}, std::log(0.5));
  const auto r = infer_states(prior, std::nullopt, ll);
  EXPECT_EQ(r.posterior.joint(), prior.joint());
  EXPECT_EQ(r.vfe, 0.0);
  EXPECT_THROW(infer_states(prior, std::size_t{2}, ll), InvalidObservation);
}

TEST(InferStates, ZeroPriorStatesStayZero) {
  const BeliefState prior({3}, Categorical::from_probs({0.0, 0.5, 0.5}));
  ConditionalTensor ll(2, {3}, std::log(0.5));
  ll.at(0, 0) = 0.0;
  const auto r = infer_states(prior, std::size_t{0}, ll);
  EXPECT_EQ(r.posterior.joint()[0], 0.0);
  EXPECT_NEAR(r.vfe, std::log(2.0), 1e-15);
}

TEST(PredictStates, MatchesJointTransitionMatrix) {
  Xoshiro256ss rng(17);
  const auto m = task_model();
  for (int trial = 0; trial < 50; ++trial) {
    const auto q = random_belief(m.state_dims(), rng);
    const std::vector<std::size_t> u{static_cast<std::size_t>(trial % 12), static_cast<std::size_t>((trial * 5) % 12)};
    const auto got = predict_states(q, u, m.b);
    const auto want = oracle::matvec(oracle::joint_transition(m, u), q.joint().vec());
    for (std::size_t s = 0; s < want.size(); ++s) ASSERT_NEAR(got.joint()[s], want[s], 1e-14);
  }
}

TEST(ExpectedFreeEnergy, MatchesEnumeration) {
  Xoshiro256ss rng(23);
  ConditionalTensor counts(3, {2});
  for (auto& x : counts.data()) x = 0.5 + 5 * rng.uniform();
  const DirichletCounts a(counts);
  const BeliefState q({2}, Categorical::from_probs({0.35, 0.65}));
  const std::vector<double> c{-1.0, 0.5, 0.0};

  const auto t = expected_free_energy(q, a, c, true);

  const double zc = std::exp(-1.0) + std::exp(0.5) + 1.0;
  const double pref[3] = {std::exp(-1.0) / zc, std::exp(0.5) / zc, 1.0 / zc};
  double qo[3] = {0, 0, 0}, amb = 0, nov = 0;
  for (std::size_t s = 0; s < 2; ++s) {
    const double sum = counts.at(0, s) + counts.at(1, s) + counts.at(2, s);
    for (std::size_t o = 0; o < 3; ++o) {
      const double p = counts.at(o, s) / sum;
      qo[o] += q.joint()[s] * p;
      amb -= q.joint()[s] * p * std::log(p);
      nov += q.joint()[s] * p * 0.5 * (1 / counts.at(o, s) - 1 / sum);
    }
  }
  double risk = 0;
  for (int o = 0; o < 3; ++o) risk += qo[o] * std::log(qo[o] / pref[o]);
  EXPECT_NEAR(t.risk, risk, 1e-14);
  EXPECT_NEAR(t.ambiguity, amb, 1e-14);
  EXPECT_NEAR(t.a_novelty, nov, 1e-14);
  EXPECT_EQ(t.b_novelty, 0.0);
  EXPECT_EQ(expected_free_energy(q, a, c, false).a_novelty, 0.0);
}

TEST(ExpectedFreeEnergy, FlatPreferencesGiveEntropyDeficit) {
  // KL(q_o || uniform) = ln N - H(q_o)
  ConditionalTensor counts(5, {1});
  const double raw[5] = {1, 2, 3, 4, 10};
  for (int o = 0; o < 5; ++o) counts.at(o, 0) = raw[o];
  const auto t = expected_free_energy(BeliefState({1}, Categorical::uniform(1)), DirichletCounts(counts),
                                      std::vector<double>(5, 0.0), false);
  double h = 0;
  for (double r : raw) h -= r / 20 * std::log(r / 20);
  EXPECT_NEAR(t.risk, std::log(5.0) - h, 1e-14);
  EXPECT_NEAR(t.ambiguity, h, 1e-14);
}

TEST(TransitionNovelty, HandComputed) {
  ConditionalTensor counts(2, {2, 1});
  counts.at(0, 0) = 1.0;
  counts.at(1, 0) = 3.0;
  counts.at(0, 1) = 2.0;
  counts.at(1, 1) = 2.0;
  const DirichletCounts b(counts);
  const auto cur = Categorical::from_probs({0.4, 0.6});
  const double w0 = 0.25 * 0.5 * (1.0 - 0.25) + 0.75 * 0.5 * (1.0 / 3 - 0.25);
  const double w1 = 2 * 0.5 * 0.5 * (0.5 - 0.25);
  EXPECT_NEAR(transition_novelty(cur, b, 0), 0.4 * w0 + 0.6 * w1, 1e-15);
}

TEST(Planner, OneStepMatchesFreeFunctionsOnTaskModel) {
  Xoshiro256ss rng(5);
  for (auto b_pre : {std::array<double, 2>{0.0, 0.0}, std::array<double, 2>{1.0, 1.0}}) {
    const auto m = task_model(1, b_pre);
    const auto q = random_belief(m.state_dims(), rng);
    const auto r = Planner(m).plan(q);
    std::vector<double> logits(m.joint_actions());
    for (std::size_t u = 0; u < m.joint_actions(); ++u) {
      const auto t = oracle::step_terms(m, q, oracle::decode_action(m, u));
      ASSERT_NEAR(r.g_total[u], t.total(), 1e-12) << u;
      ASSERT_NEAR(r.g_step[u].risk, t.risk, 1e-12);
      ASSERT_NEAR(r.g_step[u].ambiguity, t.ambiguity, 1e-12);
      ASSERT_NEAR(r.g_step[u].a_novelty, t.a_novelty, 1e-12);
      ASSERT_NEAR(r.g_step[u].b_novelty, t.b_novelty, 1e-12);
      logits[u] = -m.planning.gamma * r.g_total[u];
    }
    const auto want = softmax(logits);
    for (std::size_t u = 0; u < m.joint_actions(); ++u) EXPECT_NEAR(r.action_probs[u], want[u], 1e-15);
  }
}

TEST(Planner, TwoStepMatchesExhaustiveTree) {
  Xoshiro256ss rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = oracle::miniature(rng, 2);
    const auto q = BeliefState::from_factors(m.d);
    const auto got = Planner(m).plan(q).g_total;
    const auto want = oracle::tree(m, q, 2);
    for (std::size_t u = 0; u < want.size(); ++u) ASSERT_NEAR(got[u], want[u], 1e-12);
  }
}

TEST(Planner, ThreeStepMatchesExhaustiveTree) {
  Xoshiro256ss rng(43);
  const auto m = oracle::miniature(rng, 3);
  const auto q = BeliefState::from_factors(m.d);
  const auto got = Planner(m).plan(q).g_total;
  const auto want = oracle::tree(m, q, 3);
  for (std::size_t u = 0; u < want.size(); ++u) EXPECT_NEAR(got[u], want[u], 1e-12);
}

TEST(Planner, DuplicateActionsShareValues) {
  const auto m = task_model(1);
  const Planner p(m);
  EXPECT_EQ(p.unique_action_count(), 9u);
  const auto r = p.plan(BeliefState::from_factors(m.d));
  for (std::size_t u = 2; u < 12; ++u) EXPECT_EQ(r.g_total[2 * 12 + u], r.g_total[2 * 12 + 2]);
}

TEST(Planner, PrefersUnexploredStates) {
  // One factor, two states; action 0 stays, action 1 moves to state 1.
  // Equal ambiguity and flat preferences leave only likelihood novelty.
  AgentModel m;
  ConditionalTensor a(2, {2});
  a.at(0, 0) = a.at(1, 0) = 50.0;
  a.at(0, 1) = a.at(1, 1) = 1.0;
  m.a = DirichletCounts(a);
  ConditionalTensor b(2, {2, 2}, 1e-3);
  b.at(0, 0 * 2 + 0) = 1e3;
  b.at(1, 1 * 2 + 0) = 1e3;
  b.at(1, 0 * 2 + 1) = 1e3;
  b.at(1, 1 * 2 + 1) = 1e3;
  m.b = {DirichletCounts(b)};
  m.d = {Categorical::one_hot(2, 0)};
  m.c = {0.0, 0.0};
  m.e = Categorical::uniform(2);
  m.planning.horizon = 1;
  m.planning.novelty_b = false;
  const auto r = Planner(m).plan(BeliefState::from_factors(m.d));
  EXPECT_GT(r.action_probs[1], r.action_probs[0]);
  EXPECT_GT(r.g_step[1].a_novelty, r.g_step[0].a_novelty);

  m.planning.novelty_a = false;
  const auto flat = Planner(m).plan(BeliefState::from_factors(m.d));
  EXPECT_NEAR(flat.action_probs[0], 0.5, 1e-6);
}

TEST(Planner, ShiftInvariantDistribution) {
  const auto m = task_model(1);
  const Planner p(m);
  const auto r = p.plan(BeliefState::from_factors(m.d));
  std::vector<double> shifted(r.g_total);
  for (auto& g : shifted) g += 3.75;
  const auto moved = p.action_distribution(shifted);
  for (std::size_t u = 0; u < shifted.size(); ++u) ASSERT_NEAR(moved[u], r.action_probs[u], 1e-12);
}

TEST(Planner, PrefersLeastCountedTransition) {
  // Two actions with identical expected transitions; action 1 has far fewer counts.
  AgentModel m;
  ConditionalTensor a(2, {2}, 10.0);
  m.a = DirichletCounts(a);
  ConditionalTensor b(2, {2, 2});
  for (std::size_t cur = 0; cur < 2; ++cur) {
    b.at(0, cur * 2 + 0) = b.at(1, cur * 2 + 0) = 50.0;
    b.at(0, cur * 2 + 1) = b.at(1, cur * 2 + 1) = 1.0;
  }
  m.b = {DirichletCounts(b)};
  m.d = {Categorical::uniform(2)};
  m.c = {0.0, 0.0};
  m.e = Categorical::uniform(2);
  m.planning.horizon = 1;
  const auto r = Planner(m).plan(BeliefState::from_factors(m.d));
  EXPECT_GT(r.action_probs[1], r.action_probs[0]);
}

TEST(Planner, ZeroPrecisionIsUniform) {
  auto m = task_model(1);
  m.planning.gamma = 0.0;
  const auto r = Planner(m).plan(BeliefState::from_factors(m.d));
  for (double p : r.action_probs.probs()) EXPECT_DOUBLE_EQ(p, 1.0 / 144);
}

TEST(SelectAction, DecodesRowMajor) {
  Xoshiro256ss rng(1);
  const std::vector<std::size_t> dims{12, 12};
  const auto a = select_action(Categorical::one_hot(144, 5 * 12 + 7), dims, rng);
  EXPECT_EQ(a, (std::vector<std::size_t>{5, 7}));
}

TEST(SelectAction, FrequenciesWithinFiveSigma) {
  Xoshiro256ss rng(8);
  const auto dist = Categorical::from_probs({0.1, 0.2, 0.3, 0.4});
  const std::vector<std::size_t> dims{2, 2};
  const int n = 100000;
  std::vector<int> hits(4, 0);
  for (int k = 0; k < n; ++k) {
    const auto a = select_action(dist, dims, rng);
    ++hits[a[0] * 2 + a[1]];
  }
  for (int u = 0; u < 4; ++u) EXPECT_NEAR(hits[u], n * dist[u], 5 * std::sqrt(n * dist[u] * (1 - dist[u])));
}

TEST(UpdateA, AddsPosteriorToObservedRow) {
  auto m = task_model();
  Xoshiro256ss rng(2);
  const auto q = random_belief(m.state_dims(), rng);
  const auto before = m.a;
  update_a(m.a, 3, q, 1.0);
  for (std::size_t o = 0; o < 5; ++o)
    for (std::size_t s = 0; s < 20; ++s)
      EXPECT_NEAR(m.a.at(o, s), before.at(o, s) + (o == 3 ? q.joint()[s] : 0.0), 1e-13);
  EXPECT_NEAR(m.a.total(), before.total() + 1.0, 1e-12);
  EXPECT_THROW(update_a(m.a, 5, q), InvalidObservation);
}

TEST(UpdateB, OuterProductOfMarginalsInTakenSlice) {
  auto m = task_model();
  Xoshiro256ss rng(6);
  const auto prev = random_belief(m.state_dims(), rng);
  const auto cur = random_belief(m.state_dims(), rng);
  const auto before = m.b;
  const std::vector<std::size_t> u{0, 7};
  update_b(m.b, u, cur, prev, 1.0);
  for (std::size_t f = 0; f < 2; ++f) {
    const auto now = cur.marginal(f), then = prev.marginal(f);
    const std::size_t n = now.size();
    for (std::size_t next = 0; next < n; ++next)
      for (std::size_t c = 0; c < n; ++c)
        for (std::size_t v = 0; v < 12; ++v) {
          const double add = v == u[f] ? now[next] * then[c] : 0.0;
          EXPECT_NEAR(m.b[f].at(next, c * 12 + v), before[f].at(next, c * 12 + v) + add, 1e-13);
        }
    EXPECT_NEAR(m.b[f].total(), before[f].total() + 1.0, 1e-12);
  }
}

TEST(Learning, TransitionCountsConvergeToTruth) {
  // Fully observed 3-state chain: b should approach the true transitions.
  AgentModel m;
  ConditionalTensor a(3, {3}, 1e-3);
  for (std::size_t s = 0; s < 3; ++s) a.at(s, s) = 1e6;
  m.a = DirichletCounts(a);
  m.b = {DirichletCounts(ConditionalTensor(3, {3, 2}, 1.0))};
  m.d = {Categorical::uniform(3)};
  m.c = {0.0, 0.0, 0.0};
  m.e = Categorical::uniform(2);
  m.planning.horizon = 1;
  Agent agent(m);

  ConditionalTensor truth(3, {3, 2});
  Xoshiro256ss rng(99);
  for (std::size_t c = 0; c < 6; ++c) truth.set_slice(c, oracle::random_simplex(3, rng, 0.2));
  std::size_t state = 0;
  for (int t = 0; t < 20000; ++t) {
    const std::vector<std::size_t> u{static_cast<std::size_t>(rng() % 2)};
    state = sample_index(truth.slice(state * 2 + u[0]), rng);
    agent.observe(u, state);
  }
  const auto learned = agent.model().b[0].expectation();
  for (std::size_t k = 0; k < truth.size(); ++k) EXPECT_NEAR(learned.data()[k], truth.data()[k], 0.05);
}

TEST(Agent, ObserveConservesCountMass) {
  Agent agent(task_model());
  Xoshiro256ss rng(4);
  for (int t = 0; t < 5; ++t) {
    const auto before_a = agent.model().a.total();
    const auto before_b0 = agent.model().b[0].total();
    const auto before_b1 = agent.model().b[1].total();
    const auto d = agent.act(rng);
    agent.observe(d.action, std::size_t(t % 5));
    EXPECT_NEAR(agent.model().a.total() - before_a, 1.0, 1e-12);
    EXPECT_NEAR(agent.model().b[0].total() - before_b0, 1.0, 1e-12);
    EXPECT_NEAR(agent.model().b[1].total() - before_b1, 1.0, 1e-12);
  }
}

TEST(Agent, NoLearningWithoutObservation) {
  Agent agent(task_model());
  const auto a0 = agent.model().a;
  const std::vector<std::size_t> u{0, 0};
  EXPECT_EQ(agent.observe(u, std::nullopt), 0.0);
  EXPECT_EQ(agent.model().a, a0);
}
