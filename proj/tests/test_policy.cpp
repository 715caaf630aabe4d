#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace umbrella;
using namespace umbrella::policy;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

/// Every step takes the same action and earns the same reward.
data::EpisodeRecord constant_episode(int T, double dv, double dd, double reward, std::uint64_t seed) {
  nn::Rng rng(seed);
  data::EpisodeRecord ep;
  ep.seed = seed;
  ep.policy_tag = "constant";
  for (int t = 0; t < T; ++t) {
    sim::Observation o;
    for (int i = 0; i < sim::kObsDim; ++i) o(i) = rng.normal();
    ep.obs.push_back(o);
    ep.act.push_back({dv, dd});
    sim::RewardComponents r;
    r.prog = reward;
    r.total = reward;
    ep.rew.push_back(r);
    ep.done.push_back(t + 1 == T);
  }
  return ep;
}

PolicyArchitecture small_arch(int n_c) {
  PolicyArchitecture a;
  a.n_c = n_c;
  a.hidden = {16, 16};
  return a;
}

SupervisedSchedule fast_schedule(int steps) {
  SupervisedSchedule s;
  s.steps = steps;
  s.batch = 16;
  s.adam.learning_rate = 3e-3;
  return s;
}

}  // namespace

TEST(BehaviourCloning, LearnsAConstantAction) {
  std::vector<data::EpisodeRecord> eps;
  for (int i = 0; i < 6; ++i) eps.push_back(constant_episode(40, 0.25, -0.1, 1.0, i));
  eps.push_back(constant_episode(40, -0.15, 0.1, 1.0, 99));  // keeps action std away from zero
  const auto stats = data::compute_norm_stats(eps, 5);
  eps.pop_back();
  data::TrainingSet ts(eps, stats, 3, 5);
  auto bc = train_bc(make_bc_ensemble(2, small_arch(3), stats, 1), ts, fast_schedule(1500));
  for (int l = 0; l < 2; ++l) {
    const VectorXd a = stats.denormalize_action(bc_act(bc, l, ts.state(0, 10), ts.previous_actions(0, 10)));
    EXPECT_NEAR(a(0), 0.25, 0.02);
    EXPECT_NEAR(a(1), -0.1, 0.02);
  }
}

TEST(ValueFunction, LearnsTheTruncatedReturnOfAConstantReward) {
  std::vector<data::EpisodeRecord> eps;
  for (int i = 0; i < 6; ++i) eps.push_back(constant_episode(40, 0.0, 0.0, 0.5, i));
  eps.push_back(constant_episode(40, 0.0, 0.0, -0.5, 99));
  const int H = 5;
  const auto stats = data::compute_norm_stats(eps, H);
  eps.pop_back();
  data::TrainingSet ts(eps, stats, 2, H);
  auto pa = small_arch(2);
  auto v = train_value(make_value_ensemble(2, pa, stats, 2), ts, fast_schedule(1500));
  EXPECT_NEAR(value_estimate_mean(v, ts.state(1, 7), ts.previous_actions(1, 7)), H * 0.5, 0.1);
}

TEST(ValueFunction, TrainsOnlyOnUntruncatedWindows) {
  std::vector<data::EpisodeRecord> eps{constant_episode(12, 0, 0, 1.0, 1), constant_episode(3, 0, 0, 1.0, 2)};
  const auto stats = data::compute_norm_stats(eps, 4);
  data::TrainingSet ts(eps, stats, 2, 4);
  const auto vs = ts.value_samples();
  EXPECT_EQ(vs.size(), 12u - 4u + 1u);
  for (const auto& r : vs) {
    EXPECT_EQ(r.episode, 0u);
    EXPECT_LE(r.t + 4, 12);
  }
  std::vector<data::EpisodeRecord> too_short{constant_episode(3, 0, 0, 1.0, 2)};
  data::TrainingSet empty(too_short, stats, 2, 4);
  EXPECT_THROW(train_value(make_value_ensemble(1, small_arch(2), stats, 3), empty, fast_schedule(10)), ContractError);
}

TEST(PolicyEnsemble, InferenceIsPureAndDimensionChecked) {
  const auto m = fixtures::tiny_models(2, 3, dynamics::HeadMode::stochastic, 5);
  const VectorXd s = VectorXd::LinSpaced(3 * sim::kObsDim, -1, 1);
  const VectorXd pa = VectorXd::LinSpaced(6, 1, -1);
  EXPECT_EQ(bc_act(m.bc, 1, s, pa), bc_act(m.bc, 1, s, pa));
  EXPECT_EQ(value_estimate_mean(m.value, s, pa), value_estimate_mean(m.value, s, pa));
  EXPECT_THROW(bc_act(m.bc, 0, VectorXd::Zero(5), pa), DimensionError);
  EXPECT_THROW(bc_act(m.bc, 2, s, pa), DimensionError);
  EXPECT_THROW(value_estimate_mean(m.value, s, VectorXd::Zero(4)), DimensionError);
}

TEST(PolicyEnsemble, BatchValueMatchesSingleSample) {
  const auto m = fixtures::tiny_models(3, 2, dynamics::HeadMode::stochastic, 6);
  nn::Rng rng(1);
  MatrixXd s(2 * sim::kObsDim, 5), pa(4, 5);
  for (Eigen::Index i = 0; i < s.size(); ++i) s(i) = rng.normal();
  for (Eigen::Index i = 0; i < pa.size(); ++i) pa(i) = rng.normal();
  const auto batch = value_estimate_mean_batch(m.value, s, pa);
  for (int j = 0; j < 5; ++j) EXPECT_NEAR(batch(j), value_estimate_mean(m.value, s.col(j), pa.col(j)), 1e-12);
}

TEST(PolicyEnsemble, CheckpointRoundTrip) {
  const auto m = fixtures::tiny_models(2, 2, dynamics::HeadMode::stochastic, 7);
  const auto bc = bc_from_json(nlohmann::json::parse(ensemble_to_json(m.bc).dump()));
  const auto v = value_from_json(nlohmann::json::parse(ensemble_to_json(m.value).dump()));
  const VectorXd s = VectorXd::LinSpaced(2 * sim::kObsDim, -2, 2), pa = VectorXd::Ones(4);
  for (int l = 0; l < 2; ++l) EXPECT_EQ(bc_act(bc, l, s, pa), bc_act(m.bc, l, s, pa));
  EXPECT_EQ(value_estimate_mean(v, s, pa), value_estimate_mean(m.value, s, pa));
  EXPECT_TRUE(bc.stats == m.bc.stats);
  EXPECT_THROW(bc_from_json(ensemble_to_json(m.value)), ParseError);
}

TEST(PolicyEnsemble, RejectsMismatchedHistoryLength) {
  std::vector<data::EpisodeRecord> eps{constant_episode(10, 0.1, 0.0, 1.0, 1)};
  const auto stats = data::compute_norm_stats(eps, 3);
  data::TrainingSet ts(eps, stats, 2, 3);
  EXPECT_THROW(train_bc(make_bc_ensemble(1, small_arch(3), stats, 1), ts, fast_schedule(5)), ConfigError);
  EXPECT_THROW(make_bc_ensemble(0, small_arch(2), stats, 1), ConfigError);
}
