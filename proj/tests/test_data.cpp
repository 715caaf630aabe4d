#include <gtest/gtest.h>

#include <numeric>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "umbrella/data/behavior.hpp"
#include "umbrella/data/training_set.hpp"

using namespace umbrella;
using Eigen::VectorXd;

namespace {

data::EpisodeRecord flat_episode(int T, int t_coll) {
  auto ep = fixtures::counter_episode(T);
  ep.t_coll = t_coll;
  return ep;
}

struct WarningCapture {
  std::vector<std::string> messages;
  std::function<void(const std::string&)> saved;
  WarningCapture() : saved(warning_sink()) {
    warning_sink() = [this](const std::string& m) { messages.push_back(m); };
  }
  ~WarningCapture() { warning_sink() = saved; }
};

}  // namespace

TEST(RetroLabel, RampValues) {
  const double expect[] = {-0.2, -0.4, -0.6, -0.8, -1.0, -1.2, -1.4, -1.6, -1.8, -2.0};
  for (int k = 0; k < 10; ++k) EXPECT_NEAR(data::retro_collision_reward(40 - 9 + k, 40), expect[k], 1e-12);
  EXPECT_EQ(data::retro_collision_reward(30, 40), 0.0);
  EXPECT_EQ(data::retro_collision_reward(41, 40), 0.0);
}

TEST(RetroLabel, PropertyOverRandomCollisionTimes) {
  sim::ScenarioConfig cfg;
  nn::Rng rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const int T = 10 + static_cast<int>(rng.index(200));
    const int tc = 9 + static_cast<int>(rng.index(T - 9));
    const auto ep = flat_episode(T, tc);
    const auto lab = data::retro_label_collision(ep, cfg);
    int nonzero = 0;
    double label_sum = 0.0;
    for (int t = 0; t < T; ++t) {
      if (lab.rew[t].coll != 0.0) {
        ++nonzero;
        ASSERT_NEAR(lab.rew[t].coll, -0.2 * (t - (tc - 10)), 1e-12);
      }
      label_sum += lab.rew[t].coll;
      ASSERT_EQ(lab.rew[t].prog, ep.rew[t].prog);
    }
    ASSERT_EQ(nonzero, 10);
    ASSERT_NEAR(label_sum, -11.0, 1e-12);
    ASSERT_NEAR(lab.reward_sum() - ep.reward_sum(), cfg.w_coll * label_sum, 1e-9);
  }
}

TEST(RetroLabel, EarlyCollisionLabelsOnlyThePrefix) {
  const auto lab = data::retro_label_collision(flat_episode(20, 3), sim::ScenarioConfig{});
  int nonzero = 0;
  for (const auto& r : lab.rew) nonzero += r.coll != 0.0;
  EXPECT_EQ(nonzero, 4);
  EXPECT_NEAR(lab.rew[0].coll, -1.4, 1e-12);
  EXPECT_THROW(data::retro_label_collision(fixtures::counter_episode(5), sim::ScenarioConfig{}), ContractError);
  EXPECT_THROW(data::retro_label_collision(flat_episode(5, 7), sim::ScenarioConfig{}), ContractError);
}

TEST(Split, DeterministicDisjointAndComplete) {
  const auto a = data::split_episodes(1000, 5), b = data::split_episodes(1000, 5), c = data::split_episodes(1000, 6);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.validation, b.validation);
  EXPECT_NE(a.train, c.train);
  EXPECT_EQ(a.train.size(), 800u);
  EXPECT_EQ(a.validation.size(), 100u);
  EXPECT_EQ(a.test.size(), 100u);
  std::set<std::size_t> all(a.train.begin(), a.train.end());
  all.insert(a.validation.begin(), a.validation.end());
  all.insert(a.test.begin(), a.test.end());
  EXPECT_EQ(all.size(), 1000u);
  EXPECT_THROW(data::split_episodes(10, 0, 0.9, 0.2), ConfigError);
}

TEST(ValueTargets, MatchBruteForceSumsAndDropTruncatedWindows) {
  nn::Rng rng(2);
  auto ep = fixtures::counter_episode(50);
  for (auto& r : ep.rew) r.total = rng.normal();
  for (int H : {1, 7, 30, 50, 51}) {
    const auto v = data::value_targets(ep, H);
    for (int t = 0; t < 50; ++t) {
      if (t + H > 50) {
        ASSERT_FALSE(v[t].has_value());
        continue;
      }
      double s = 0.0;
      for (int k = t; k < t + H; ++k) s += ep.rew[k].total;
      ASSERT_NEAR(*v[t], s, 1e-12);
    }
  }
}

TEST(NormStats, SingleSampleFloorsStdAndWarns) {
  WarningCapture cap;
  auto ep = fixtures::counter_episode(1);
  const auto s = data::compute_norm_stats({ep}, 1);
  EXPECT_TRUE(s.obs_mean == VectorXd(ep.obs[0]));
  EXPECT_EQ(s.obs_std(0), data::kStdFloor);
  EXPECT_FALSE(cap.messages.empty());
  EXPECT_THROW(data::compute_norm_stats({}, 1), ContractError);
}

TEST(NormStats, StandardNormalDataAndRoundTrip) {
  nn::Rng rng(3);
  data::EpisodeRecord ep;
  const int n = 20000;
  for (int t = 0; t < n; ++t) {
    sim::Observation o;
    for (int i = 0; i < sim::kObsDim; ++i) o(i) = rng.normal();
    ep.obs.push_back(o);
    ep.act.push_back({rng.normal(), rng.normal()});
    ep.rew.push_back({0, 0, 0, rng.normal()});
    ep.done.push_back(false);
  }
  const auto s = data::compute_norm_stats({ep}, 1);
  for (int i = 0; i < sim::kObsDim; ++i) {
    EXPECT_NEAR(s.obs_mean(i), 0.0, 3.0 / std::sqrt(n));
    EXPECT_NEAR(s.obs_std(i), 1.0, 3.0 * std::sqrt(0.5 / n));
  }
  for (int k = 0; k < 100; ++k) {
    sim::Observation o;
    for (int i = 0; i < sim::kObsDim; ++i) o(i) = rng.uniform(-100, 100);
    EXPECT_TRUE((s.denormalize_obs(s.normalize_obs(o)) - o).cwiseAbs().maxCoeff() < 1e-10);
    const Eigen::Vector2d a(rng.normal(), rng.normal());
    EXPECT_TRUE((s.denormalize_action(s.normalize_action(a)) - a).cwiseAbs().maxCoeff() < 1e-10);
  }
  const auto back = data::norm_stats_from_json(data::norm_stats_to_json(s));
  EXPECT_TRUE(back == s);
}

TEST(Windows, AlignmentOnCounterEpisodes) {
  const auto ep = fixtures::counter_episode(12);
  const int n_c = 4;
  const auto ws = data::build_history_windows({ep}, n_c, 3);
  ASSERT_EQ(ws.size(), 12u);
  for (const auto& w : ws) {
    ASSERT_EQ(w.observations.size(), static_cast<std::size_t>(n_c));
    for (int k = 0; k < n_c; ++k) {
      EXPECT_EQ(w.observations[k](0), std::max(0, w.t - n_c + 1 + k));  // padded with the first frame
      const int a_idx = w.t - n_c + k;
      EXPECT_EQ(w.previous_actions[k].delta_v, a_idx >= 0 ? a_idx : 0.0);  // zero padding
    }
    EXPECT_EQ(w.target_action.delta_v, w.t);  // action taken from the newest observation
    EXPECT_EQ(w.observations.back()(0), w.t);
    if (w.t + 1 < 12) EXPECT_EQ((*w.next_observation)(0), w.t + 1);
    else EXPECT_FALSE(w.next_observation.has_value());
    EXPECT_EQ(w.value_target.has_value(), w.t + 3 <= 12);
  }
}

TEST(Windows, TrainingSetMatchesMaterializedWindows) {
  nn::Rng rng(4);
  auto ep = fixtures::counter_episode(15);
  for (auto& o : ep.obs)
    for (int i = 0; i < sim::kObsDim; ++i) o(i) += rng.normal();
  const auto stats = fixtures::odd_stats(5);
  const int n_c = 3;
  data::TrainingSet ts({ep}, stats, n_c, 4);
  const auto ws = data::build_history_windows({ep}, n_c, 4);
  for (const auto& w : ws) {
    ASSERT_TRUE(ts.state(0, w.t).isApprox(data::state_features(stats, w.observations), 1e-14));
    ASSERT_TRUE(ts.previous_actions(0, w.t).isApprox(data::action_features(stats, w.previous_actions), 1e-14));
    ASSERT_EQ(ts.value(0, w.t).has_value(), w.value_target.has_value());
  }
  EXPECT_EQ(ts.value_samples().size(), 12u);
  EXPECT_EQ(ts.transition_samples(5).size(), 10u);
}

TEST(Windows, ClosedLoopHistoryPadsLikeTraining) {
  const auto ep = fixtures::counter_episode(6);
  data::History h(3, ep.obs[0]);
  for (int t = 0; t < 4; ++t) {
    const auto ws = data::build_history_windows({ep}, 3, 1);
    const auto& w = ws[t];
    for (int k = 0; k < 3; ++k) {
      ASSERT_EQ(h.observations()[k], w.observations[k]);
      ASSERT_EQ(h.actions()[k].vec(), w.previous_actions[k].vec());
    }
    h.advance(ep.act[t], ep.obs[t + 1]);
  }
}

TEST(Dataset, JsonLinesRoundTrip) {
  sim::ScenarioConfig cfg;
  data::GenerationOptions opt;
  const auto eps = data::generate_dataset(cfg, 6, opt, 9);
  std::stringstream buf;
  data::write_dataset(buf, eps);
  const auto back = data::read_dataset(buf);
  ASSERT_EQ(back.size(), eps.size());
  for (std::size_t i = 0; i < eps.size(); ++i) EXPECT_TRUE(back[i] == eps[i]);
}

TEST(Dataset, CorruptInputIsAParseError) {
  std::stringstream empty;
  EXPECT_THROW(data::read_dataset(empty), ParseError);
  std::stringstream truncated;
  truncated << data::dataset_header(2).dump() << "\n" << data::episode_to_json(fixtures::counter_episode(3)).dump()
            << "\n";
  EXPECT_THROW(data::read_dataset(truncated), ParseError);
  std::stringstream garbage;
  garbage << data::dataset_header(1).dump() << "\n{not json\n";
  EXPECT_THROW(data::read_dataset(garbage), ParseError);
  auto j = data::episode_to_json(fixtures::counter_episode(3));
  j["act"].erase(j["act"].begin());
  EXPECT_THROW(data::episode_from_json(j), ParseError);
}

TEST(Generation, DeterministicAndThreadIndependent) {
  sim::ScenarioConfig cfg;
  data::GenerationOptions one, four;
  four.threads = 4;
  const auto a = data::generate_dataset(cfg, 12, one, 3);
  const auto b = data::generate_dataset(cfg, 12, four, 3);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(a[i] == b[i]);
}

TEST(Generation, FiltersEgoCausedCollisionsAndLabelsTheRest) {
  sim::ScenarioConfig cfg;
  data::GenerationOptions opt;
  data::GenerationStats st;
  const auto eps = data::generate_dataset(cfg, 60, opt, 4, &st);
  EXPECT_EQ(st.attempts, 60 + st.rejected);
  for (const auto& ep : eps) {
    if (!ep.t_coll) {
      for (const auto& r : ep.rew) ASSERT_EQ(r.coll, 0.0);
      continue;
    }
    ASSERT_NEAR(ep.rew[*ep.t_coll].coll, -2.0, 1e-12);
  }
}

TEST(Generation, WaitingEpisodesStartAtStandstill) {
  sim::ScenarioConfig cfg;
  data::GenerationOptions opt;
  opt.wait_fraction = 1.0;
  opt.wait_steps_max = 40;
  const auto eps = data::generate_dataset(cfg, 10, opt, 5);
  for (const auto& ep : eps) {
    EXPECT_EQ(ep.obs[0](0), 0.0);
    EXPECT_EQ(ep.act[0].delta_v, 0.0);
  }
}

TEST(Generation, WaitingCanHoldTheBrake) {
  sim::ScenarioConfig cfg;
  cfg.agent_count = 0;
  cfg.horizon_steps = 30;
  data::GenerationOptions opt;
  opt.wait_fraction = 1.0;
  opt.wait_steps_max = 1000;
  opt.wait_dv = -0.5;
  const auto eps = data::generate_dataset(cfg, 5, opt, 6);
  int held = 0;
  for (const auto& ep : eps) {
    std::size_t still = 0;
    while (still < ep.size() && ep.obs[still](0) == 0.0) ++still;
    // the last standstill step may already be the resume
    if (still < ep.size() && still > 0) --still;
    for (std::size_t t = 0; t < still; ++t) {
      EXPECT_EQ(ep.act[t].delta_v, -0.5);
      ++held;
    }
  }
  EXPECT_GT(held, 100);
}

TEST(Generation, PolicyMixValidation) {
  data::PolicyMix m;
  m.weights = {0.5, 0.5, 0.5};
  EXPECT_THROW(m.validate(), ConfigError);
  EXPECT_EQ(data::PolicyMix::only(data::BehaviorPolicy::stochastic_wanderer).sample(0.0),
            data::BehaviorPolicy::stochastic_wanderer);
}
