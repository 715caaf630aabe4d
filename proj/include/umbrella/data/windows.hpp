#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "umbrella/data/episode.hpp"
#include "umbrella/log.hpp"
#include "umbrella/nn/rng.hpp"

namespace umbrella::data {

using Eigen::VectorXd;

inline constexpr int kActionDim = 2;
inline constexpr double kStdFloor = 1e-6;

// ----------------------------------------------------------------- splitting

struct Split {
  std::vector<std::size_t> train, validation, test;
};

/// Seeded permutation split; the same (count, seed, ratios) always yields the
/// same partition.
inline Split split_episodes(std::size_t count, std::uint64_t seed, double train_ratio = 0.8,
                            double validation_ratio = 0.1) {
  if (train_ratio < 0 || validation_ratio < 0 || train_ratio + validation_ratio > 1.0)
    throw ConfigError("invalid split ratios");
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = i;
  nn::Rng rng(nn::derive_seed(seed, 0x5A11));
  for (std::size_t i = count; i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
  const auto n_train = static_cast<std::size_t>(std::llround(train_ratio * count));
  const auto n_val = std::min(count - n_train, static_cast<std::size_t>(std::llround(validation_ratio * count)));
  Split s;
  s.train.assign(idx.begin(), idx.begin() + n_train);
  s.validation.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
  s.test.assign(idx.begin() + n_train + n_val, idx.end());
  return s;
}

template <class T>
std::vector<T> select(const std::vector<T>& xs, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(xs.at(i));
  return out;
}

// ---------------------------------------------------------------- value target

/// R_H for every step whose H-step window lies inside the episode.
inline std::vector<std::optional<double>> value_targets(const EpisodeRecord& ep, int horizon) {
  if (horizon < 1) throw ConfigError("value horizon must be >= 1");
  const std::size_t T = ep.size();
  std::vector<double> prefix(T + 1, 0.0);
  for (std::size_t t = 0; t < T; ++t) prefix[t + 1] = prefix[t] + ep.rew[t].total;
  std::vector<std::optional<double>> out(T);
  for (std::size_t t = 0; t + horizon <= T; ++t) out[t] = prefix[t + horizon] - prefix[t];
  return out;
}

// -------------------------------------------------------------- normalization

/// Per-dimension z-score statistics, computed on the training split only.
struct NormStats {
  VectorXd obs_mean = VectorXd::Zero(sim::kObsDim), obs_std = VectorXd::Ones(sim::kObsDim);
  VectorXd act_mean = VectorXd::Zero(kActionDim), act_std = VectorXd::Ones(kActionDim);
  double rew_mean = 0.0, rew_std = 1.0;
  double value_mean = 0.0, value_std = 1.0;

  VectorXd normalize_obs(const Observation& o) const {
    return ((o - obs_mean).array() / obs_std.array()).matrix();
  }
  Observation denormalize_obs(const VectorXd& z) const {
    return (z.array() * obs_std.array() + obs_mean.array()).matrix();
  }
  Eigen::Vector2d normalize_action(const Eigen::Vector2d& a) const {
    return ((a - act_mean).array() / act_std.array()).matrix();
  }
  Eigen::Vector2d denormalize_action(const Eigen::Vector2d& z) const {
    return (z.array() * act_std.array() + act_mean.array()).matrix();
  }
  double normalize_reward(double r) const { return (r - rew_mean) / rew_std; }
  double denormalize_reward(double z) const { return z * rew_std + rew_mean; }
  double normalize_value(double v) const { return (v - value_mean) / value_std; }
  double denormalize_value(double z) const { return z * value_std + value_mean; }

  bool operator==(const NormStats&) const = default;
};

namespace detail {

struct Moments {
  VectorXd sum, sq;
  std::size_t n = 0;
  explicit Moments(Eigen::Index d) : sum(VectorXd::Zero(d)), sq(VectorXd::Zero(d)) {}
  void add(const VectorXd& x) {
    sum += x;
    sq += x.cwiseProduct(x);
    ++n;
  }
  void finish(VectorXd& mean, VectorXd& std, const std::string& what) const {
    mean = sum / static_cast<double>(n);
    VectorXd var = (sq / static_cast<double>(n) - mean.cwiseProduct(mean)).cwiseMax(0.0);
    std = var.cwiseSqrt();
    for (Eigen::Index i = 0; i < std.size(); ++i)
      if (std(i) < kStdFloor) {
        warn(what + " dimension " + std::to_string(i) + " is constant; std floored at 1e-6");
        std(i) = kStdFloor;
      }
  }
};

}  // namespace detail

inline NormStats compute_norm_stats(const std::vector<EpisodeRecord>& train, int value_horizon = 30) {
  detail::Moments obs(sim::kObsDim), act(kActionDim), rew(1), val(1);
  for (const auto& ep : train) {
    for (std::size_t t = 0; t < ep.size(); ++t) {
      obs.add(ep.obs[t]);
      act.add(ep.act[t].vec());
      rew.add(VectorXd::Constant(1, ep.rew[t].total));
    }
    for (const auto& v : value_targets(ep, value_horizon))
      if (v) val.add(VectorXd::Constant(1, *v));
  }
  if (obs.n == 0) throw ContractError("compute_norm_stats needs a nonempty split");
  NormStats s;
  obs.finish(s.obs_mean, s.obs_std, "observation");
  act.finish(s.act_mean, s.act_std, "action");
  VectorXd m, sd;
  rew.finish(m, sd, "reward");
  s.rew_mean = m(0);
  s.rew_std = sd(0);
  if (val.n > 0) {
    val.finish(m, sd, "value target");
    s.value_mean = m(0);
    s.value_std = sd(0);
  }
  return s;
}

inline nlohmann::json norm_stats_to_json(const NormStats& s) {
  auto v = [](const VectorXd& x) { return std::vector<double>(x.data(), x.data() + x.size()); };
  return {{"obs_mean", v(s.obs_mean)}, {"obs_std", v(s.obs_std)}, {"act_mean", v(s.act_mean)},
          {"act_std", v(s.act_std)},   {"rew_mean", s.rew_mean},   {"rew_std", s.rew_std},
          {"value_mean", s.value_mean}, {"value_std", s.value_std}};
}

inline NormStats norm_stats_from_json(const nlohmann::json& j) {
  auto v = [](const nlohmann::json& a, Eigen::Index n) {
    const auto xs = a.get<std::vector<double>>();
    if (static_cast<Eigen::Index>(xs.size()) != n) throw ParseError("normalization vector has wrong length");
    return VectorXd(Eigen::Map<const VectorXd>(xs.data(), n));
  };
  NormStats s;
  s.obs_mean = v(j.at("obs_mean"), sim::kObsDim);
  s.obs_std = v(j.at("obs_std"), sim::kObsDim);
  s.act_mean = v(j.at("act_mean"), kActionDim);
  s.act_std = v(j.at("act_std"), kActionDim);
  s.rew_mean = j.at("rew_mean").get<double>();
  s.rew_std = j.at("rew_std").get<double>();
  s.value_mean = j.at("value_mean").get<double>();
  s.value_std = j.at("value_std").get<double>();
  return s;
}

// ------------------------------------------------------------ history windows

/// n_c-step history ending at t: observations o_{t-n_c+1..t} and the actions
/// a_{t-n_c..t-1} preceding them. Before the episode start the first
/// observation is repeated and actions are zero.
struct HistoryWindow {
  std::size_t episode = 0;
  int t = 0;
  std::vector<Observation> observations;  // oldest first
  std::vector<EgoAction> previous_actions;
  EgoAction target_action;
  std::optional<Observation> next_observation;
  double target_reward = 0.0;
  std::optional<double> value_target;
};

inline void fill_history(const EpisodeRecord& ep, int t, int n_c, std::vector<Observation>& obs,
                         std::vector<EgoAction>& actions) {
  obs.clear();
  actions.clear();
  for (int k = t - n_c + 1; k <= t; ++k) obs.push_back(ep.obs[std::max(k, 0)]);
  for (int k = t - n_c; k < t; ++k) actions.push_back(k >= 0 ? ep.act[k] : EgoAction{});
}

inline std::vector<HistoryWindow> build_history_windows(const std::vector<EpisodeRecord>& episodes, int n_c,
                                                        int horizon) {
  if (n_c < 1) throw ConfigError("n_c must be >= 1");
  if (horizon < 1) throw ConfigError("value horizon must be >= 1");
  std::vector<HistoryWindow> out;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const auto& ep = episodes[e];
    ep.check_lengths();
    if (ep.size() < 1) {
      warn("episode " + std::to_string(e) + " has no steps; skipped");
      continue;
    }
    const auto values = value_targets(ep, horizon);
    for (int t = 0; t < static_cast<int>(ep.size()); ++t) {
      HistoryWindow w;
      w.episode = e;
      w.t = t;
      fill_history(ep, t, n_c, w.observations, w.previous_actions);
      w.target_action = ep.act[t];
      if (t + 1 < static_cast<int>(ep.size())) w.next_observation = ep.obs[t + 1];
      w.target_reward = ep.rew[t].total;
      w.value_target = values[t];
      out.push_back(std::move(w));
    }
  }
  return out;
}

// ------------------------------------------------------------------ features

/// Normalized stacked observations, oldest first: n_c * 22 entries.
inline VectorXd state_features(const NormStats& ns, const std::vector<Observation>& obs) {
  VectorXd s(static_cast<Eigen::Index>(obs.size()) * sim::kObsDim);
  for (std::size_t k = 0; k < obs.size(); ++k) s.segment(k * sim::kObsDim, sim::kObsDim) = ns.normalize_obs(obs[k]);
  return s;
}

/// Normalized stacked actions, oldest first: n_c * 2 entries.
inline VectorXd action_features(const NormStats& ns, const std::vector<EgoAction>& actions) {
  VectorXd a(static_cast<Eigen::Index>(actions.size()) * kActionDim);
  for (std::size_t k = 0; k < actions.size(); ++k) a.segment(k * kActionDim, kActionDim) = ns.normalize_action(actions[k].vec());
  return a;
}

/// Rolling n_c history used in closed loop; pads exactly like
/// `build_history_windows`.
class History {
 public:
  History(int n_c, const Observation& first) : n_c_(n_c) {
    if (n_c < 1) throw ConfigError("n_c must be >= 1");
    for (int k = 0; k < n_c; ++k) {
      obs_.push_back(first);
      actions_.push_back(EgoAction{});
    }
  }

  void advance(const EgoAction& executed, const Observation& next) {
    actions_.pop_front();
    actions_.push_back(executed);
    obs_.pop_front();
    obs_.push_back(next);
  }

  int n_c() const { return n_c_; }
  std::vector<Observation> observations() const { return {obs_.begin(), obs_.end()}; }
  std::vector<EgoAction> actions() const { return {actions_.begin(), actions_.end()}; }
  const Observation& latest() const { return obs_.back(); }
  const EgoAction& last_action() const { return actions_.back(); }

 private:
  int n_c_;
  std::deque<Observation> obs_;
  std::deque<EgoAction> actions_;
};

}  // namespace umbrella::data
