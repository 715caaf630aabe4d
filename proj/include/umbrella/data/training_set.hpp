#pragma once

#include <Eigen/Core>

#include <optional>
#include <utility>
#include <vector>

#include "umbrella/data/windows.hpp"

namespace umbrella::data {

using Eigen::MatrixXd;

struct SampleRef {
  std::size_t episode;
  int t;
};

/// Normalized view of a dataset that assembles history windows on demand.
/// Materialization matches `build_history_windows` + `state_features`.
class TrainingSet {
 public:
  TrainingSet(const std::vector<EpisodeRecord>& episodes, const NormStats& stats, int n_c, int value_horizon)
      : stats_(stats), n_c_(n_c) {
    if (n_c < 1) throw ConfigError("n_c must be >= 1");
    pad_action_ = stats.normalize_action(Eigen::Vector2d::Zero());
    for (const auto& ep : episodes) {
      ep.check_lengths();
      Episode e;
      const auto T = static_cast<Eigen::Index>(ep.size());
      e.obs.resize(sim::kObsDim, T);
      e.act.resize(kActionDim, T);
      e.rew.resize(T);
      for (Eigen::Index t = 0; t < T; ++t) {
        e.obs.col(t) = stats.normalize_obs(ep.obs[t]);
        e.act.col(t) = stats.normalize_action(ep.act[t].vec());
        e.rew(t) = stats.normalize_reward(ep.rew[t].total);
      }
      for (const auto& v : value_targets(ep, value_horizon))
        e.value.push_back(v ? std::optional<double>(stats.normalize_value(*v)) : std::nullopt);
      episodes_.push_back(std::move(e));
    }
  }

  int n_c() const { return n_c_; }
  int state_dim() const { return n_c_ * sim::kObsDim; }
  int history_action_dim() const { return n_c_ * kActionDim; }
  const NormStats& stats() const { return stats_; }
  std::size_t episode_count() const { return episodes_.size(); }
  int length(std::size_t e) const { return static_cast<int>(episodes_[e].obs.cols()); }

  /// Stacked normalized observations o_{t-n_c+1..t}.
  VectorXd state(std::size_t e, int t) const {
    const auto& ep = episodes_[e];
    VectorXd s(state_dim());
    for (int k = 0; k < n_c_; ++k) s.segment(k * sim::kObsDim, sim::kObsDim) = ep.obs.col(std::max(t - n_c_ + 1 + k, 0));
    return s;
  }
  /// Stacked normalized actions a_{t-n_c..t-1}.
  VectorXd previous_actions(std::size_t e, int t) const {
    const auto& ep = episodes_[e];
    VectorXd a(history_action_dim());
    for (int k = 0; k < n_c_; ++k) {
      const int idx = t - n_c_ + k;
      a.segment(k * kActionDim, kActionDim) = idx >= 0 ? VectorXd(ep.act.col(idx)) : VectorXd(pad_action_);
    }
    return a;
  }
  VectorXd action(std::size_t e, int t) const { return episodes_[e].act.col(t); }
  VectorXd observation(std::size_t e, int t) const { return episodes_[e].obs.col(t); }
  double reward(std::size_t e, int t) const { return episodes_[e].rew(t); }
  std::optional<double> value(std::size_t e, int t) const { return episodes_[e].value[t]; }

  /// Samples with `steps` consecutive transitions that all have a successor
  /// observation inside the episode.
  std::vector<SampleRef> transition_samples(int steps) const {
    std::vector<SampleRef> out;
    for (std::size_t e = 0; e < episodes_.size(); ++e)
      for (int t = 0; t + steps < length(e); ++t) out.push_back({e, t});
    return out;
  }
  std::vector<SampleRef> action_samples() const {
    std::vector<SampleRef> out;
    for (std::size_t e = 0; e < episodes_.size(); ++e)
      for (int t = 0; t < length(e); ++t) out.push_back({e, t});
    return out;
  }
  std::vector<SampleRef> value_samples() const {
    std::vector<SampleRef> out;
    for (std::size_t e = 0; e < episodes_.size(); ++e)
      for (int t = 0; t < length(e); ++t)
        if (episodes_[e].value[t]) out.push_back({e, t});
    return out;
  }

 private:
  struct Episode {
    MatrixXd obs;
    MatrixXd act;
    VectorXd rew;
    std::vector<std::optional<double>> value;
  };
  NormStats stats_;
  int n_c_;
  VectorXd pad_action_;
  std::vector<Episode> episodes_;
};

}  // namespace umbrella::data
