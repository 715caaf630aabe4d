#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "umbrella/errors.hpp"
#include "umbrella/nn/rng.hpp"
#include "umbrella/planner/mpc.hpp"

namespace umbrella::eval {

using planner::EpisodeTrace;

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const Interval&) const = default;
};

struct MetricsOptions {
  bool success_requires_goal = false;
  int resamples = 10000;
  std::uint64_t seed = 0;
};

struct MetricsSummary {
  int episodes = 0;
  double success_rate = 0.0;
  Interval success_ci;
  double mean_distance = 0.0;
  Interval distance_ci;
  std::optional<double> mean_successful_time;  // absent without successes
  std::optional<Interval> successful_time_ci;
  double mean_reward = 0.0;
  double mean_prog = 0.0;
  double mean_lane = 0.0;
  double mean_coll = 0.0;
  double mean_jerk = 0.0;
  double mean_speed = 0.0;

  bool operator==(const MetricsSummary&) const = default;
};

inline bool is_success(const EpisodeTrace& tr, bool requires_goal) {
  return !tr.collision && (!requires_goal || tr.goal_reached);
}

/// Mean Euclidean norm of the change between consecutive executed actions.
inline double episode_jerk(const EpisodeTrace& tr) {
  if (tr.steps.size() < 2) return 0.0;
  double s = 0.0;
  for (std::size_t t = 1; t < tr.steps.size(); ++t)
    s += (tr.steps[t].action.vec() - tr.steps[t - 1].action.vec()).norm();
  return s / static_cast<double>(tr.steps.size() - 1);
}

/// Percentile bootstrap of the mean; `resamples` draws with replacement.
inline Interval bootstrap_mean_ci(const std::vector<double>& xs, int resamples, std::uint64_t seed,
                                  double level = 0.95) {
  if (xs.empty()) throw ContractError("bootstrap of an empty sample");
  if (resamples < 1) throw ConfigError("resamples must be >= 1");
  nn::Rng rng(nn::derive_seed(seed, 0xB007));
  std::vector<double> means(resamples);
  const std::size_t n = xs.size();
  for (int b = 0; b < resamples; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += xs[rng.index(n)];
    means[b] = s / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  auto q = [&](double p) {
    const double pos = p * (resamples - 1);
    const auto i = static_cast<std::size_t>(std::floor(pos));
    const double f = pos - static_cast<double>(i);
    return i + 1 < means.size() ? means[i] * (1.0 - f) + means[i + 1] * f : means[i];
  };
  const double alpha = (1.0 - level) / 2.0;
  return {q(alpha), q(1.0 - alpha)};
}

inline double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

/// Pure function of the trace set: traces are ordered by seed before any
/// resampling, so input order does not matter.
inline MetricsSummary compute_metrics(std::vector<EpisodeTrace> traces, const MetricsOptions& opt = {}) {
  if (traces.empty()) throw ContractError("compute_metrics needs at least one trace");
  std::stable_sort(traces.begin(), traces.end(), [](const auto& a, const auto& b) { return a.seed < b.seed; });
  MetricsSummary m;
  m.episodes = static_cast<int>(traces.size());
  std::vector<double> success, distance, times, reward, prog, lane, coll, jerk, speed;
  for (const auto& tr : traces) {
    const bool ok = is_success(tr, opt.success_requires_goal);
    success.push_back(ok ? 1.0 : 0.0);
    distance.push_back(tr.distance());
    if (ok) times.push_back(tr.length() * tr.dt);
    double r = 0.0, p = 0.0, l = 0.0, c = 0.0, v = 0.0;
    for (const auto& st : tr.steps) {
      r += st.reward.total;
      p += st.reward.prog;
      l += st.reward.lane;
      c += st.reward.coll;
      v += st.v;
    }
    const double n = std::max<double>(1.0, static_cast<double>(tr.steps.size()));
    reward.push_back(r / n);
    prog.push_back(p / n);
    lane.push_back(l / n);
    coll.push_back(c / n);
    speed.push_back(v / n);
    jerk.push_back(episode_jerk(tr));
  }
  m.success_rate = mean_of(success);
  m.success_ci = bootstrap_mean_ci(success, opt.resamples, opt.seed);
  m.mean_distance = mean_of(distance);
  m.distance_ci = bootstrap_mean_ci(distance, opt.resamples, nn::derive_seed(opt.seed, 1));
  if (!times.empty()) {
    m.mean_successful_time = mean_of(times);
    m.successful_time_ci = bootstrap_mean_ci(times, opt.resamples, nn::derive_seed(opt.seed, 2));
  }
  m.mean_reward = mean_of(reward);
  m.mean_prog = mean_of(prog);
  m.mean_lane = mean_of(lane);
  m.mean_coll = mean_of(coll);
  m.mean_jerk = mean_of(jerk);
  m.mean_speed = mean_of(speed);
  return m;
}

// ----------------------------------------------------------------- stops

struct StopEvent {
  std::uint64_t seed = 0;
  int start = 0;  // step index at which the ego was first below the threshold
  bool stalled = false;
};

/// Stop events: maximal runs of speed below `v_stop` (the initial state
/// included). A run of `stall_steps` or more stalls; a shorter run cut off
/// by the episode end is undecided and not reported.
inline std::vector<StopEvent> stop_events(const EpisodeTrace& tr, double v_stop = 0.1, int stall_steps = 30) {
  std::vector<double> v{tr.start_v};
  for (const auto& st : tr.steps) v.push_back(st.v);
  std::vector<StopEvent> out;
  const int T = static_cast<int>(v.size());
  int t = 0;
  while (t < T) {
    if (v[t] >= v_stop) {
      ++t;
      continue;
    }
    int end = t;
    while (end < T && v[end] < v_stop) ++end;
    const int run = end - t;
    if (run >= stall_steps || end < T) out.push_back({tr.seed, t, run >= stall_steps});
    t = end;
  }
  return out;
}

}  // namespace umbrella::eval
