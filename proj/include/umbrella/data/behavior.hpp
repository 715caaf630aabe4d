#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "umbrella/data/episode.hpp"
#include "umbrella/sim/highway.hpp"

namespace umbrella::data {

using nn::Rng;
using sim::EnvState;
using sim::ScenarioConfig;

enum class BehaviorPolicy { pid_tracker = 0, pid_with_noise = 1, stochastic_wanderer = 2 };

inline const char* to_string(BehaviorPolicy p) {
  switch (p) {
    case BehaviorPolicy::pid_tracker: return "pid_tracker";
    case BehaviorPolicy::pid_with_noise: return "pid_with_noise";
    case BehaviorPolicy::stochastic_wanderer: return "stochastic_wanderer";
  }
  return "?";
}

/// Mixture weights over the three behaviour-policy families.
struct PolicyMix {
  std::array<double, 3> weights{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};

  static PolicyMix only(BehaviorPolicy p) {
    PolicyMix m;
    m.weights = {0, 0, 0};
    m.weights[static_cast<int>(p)] = 1.0;
    return m;
  }

  void validate() const {
    double s = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0)) throw ConfigError("policy_mix weights must be non-negative");
      s += w;
    }
    if (std::abs(s - 1.0) > 1e-9) throw ConfigError("policy_mix weights must sum to 1");
  }

  BehaviorPolicy sample(double u) const {
    double acc = 0.0;
    for (int k = 0; k < 3; ++k) {
      acc += weights[k];
      if (u < acc && weights[k] > 0.0) return static_cast<BehaviorPolicy>(k);
    }
    for (int k = 2; k >= 0; --k)
      if (weights[k] > 0.0) return static_cast<BehaviorPolicy>(k);
    return BehaviorPolicy::pid_tracker;
  }
};

struct GenerationOptions {
  PolicyMix mix;
  double wait_fraction = 0.0;  // share of episodes starting at standstill
  int wait_steps_max = 150;    // standstill lasts U{0..wait_steps_max} steps
  double wait_dv = 0.0;        // speed command while waiting; negative holds the brake
  double max_rejection_rate = 0.95;
  int threads = 1;
};

struct GenerationStats {
  std::size_t attempts = 0;
  std::size_t rejected = 0;
  std::size_t kept_collisions = 0;
};

/// Scripted sub-optimal ego driver. Driving style (cautious / normal /
/// aggressive) scales the target speed and the kept time gap.
class BehaviorDriver {
 public:
  BehaviorDriver(BehaviorPolicy policy, const ScenarioConfig& cfg, Rng& rng) : policy_(policy) {
    const int style = static_cast<int>(rng.index(3));
    static constexpr std::array<double, 3> speed_factor{0.72, 0.86, 1.0};
    static constexpr std::array<double, 3> time_gap{2.0, 1.4, 0.9};
    target_speed_ = std::min(cfg.v_max, speed_factor[style] * cfg.v_limit + rng.uniform(-0.5, 0.5));
    time_gap_ = time_gap[style];
    if (policy_ == BehaviorPolicy::stochastic_wanderer) time_gap_ = 0.8;
  }

  BehaviorPolicy policy() const { return policy_; }

  EgoAction act(const EnvState& s, const ScenarioConfig& cfg, Rng& rng) {
    const int lane = cfg.lane_of(s.ego.y);
    if (target_lane_ < 0) target_lane_ = lane;

    if (policy_ == BehaviorPolicy::stochastic_wanderer) {
      target_speed_ = std::clamp(target_speed_ + 0.15 * rng.normal(), 4.0, cfg.v_max);
      if (rng.bernoulli(0.01)) target_lane_ = std::clamp(lane + (rng.bernoulli(0.5) ? 1 : -1), 0, cfg.lane_count - 1);
    } else if (rng.bernoulli(0.004) && std::abs(s.ego.y - cfg.lane_center(target_lane_)) < 0.1) {
      const int cand = lane + (rng.bernoulli(0.5) ? 1 : -1);
      if (cand >= 0 && cand < cfg.lane_count && lane_free(s, cfg, cand)) target_lane_ = cand;
    }

    // longitudinal: speed tracking capped by a time-gap rule on the lead
    double gap = std::numeric_limits<double>::infinity();
    for (const auto& o : s.others)
      if (cfg.lane_of(o.y) == lane && o.x > s.ego.x) gap = std::min(gap, o.x - s.ego.x - cfg.vehicle_length);
    double v_cmd = target_speed_;
    if (std::isfinite(gap)) v_cmd = std::min(v_cmd, std::max(0.0, (gap - 2.0) / time_gap_));
    double dv = 0.3 * (v_cmd - s.ego.v);
    double dd = 0.25 * (cfg.lane_center(target_lane_) - s.ego.y);

    if (policy_ == BehaviorPolicy::pid_with_noise) {
      if (burst_left_ == 0 && rng.bernoulli(0.03)) {
        burst_left_ = 5;
        burst_dv_ = rng.uniform(-0.3, 0.3);
        burst_dd_ = rng.uniform(-0.1, 0.1);
      }
      if (burst_left_ > 0) {
        dv += burst_dv_;
        dd += burst_dd_;
        --burst_left_;
      }
    } else if (policy_ == BehaviorPolicy::stochastic_wanderer) {
      dv += 0.05 * rng.normal();
      dd += 0.02 * rng.normal();
    }
    return {std::clamp(dv, cfg.dv_min, cfg.dv_max), std::clamp(dd, -cfg.dd_max, cfg.dd_max)};
  }

 private:
  static bool lane_free(const EnvState& s, const ScenarioConfig& cfg, int lane) {
    for (const auto& o : s.others)
      if (cfg.lane_of(o.y) == lane && std::abs(o.x - s.ego.x) < 12.0) return false;
    return true;
  }

  BehaviorPolicy policy_;
  double target_speed_ = 10.0;
  double time_gap_ = 1.4;
  int target_lane_ = -1;
  int burst_left_ = 0;
  double burst_dv_ = 0.0;
  double burst_dd_ = 0.0;
};

struct EpisodeOutcome {
  EpisodeRecord record;
  bool ego_caused_collision = false;
};

/// Rolls out one behaviour-policy episode with the given seed.
inline EpisodeOutcome run_behavior_episode(const ScenarioConfig& cfg, const GenerationOptions& opt,
                                           std::uint64_t episode_seed) {
  Rng policy_rng(nn::derive_seed(episode_seed, 0xB0));
  const BehaviorPolicy policy = opt.mix.sample(policy_rng.uniform());
  BehaviorDriver driver(policy, cfg, policy_rng);
  int wait_steps = 0;
  const bool waits = policy_rng.uniform() < opt.wait_fraction;
  if (waits) wait_steps = static_cast<int>(policy_rng.index(static_cast<std::size_t>(opt.wait_steps_max) + 1));

  EnvState s = sim::env_reset(cfg, episode_seed);
  if (waits) s.ego.v = 0.0;
  Rng env_rng = sim::episode_rng(episode_seed);

  EpisodeOutcome out;
  auto& ep = out.record;
  ep.seed = episode_seed;
  ep.policy_tag = to_string(policy);
  while (!s.done) {
    const Observation o = sim::observe(s, cfg);
    EgoAction a = driver.act(s, cfg, policy_rng);
    if (s.t < wait_steps) a = {opt.wait_dv, 0.0};
    auto r = sim::env_step(s, a, cfg, env_rng);
    ep.obs.push_back(o);
    ep.act.push_back({std::clamp(a.delta_v, cfg.dv_min, cfg.dv_max), std::clamp(a.delta_delta, -cfg.dd_max, cfg.dd_max)});
    ep.rew.push_back(r.reward);
    ep.done.push_back(r.done);
    if (r.state.collision) {
      ep.t_coll = static_cast<int>(ep.size()) - 1;
      out.ego_caused_collision = r.state.ego_caused;
    }
    s = std::move(r.state);
  }
  if (ep.t_coll) ep = retro_label_collision(std::move(ep), cfg);
  return out;
}

/// Generates `count` episodes. Episodes ending in an ego-caused collision are
/// discarded and regenerated from the next seed of the same slot.
inline std::vector<EpisodeRecord> generate_dataset(const ScenarioConfig& cfg, std::size_t count,
                                                   const GenerationOptions& opt, std::uint64_t seed,
                                                   GenerationStats* stats = nullptr) {
  cfg.validate();
  opt.mix.validate();
  if (!(opt.wait_dv <= 0.0)) throw ConfigError("wait_dv must be <= 0");
  std::vector<EpisodeRecord> episodes(count);
  std::vector<GenerationStats> per_slot(count);
  constexpr std::size_t kMaxAttemptsPerSlot = 200;

  auto fill = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      auto& st = per_slot[i];
      for (std::size_t attempt = 0;; ++attempt) {
        if (attempt >= kMaxAttemptsPerSlot) throw ConfigError("episode slot " + std::to_string(i) + " never produced a valid episode");
        const std::uint64_t ep_seed = nn::derive_seed(nn::derive_seed(seed, i), attempt);
        auto outcome = run_behavior_episode(cfg, opt, ep_seed);
        ++st.attempts;
        if (outcome.ego_caused_collision) {
          ++st.rejected;
          continue;
        }
        if (outcome.record.t_coll) ++st.kept_collisions;
        episodes[i] = std::move(outcome.record);
        break;
      }
    }
  };

  const std::size_t threads = std::max<std::size_t>(1, std::min<std::size_t>(opt.threads, count));
  if (threads <= 1) {
    fill(0, count);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    const std::size_t chunk = (count + threads - 1) / threads;
    for (std::size_t k = 0; k < threads; ++k)
      pool.emplace_back([&, k] {
        try {
          fill(std::min(count, k * chunk), std::min(count, (k + 1) * chunk));
        } catch (...) {
          errors[k] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  GenerationStats total;
  for (const auto& st : per_slot) {
    total.attempts += st.attempts;
    total.rejected += st.rejected;
    total.kept_collisions += st.kept_collisions;
  }
  if (stats) *stats = total;
  if (total.attempts > 0 && static_cast<double>(total.rejected) / total.attempts > opt.max_rejection_rate)
    throw ConfigError("collision filter rejected " + std::to_string(total.rejected) + " of " +
                      std::to_string(total.attempts) + " episodes");
  return episodes;
}

}  // namespace umbrella::data
