#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "umbrella/errors.hpp"
#include "umbrella/nn/rng.hpp"
#include "umbrella/sim/config.hpp"

namespace umbrella::sim {

using nn::Rng;

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::keep: return "keep";
    case Mode::cut_in: return "cut_in";
    case Mode::brake: return "brake";
  }
  return "?";
}

struct AgentState {
  double x = 0.0;
  double y = 0.0;
  double v = 0.0;
  double length = 4.5;
  double width = 1.8;
  Mode mode = Mode::keep;
  double desired_speed = 0.0;
  int target_lane = 0;
  int origin_lane = 0;

  bool operator==(const AgentState&) const = default;
};

/// Ego action: change of speed (m/s) and lateral displacement (m) per step.
struct EgoAction {
  double delta_v = 0.0;
  double delta_delta = 0.0;

  Eigen::Vector2d vec() const { return {delta_v, delta_delta}; }
  static EgoAction from(const Eigen::Vector2d& a) { return {a(0), a(1)}; }
  bool operator==(const EgoAction&) const = default;
};

struct RewardComponents {
  double prog = 0.0;
  double lane = 0.0;
  double coll = 0.0;
  double total = 0.0;

  bool operator==(const RewardComponents&) const = default;
};

inline double combine_reward(const ScenarioConfig& cfg, double prog, double lane, double coll) {
  return cfg.w_prog * prog + cfg.w_lane * lane + cfg.w_coll * coll;
}

struct EnvState {
  int t = 0;
  AgentState ego;
  std::vector<AgentState> others;
  double goal_x = 0.0;
  bool collision = false;
  int collided_with = -1;
  bool ego_caused = false;  // collision attributed to the ego's own motion
  RewardComponents reward;
  bool done = false;

  bool operator==(const EnvState&) const = default;
};

struct StepResult {
  EnvState state;
  RewardComponents reward;
  bool done = false;
};

// ---------------------------------------------------------------- observation

inline constexpr int kEgoFeatures = 4;
inline constexpr int kNeighborSlots = 6;
inline constexpr int kSlotFeatures = 3;
inline constexpr int kObsDim = kEgoFeatures + kNeighborSlots * kSlotFeatures;  // 22
inline constexpr double kObsRange = 60.0;

using Observation = Eigen::Matrix<double, kObsDim, 1>;

/// Neighbour slot order: lead/follow in the ego lane, lane+1, lane-1.
enum Slot : int { lead_same = 0, follow_same, lead_left, follow_left, lead_right, follow_right };

inline constexpr int slot_offset(int slot) { return kEgoFeatures + kSlotFeatures * slot; }

inline double distance_to_goal(const EnvState& s) { return std::max(0.0, s.goal_x - s.ego.x); }

/// Feature vector of a state: ego (v, y, lane offset, distance to goal) then
/// six neighbour slots of (dx clipped to +-60 m, dv, presence).
inline Observation observe(const EnvState& s, const ScenarioConfig& cfg) {
  Observation o = Observation::Zero();
  const int lane = cfg.lane_of(s.ego.y);
  o(0) = s.ego.v;
  o(1) = s.ego.y;
  o(2) = s.ego.y - cfg.lane_center(lane);
  o(3) = distance_to_goal(s);

  std::array<double, kNeighborSlots> best;
  best.fill(std::numeric_limits<double>::infinity());
  for (int k = 0; k < kNeighborSlots; ++k) {
    const bool lead = (k % 2) == 0;
    o(slot_offset(k)) = lead ? kObsRange : -kObsRange;
  }
  for (const auto& a : s.others) {
    const double dx = a.x - s.ego.x;
    if (std::abs(dx) >= kObsRange) continue;
    const int al = cfg.lane_of(a.y);
    int base;
    if (al == lane) base = lead_same;
    else if (al == lane + 1) base = lead_left;
    else if (al == lane - 1) base = lead_right;
    else continue;
    const int slot = dx >= 0.0 ? base : base + 1;
    if (std::abs(dx) < best[slot]) {
      best[slot] = std::abs(dx);
      o(slot_offset(slot)) = dx;
      o(slot_offset(slot) + 1) = a.v - s.ego.v;
      o(slot_offset(slot) + 2) = 1.0;
    }
  }
  return o;
}

// ------------------------------------------------------------------ collision

/// Axis-aligned rectangle overlap; touching boundaries count as a collision.
inline bool collision_check(const AgentState& a, const AgentState& b) {
  return std::abs(a.x - b.x) <= 0.5 * (a.length + b.length) && std::abs(a.y - b.y) <= 0.5 * (a.width + b.width);
}

// ------------------------------------------------------------- other agents

inline Mode sample_transition(Mode current, const TransitionMatrix& m, double u) {
  const auto& row = m[static_cast<int>(current)];
  double acc = 0.0;
  for (int k = 0; k < kModeCount; ++k) {
    acc += row[k];
    if (u < acc) return static_cast<Mode>(k);
  }
  // u in [acc, 1) only through rounding; fall back to the last non-zero entry
  for (int k = kModeCount - 1; k >= 0; --k)
    if (row[k] > 0.0) return static_cast<Mode>(k);
  return current;
}

namespace detail {

inline double idm_acceleration(const AgentState& a, const std::vector<AgentState>& neighbors, std::size_t self,
                               const ScenarioConfig& cfg) {
  const int lane = cfg.lane_of(a.y);
  const AgentState* leader = nullptr;
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < neighbors.size(); ++j) {
    if (j == self) continue;
    const auto& b = neighbors[j];
    if (cfg.lane_of(b.y) != lane || b.x <= a.x) continue;
    const double g = b.x - a.x - 0.5 * (a.length + b.length);
    if (g < gap) {
      gap = g;
      leader = &b;
    }
  }
  const double v0 = std::max(a.desired_speed, 0.1);
  double acc = cfg.idm_accel * (1.0 - std::pow(a.v / v0, 4));
  if (leader) {
    const double s = std::max(gap, 0.1);
    const double dv = a.v - leader->v;
    const double s_star =
        cfg.idm_min_gap + std::max(0.0, a.v * cfg.idm_time_gap + a.v * dv / (2.0 * std::sqrt(cfg.idm_accel * cfg.idm_decel)));
    acc -= cfg.idm_accel * (s_star / s) * (s_star / s);
  }
  return std::clamp(acc, -8.0, cfg.idm_accel);
}

}  // namespace detail

/// One step of a scripted (non-ego) agent. Draws exactly two uniforms from
/// `rng`: the mode transition and the cut-in direction.
inline AgentState scripted_agent_step(const AgentState& agent, const std::vector<AgentState>& neighbors,
                                      std::size_t self, const ScenarioConfig& cfg, const TransitionMatrix& matrix,
                                      Rng& rng) {
  AgentState next = agent;
  const double u_mode = rng.uniform();
  const double u_dir = rng.uniform();
  const Mode mode = sample_transition(agent.mode, matrix, u_mode);

  if (mode == Mode::cut_in && agent.mode != Mode::cut_in) {
    const int lane = cfg.lane_of(agent.y);
    int target = u_dir < 0.5 ? lane - 1 : lane + 1;
    if (target < 0) target = lane + 1;
    if (target >= cfg.lane_count) target = lane - 1;
    next.origin_lane = lane;
    next.target_lane = target;
  } else if (mode != Mode::cut_in && agent.mode == Mode::cut_in) {
    next.target_lane = next.origin_lane;  // aborted manoeuvre drifts back
  }
  next.mode = mode;

  double v;
  switch (mode) {
    case Mode::brake: v = std::max(0.0, agent.v - cfg.brake_decel * cfg.dt); break;
    case Mode::cut_in: v = agent.v; break;
    case Mode::keep:
    default: v = std::max(0.0, agent.v + detail::idm_acceleration(agent, neighbors, self, cfg) * cfg.dt); break;
  }
  next.v = v;
  next.x = agent.x + v * cfg.dt;

  const double target_y = cfg.lane_center(next.target_lane);
  const double rate = cfg.lane_width / cfg.cut_in_steps;
  const double dy = std::clamp(target_y - agent.y, -rate, rate);
  next.y = agent.y + dy;
  if (next.mode == Mode::cut_in && std::abs(target_y - next.y) < 1e-9) {
    next.mode = Mode::keep;
    next.origin_lane = next.target_lane;
  }
  return next;
}

// ---------------------------------------------------------------- environment

inline Rng episode_rng(std::uint64_t episode_seed) { return Rng(nn::derive_seed(episode_seed, 0x57E9)); }

inline EnvState env_reset(const ScenarioConfig& cfg, std::uint64_t episode_seed) {
  cfg.validate();
  Rng rng(nn::derive_seed(episode_seed, 0xE5));
  EnvState s;
  const int ego_lane = cfg.ego_lane >= 0 ? cfg.ego_lane : static_cast<int>(rng.index(cfg.lane_count));
  s.ego.length = cfg.vehicle_length;
  s.ego.width = cfg.vehicle_width;
  s.ego.x = 0.0;
  s.ego.y = cfg.lane_center(ego_lane);
  s.ego.v = rng.uniform(cfg.ego_speed_min, cfg.ego_speed_max);
  s.ego.target_lane = s.ego.origin_lane = ego_lane;
  s.ego.desired_speed = s.ego.v;
  s.goal_x = cfg.e_goal;
  s.done = cfg.horizon_steps == 0;

  const double min_dx = cfg.vehicle_length + cfg.spawn_gap;
  for (int i = 0; i < cfg.agent_count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      AgentState a;
      a.length = cfg.vehicle_length;
      a.width = cfg.vehicle_width;
      const int lane = static_cast<int>(rng.index(cfg.lane_count));
      a.y = cfg.lane_center(lane);
      a.x = rng.uniform(-cfg.spawn_range, cfg.spawn_range);
      a.v = rng.uniform(cfg.other_speed_min, cfg.other_speed_max);
      a.desired_speed = a.v;
      a.target_lane = a.origin_lane = lane;
      bool ok = !(lane == ego_lane && std::abs(a.x - s.ego.x) < min_dx);
      for (const auto& b : s.others)
        if (ok && cfg.lane_of(b.y) == lane && std::abs(a.x - b.x) < min_dx) ok = false;
      if (ok) {
        s.others.push_back(a);
        placed = true;
      }
    }
    if (!placed) throw ScenarioError("could not place agent " + std::to_string(i) + " without overlap");
  }
  return s;
}

/// Advances the world by one step. Other agents draw from `rng`; the ego
/// action is clamped to the configured bounds before integration.
inline StepResult env_step(const EnvState& state, const EgoAction& action, const ScenarioConfig& cfg, Rng& rng) {
  if (state.done) throw StateError("env_step on a finished episode");
  if (!std::isfinite(action.delta_v) || !std::isfinite(action.delta_delta))
    throw NumericError("non-finite ego action at t=" + std::to_string(state.t));

  StepResult r;
  EnvState& n = r.state;
  n = state;
  n.t = state.t + 1;

  const double dv = std::clamp(action.delta_v, cfg.dv_min, cfg.dv_max);
  const double dd = std::clamp(action.delta_delta, -cfg.dd_max, cfg.dd_max);
  n.ego.v = std::clamp(state.ego.v + dv, 0.0, cfg.v_max);
  n.ego.y = std::clamp(state.ego.y + dd, cfg.y_min(), cfg.y_max());
  n.ego.x = state.ego.x + n.ego.v * cfg.dt;
  const double lateral_move = n.ego.y - state.ego.y;

  const auto matrix = cfg.transition_matrix();
  for (std::size_t i = 0; i < state.others.size(); ++i)
    n.others[i] = scripted_agent_step(state.others[i], state.others, i, cfg, matrix, rng);

  const double e_prev = distance_to_goal(state);
  const double e_now = distance_to_goal(n);
  RewardComponents rc;
  rc.prog = n.ego.v <= cfg.v_limit ? std::pow(cfg.gamma, n.t) * (e_prev - e_now) : 0.0;
  const double off = n.ego.y - cfg.lane_center(cfg.lane_of(n.ego.y));
  rc.lane = -off * off;

  n.collision = false;
  n.collided_with = -1;
  n.ego_caused = false;
  for (std::size_t i = 0; i < n.others.size(); ++i) {
    const auto& o = n.others[i];
    if (!collision_check(n.ego, o)) continue;
    n.collision = true;
    n.collided_with = static_cast<int>(i);
    const bool rear_end = o.x > n.ego.x && o.mode != Mode::cut_in;
    const bool swerved_into = std::abs(lateral_move) > 0.02 && lateral_move * (o.y - n.ego.y) > 0.0;
    n.ego_caused = rear_end || swerved_into;
    break;
  }
  rc.coll = n.collision ? cfg.collision_penalty : 0.0;
  rc.total = combine_reward(cfg, rc.prog, rc.lane, rc.coll);
  n.reward = rc;
  n.done = n.collision || e_now <= 0.0 || n.t >= cfg.horizon_steps;

  r.reward = rc;
  r.done = n.done;
  return r;
}

}  // namespace umbrella::sim
