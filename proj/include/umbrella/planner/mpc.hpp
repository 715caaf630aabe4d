#pragma once

#include <cstdint>
#include <cstring>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "umbrella/planner/planner.hpp"
#include "umbrella/sim/highway.hpp"

namespace umbrella::planner {

using sim::EgoAction;
using sim::EnvState;

struct PlanDiagnostics {
  bool planned = false;
  double entropy = 0.0;
  double max_weight = 0.0;
  int excluded = 0;
  std::optional<int> k_star;
  MatrixXd trajectory;  // raw-unit T*, 2 x H
};

struct StepTrace {
  int t = 0;
  EgoAction action;  // as executed (clamped)
  sim::RewardComponents reward;
  double x = 0.0, y = 0.0, v = 0.0;
  bool collision = false;
  std::optional<PlanDiagnostics> plan;
};

struct EpisodeTrace {
  std::uint64_t seed = 0;
  std::string mode;
  std::uint64_t initial_hash = 0;
  double dt = 0.1;
  int horizon = 0;
  std::vector<StepTrace> steps;
  bool collision = false;
  bool ego_caused = false;
  bool goal_reached = false;
  double start_x = 0.0;
  double start_v = 0.0;
  double final_x = 0.0;

  int length() const { return static_cast<int>(steps.size()); }
  double distance() const { return final_x - start_x; }
};

/// FNV-1a over the kinematic state of every vehicle; used to check that
/// paired evaluations start from identical scenarios.
inline std::uint64_t state_hash(const EnvState& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](double d) {
    unsigned char b[sizeof(double)];
    std::memcpy(b, &d, sizeof d);
    for (unsigned char c : b) h = (h ^ c) * 0x100000001b3ULL;
  };
  auto agent = [&](const sim::AgentState& a) {
    mix(a.x);
    mix(a.y);
    mix(a.v);
    mix(static_cast<double>(static_cast<int>(a.mode)));
  };
  agent(s.ego);
  for (const auto& a : s.others) agent(a);
  return h;
}

/// Closed-loop decision maker. `act` sees the raw n_c history.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::string name() const = 0;
  virtual int history_length() const = 0;
  virtual void reset() {}
  virtual EgoAction act(const data::History& history, std::uint64_t step_seed, PlanDiagnostics* diag) = 0;
};

class NoopController : public Controller {
 public:
  std::string name() const override { return "noop"; }
  int history_length() const override { return 1; }
  EgoAction act(const data::History&, std::uint64_t, PlanDiagnostics*) override { return {}; }
};

/// One-step imitation baseline: mean action of the BC heads.
class BCController : public Controller {
 public:
  explicit BCController(const policy::BCPolicyEnsemble& bc) : bc_(bc) {}
  std::string name() const override { return "bc"; }
  int history_length() const override { return bc_.n_c; }
  EgoAction act(const data::History& h, std::uint64_t, PlanDiagnostics*) override {
    const VectorXd s = data::state_features(bc_.stats, h.observations());
    const VectorXd a = data::action_features(bc_.stats, h.actions());
    Eigen::Vector2d sum = Eigen::Vector2d::Zero();
    for (int k = 0; k < bc_.size(); ++k) sum += policy::bc_act(bc_, k, s, a);
    return EgoAction::from(bc_.stats.denormalize_action(sum / bc_.size()));
  }

 private:
  const policy::BCPolicyEnsemble& bc_;
};

/// MPC over `plan`: executes T*_0 and keeps T* as the next warm start
/// (unshifted unless `shift_warm_start`). The first cycle starts from zeros.
class PlannerController : public Controller {
 public:
  PlannerController(Models models, PlannerConfig cfg, bool record_plans = false)
      : models_(models), cfg_(cfg), record_(record_plans) {
    cfg_.validate();
    models_.validate(cfg_);
    reset();
  }
  std::string name() const override { return to_string(cfg_.mode); }
  int history_length() const override { return cfg_.n_c; }
  void reset() override { warm_ = MatrixXd::Zero(data::kActionDim, cfg_.H); }
  const MatrixXd& warm_start() const { return warm_; }
  const PlannerConfig& config() const { return cfg_; }

  EgoAction act(const data::History& h, std::uint64_t step_seed, PlanDiagnostics* diag) override {
    const auto& stats = models_.stats();
    auto res = plan(make_plan_input(stats, h, warm_), models_, cfg_, step_seed);
    if (cfg_.shift_warm_start && cfg_.H > 1) {
      warm_.leftCols(cfg_.H - 1) = res.trajectory.rightCols(cfg_.H - 1);
      warm_.col(cfg_.H - 1) = res.trajectory.col(cfg_.H - 1);
    } else {
      warm_ = res.trajectory;
    }
    if (diag) {
      diag->planned = true;
      diag->entropy = res.weights.entropy;
      diag->max_weight = res.weights.max_weight;
      diag->excluded = res.excluded;
      diag->k_star = res.k_star;
      if (record_) {
        diag->trajectory.resize(data::kActionDim, cfg_.H);
        for (int j = 0; j < cfg_.H; ++j) diag->trajectory.col(j) = stats.denormalize_action(res.trajectory.col(j));
      }
    }
    return EgoAction::from(stats.denormalize_action(res.trajectory.col(0)));
  }

 private:
  Models models_;
  PlannerConfig cfg_;
  bool record_;
  MatrixXd warm_;
};

inline EgoAction clamp_action(const EgoAction& a, const sim::ScenarioConfig& cfg) {
  return {std::clamp(a.delta_v, cfg.dv_min, cfg.dv_max), std::clamp(a.delta_delta, -cfg.dd_max, cfg.dd_max)};
}

inline std::uint64_t step_seed(std::uint64_t episode_seed, int t) {
  return nn::derive_seed(nn::derive_seed(episode_seed, 0x9A11), static_cast<std::uint64_t>(t));
}

/// Runs one closed-loop episode. Errors from the controller or the
/// environment are rethrown with the step index.
inline EpisodeTrace run_episode(const sim::ScenarioConfig& cfg, Controller& ctl, std::uint64_t episode_seed,
                                std::optional<EnvState> initial = std::nullopt) {
  EnvState s = initial ? *initial : sim::env_reset(cfg, episode_seed);
  Rng env_rng = sim::episode_rng(episode_seed);
  EpisodeTrace tr;
  tr.seed = episode_seed;
  tr.mode = ctl.name();
  tr.initial_hash = state_hash(s);
  tr.dt = cfg.dt;
  tr.horizon = cfg.horizon_steps;
  tr.start_x = tr.final_x = s.ego.x;
  tr.start_v = s.ego.v;
  ctl.reset();
  data::History hist(ctl.history_length(), sim::observe(s, cfg));
  while (!s.done) {
    StepTrace st;
    st.t = s.t;
    try {
      PlanDiagnostics diag;
      const EgoAction raw = ctl.act(hist, step_seed(episode_seed, s.t), &diag);
      if (diag.planned) st.plan = std::move(diag);
      auto r = sim::env_step(s, raw, cfg, env_rng);
      st.action = clamp_action(raw, cfg);
      st.reward = r.reward;
      s = std::move(r.state);
    } catch (const Error& e) {
      rethrow_with_context(e, "episode " + std::to_string(episode_seed) + " step " + std::to_string(st.t) + ": ");
    }
    st.x = s.ego.x;
    st.y = s.ego.y;
    st.v = s.ego.v;
    st.collision = s.collision;
    hist.advance(st.action, sim::observe(s, cfg));
    tr.steps.push_back(std::move(st));
  }
  tr.collision = s.collision;
  tr.ego_caused = s.ego_caused;
  tr.goal_reached = sim::distance_to_goal(s) <= 0.0;
  tr.final_x = s.ego.x;
  return tr;
}

/// MPC episode with the UMBRELLA / MBOP planner.
inline EpisodeTrace mpc_episode(const sim::ScenarioConfig& cfg, const Models& models, const PlannerConfig& pcfg,
                                std::uint64_t episode_seed, bool record_plans = false) {
  PlannerController ctl(models, pcfg, record_plans);
  return run_episode(cfg, ctl, episode_seed);
}

}  // namespace umbrella::planner
