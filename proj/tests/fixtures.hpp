#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "umbrella/planner/mpc.hpp"

namespace fixtures {

using namespace umbrella;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Normalization statistics far from identity so that unit mistakes show.
inline data::NormStats odd_stats(std::uint64_t seed) {
  nn::Rng rng(seed);
  data::NormStats s;
  for (int i = 0; i < sim::kObsDim; ++i) {
    s.obs_mean(i) = rng.uniform(-3, 3);
    s.obs_std(i) = rng.uniform(0.5, 2.0);
  }
  for (int i = 0; i < data::kActionDim; ++i) {
    s.act_mean(i) = rng.uniform(-0.1, 0.1);
    s.act_std(i) = rng.uniform(0.1, 0.4);
  }
  s.rew_mean = 0.3;
  s.rew_std = 0.7;
  s.value_mean = 5.0;
  s.value_std = 2.5;
  return s;
}

struct TinyModels {
  dynamics::DynamicsEnsemble dynamics;
  policy::BCPolicyEnsemble bc;
  policy::ValueEnsemble value;

  planner::Models view() const { return {&dynamics, &bc, &value}; }
};

/// Small fixed-weight ensembles; weights scaled up so the nets are far from
/// linear and head differences matter.
inline TinyModels tiny_models(int K, int n_c, dynamics::HeadMode mode, std::uint64_t seed, double scale = 2.0) {
  TinyModels m;
  const auto stats = odd_stats(seed + 1);
  dynamics::HeadArchitecture arch;
  arch.n_c = n_c;
  arch.hidden = 7;
  arch.encoding = 5;
  arch.latent_dim = 3;
  arch.dropout = 0.0;
  dynamics::LatentConfig lat;
  lat.latent_dim = 3;
  m.dynamics = dynamics::DynamicsEnsemble::create(K, arch, mode, lat, stats, seed);
  policy::PolicyArchitecture pa;
  pa.n_c = n_c;
  pa.hidden = {6, 6};
  m.bc = policy::make_bc_ensemble(K, pa, stats, seed + 2);
  pa.dropout = 0.1;
  m.value = policy::make_value_ensemble(K, pa, stats, seed + 3);
  nn::Rng bias_rng(seed + 4);
  auto scale_net = [&](nn::Network& n) {
    for (auto& l : n.params.layers) {
      l.weight *= scale;
      for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = bias_rng.uniform(-1, 1);
    }
  };
  for (auto& h : m.dynamics.heads) {
    scale_net(h.encoder);
    scale_net(h.decoder);
    scale_net(h.posterior);
  }
  for (auto& h : m.bc.heads) scale_net(h);
  for (auto& h : m.value.heads) scale_net(h);
  return m;
}

inline planner::PlanInput random_input(int n_c, int H, std::uint64_t seed) {
  nn::Rng rng(seed);
  planner::PlanInput in;
  in.state.resize(n_c * sim::kObsDim);
  in.previous_actions.resize(n_c * data::kActionDim);
  in.warm_start.resize(data::kActionDim, H);
  for (Eigen::Index i = 0; i < in.state.size(); ++i) in.state(i) = rng.normal();
  for (Eigen::Index i = 0; i < in.previous_actions.size(); ++i) in.previous_actions(i) = rng.normal();
  for (Eigen::Index i = 0; i < in.warm_start.size(); ++i) in.warm_start(i) = rng.normal();
  return in;
}

/// Largest relative error between an analytic gradient and central
/// differences of `f` over `params`; entries below `floor` in both use
/// absolute error instead.
inline double max_rel_error(std::vector<double>& params, const std::vector<double>& analytic,
                            const std::function<double()>& f, double h = 1e-5, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    const double up = f();
    params[i] = keep - h;
    const double down = f();
    params[i] = keep;
    const double num = (up - down) / (2 * h);
    const double denom = std::max({std::abs(num), std::abs(analytic[i]), floor});
    worst = std::max(worst, std::abs(num - analytic[i]) / denom);
  }
  return worst;
}

/// Synthetic episode whose observations and actions count the step index.
inline data::EpisodeRecord counter_episode(int T) {
  data::EpisodeRecord ep;
  ep.seed = 1;
  ep.policy_tag = "counter";
  for (int t = 0; t < T; ++t) {
    sim::Observation o = sim::Observation::Constant(static_cast<double>(t));
    ep.obs.push_back(o);
    ep.act.push_back({static_cast<double>(t), -static_cast<double>(t)});
    sim::RewardComponents r;
    r.prog = 0.1 * t;
    r.total = 0.1 * t;
    ep.rew.push_back(r);
    ep.done.push_back(t + 1 == T);
  }
  return ep;
}

}  // namespace fixtures
