#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "umbrella/data/windows.hpp"
#include "umbrella/dynamics/ensemble.hpp"
#include "umbrella/log.hpp"
#include "umbrella/policy/ensembles.hpp"

namespace umbrella::planner {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;
using nn::Rng;

enum class PlannerMode { umbrella, umbrella_p, mbop };

inline const char* to_string(PlannerMode m) {
  switch (m) {
    case PlannerMode::umbrella: return "umbrella";
    case PlannerMode::umbrella_p: return "umbrella-p";
    case PlannerMode::mbop: return "mbop";
  }
  return "?";
}

inline PlannerMode planner_mode_from_string(const std::string& s) {
  if (s == "umbrella") return PlannerMode::umbrella;
  if (s == "umbrella-p" || s == "umbrella_p") return PlannerMode::umbrella_p;
  if (s == "mbop") return PlannerMode::mbop;
  throw ConfigError("unknown planner mode '" + s + "'");
}

struct PlannerConfig {
  int K = 2;
  int H = 30;
  int N = 300;
  double sigma2 = 1.2;
  double beta = 0.6;
  double kappa = 0.5;
  int n_c = 20;
  PlannerMode mode = PlannerMode::umbrella;
  bool shift_warm_start = false;  // experimental: drop T*_0 before reuse
  int threads = 1;
  int chunk = 64;  // trajectories per batched work item; independent of `threads`
  double max_excluded_fraction = 0.1;

  int M() const { return N / K; }

  void validate() const {
    if (K < 1) throw ConfigError("K must be >= 1");
    if (N < 1) throw ConfigError("N must be >= 1");
    if (N % K != 0) throw ConfigError("N (" + std::to_string(N) + ") must be divisible by K (" + std::to_string(K) + ")");
    if (H < 1) throw ConfigError("H must be >= 1");
    if (!(kappa > 0.0) || !std::isfinite(kappa)) throw ConfigError("kappa must be > 0");
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0,1]");
    if (!(sigma2 >= 0.0) || !std::isfinite(sigma2)) throw ConfigError("sigma2 must be >= 0");
    if (n_c < 1) throw ConfigError("n_c must be >= 1");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (chunk < 1) throw ConfigError("chunk must be >= 1");
    if (!(max_excluded_fraction >= 0.0 && max_excluded_fraction <= 1.0))
      throw ConfigError("max_excluded_fraction must lie in [0,1]");
  }
};

/// Read-only model snapshot used by the planner. For MBOP `dynamics` is the
/// deterministic ensemble.
struct Models {
  const dynamics::DynamicsEnsemble* dynamics = nullptr;
  const policy::BCPolicyEnsemble* bc = nullptr;
  const policy::ValueEnsemble* value = nullptr;

  const data::NormStats& stats() const { return dynamics->stats; }

  void validate(const PlannerConfig& cfg) const {
    if (!dynamics || !bc || !value) throw ContractError("planner models are incomplete");
    if (dynamics->size() != cfg.K) throw ConfigError("dynamics ensemble has " + std::to_string(dynamics->size()) + " heads, config K = " + std::to_string(cfg.K));
    if (bc->size() < cfg.K) throw ConfigError("BC ensemble has fewer heads than K");
    if (value->size() < 1) throw ConfigError("value ensemble is empty");
    if (!(bc->stats == dynamics->stats) || !(value->stats == dynamics->stats))
      throw ContractError("checkpoints were trained with different normalization statistics");
    if (dynamics->arch().n_c != cfg.n_c || bc->n_c != cfg.n_c || value->n_c != cfg.n_c)
      throw ConfigError("model history lengths do not match n_c = " + std::to_string(cfg.n_c));
    if (cfg.mode == PlannerMode::mbop && dynamics->mode() != dynamics::HeadMode::deterministic)
      throw ConfigError("mbop mode needs the deterministic dynamics model");
  }
};

/// Planner input in normalized units.
struct PlanInput {
  VectorXd state;             // n_c stacked observations, oldest first
  VectorXd previous_actions;  // executed actions a_{t-n_c..t-1}, oldest first
  MatrixXd warm_start;        // 2 x H previous plan T
};

inline PlanInput make_plan_input(const data::NormStats& stats, const data::History& history, const MatrixXd& warm) {
  return {data::state_features(stats, history.observations()), data::action_features(stats, history.actions()), warm};
}

struct TrajectoryBatch {
  std::vector<MatrixXd> actions;  // N entries of 2 x H: column j is A_{n, j+1}
  VectorXd returns;
  std::vector<int> head;
  std::vector<int> latent;
  std::vector<char> valid;
  MatrixXd latents;  // n_z x M, empty for a deterministic model

  int size() const { return static_cast<int>(actions.size()); }
  std::vector<int> valid_indices() const {
    std::vector<int> out;
    for (int n = 0; n < size(); ++n)
      if (valid[n]) out.push_back(n);
    return out;
  }
};

struct WeightStats {
  double entropy = 0.0;
  double max_weight = 0.0;
  int count = 0;
};

struct PlanResult {
  MatrixXd trajectory;  // T*: 2 x H, normalized
  TrajectoryBatch batch;
  std::optional<int> k_star;
  WeightStats weights;
  int excluded = 0;
};

inline constexpr std::uint64_t kLatentStream = 0xFFFF'FFFF'0000'0001ULL;

inline std::uint64_t trajectory_seed(std::uint64_t plan_seed, int n) {
  return nn::derive_seed(plan_seed, static_cast<std::uint64_t>(n));
}

namespace detail {

inline void shift_history(MatrixXd& hist, const MatrixXd& newest) {
  const Eigen::Index R = hist.rows();
  if (R > data::kActionDim) hist.topRows(R - data::kActionDim) = hist.bottomRows(R - data::kActionDim).eval();
  hist.bottomRows(data::kActionDim) = newest;
}

/// Rolls out the trajectories `ns` (all on head `l`) as one batch.
inline void rollout_group(const PlanInput& in, const Models& models, const PlannerConfig& cfg, std::uint64_t seed,
                          int l, const std::vector<int>& ns, TrajectoryBatch& out) {
  const auto B = static_cast<Eigen::Index>(ns.size());
  const int H = cfg.H;
  const int K = cfg.K;
  const int M = cfg.M();
  const auto& dyn = *models.dynamics;
  const auto& stats = models.stats();
  const bool stochastic = dyn.mode() == dynamics::HeadMode::stochastic;
  const double sd = std::sqrt(cfg.sigma2);

  MatrixXd S = in.state.replicate(1, B);
  MatrixXd bc_hist = in.previous_actions.replicate(1, B);
  bc_hist.bottomRows(data::kActionDim).colwise() = in.warm_start.col(0);  // a_0 = T_0
  MatrixXd val_hist = bc_hist;
  MatrixXd Z;
  if (stochastic) {
    Z.resize(dyn.heads.front().latent_dim(), B);
    for (Eigen::Index c = 0; c < B; ++c) Z.col(c) = out.latents.col(ns[c] % M);
  }
  std::vector<Rng> rngs;
  rngs.reserve(B);
  for (int n : ns) rngs.emplace_back(trajectory_seed(seed, n));

  RowVectorXd R = RowVectorXd::Zero(B);
  std::vector<char> finite(B, 1);
  for (int j = 0; j < H; ++j) {
    MatrixXd a = policy::head_forward(*models.bc, l, S, bc_hist);
    for (Eigen::Index c = 0; c < B; ++c) {
      a(0, c) += sd * rngs[c].normal();
      a(1, c) += sd * rngs[c].normal();
    }
    const VectorXd T_j = in.warm_start.col(std::min(j + 1, H - 1));
    MatrixXd A = (1.0 - cfg.beta) * a;
    A.colwise() += cfg.beta * T_j;
    for (Eigen::Index c = 0; c < B; ++c) out.actions[ns[c]].col(j) = A.col(c);

    RowVectorXd r_sum = RowVectorXd::Zero(B);
    MatrixXd S_next;
    for (int i = 0; i < K; ++i) {
      auto p = dynamics::predict_unchecked(dyn.heads[i], S, A, Z);
      r_sum += (p.rewards.array() * stats.rew_std + stats.rew_mean).matrix();
      if (i == l) S_next = std::move(p.next_states);
    }
    R += r_sum / static_cast<double>(K);
    S = std::move(S_next);
    shift_history(bc_hist, a);
    shift_history(val_hist, A);
    for (Eigen::Index c = 0; c < B; ++c)
      if (!S.col(c).allFinite() || !A.col(c).allFinite()) finite[c] = 0;
  }
  R += policy::value_estimate_mean_batch(*models.value, S, val_hist);
  for (Eigen::Index c = 0; c < B; ++c) {
    const int n = ns[c];
    out.returns(n) = R(c);
    out.valid[n] = finite[c] && std::isfinite(R(c)) ? 1 : 0;
  }
}

}  // namespace detail

/// Samples N trajectories. Trajectory n uses ensemble head n mod K and latent
/// n mod M for all H steps, and draws its action noise from its own stream
/// derived from (seed, n), so partitioning work across threads does not
/// change the result.
inline TrajectoryBatch rollout_trajectories(const PlanInput& in, const Models& models, const PlannerConfig& cfg,
                                            std::uint64_t seed) {
  cfg.validate();
  models.validate(cfg);
  const int S = cfg.n_c * sim::kObsDim;
  if (in.state.size() != S) throw DimensionError("plan input state has wrong dimension");
  if (in.previous_actions.size() != cfg.n_c * data::kActionDim) throw DimensionError("plan input action history has wrong dimension");
  if (in.warm_start.rows() != data::kActionDim || in.warm_start.cols() != cfg.H)
    throw DimensionError("warm start must be 2 x H");
  if (!in.state.allFinite() || !in.previous_actions.allFinite() || !in.warm_start.allFinite())
    throw NumericError("plan input is not finite");

  const int N = cfg.N;
  const int M = cfg.M();
  TrajectoryBatch b;
  b.actions.assign(N, MatrixXd::Zero(data::kActionDim, cfg.H));
  b.returns = VectorXd::Zero(N);
  b.valid.assign(N, 0);
  for (int n = 0; n < N; ++n) {
    b.head.push_back(n % cfg.K);
    b.latent.push_back(n % M);
  }
  if (models.dynamics->mode() == dynamics::HeadMode::stochastic) {
    Rng lat(nn::derive_seed(seed, kLatentStream));
    b.latents = dynamics::sample_prior(models.dynamics->latent, M, lat);
  }

  struct Item {
    int head;
    std::vector<int> ns;
  };
  std::vector<Item> items;
  for (int l = 0; l < cfg.K; ++l) {
    std::vector<int> ns;
    for (int n = l; n < N; n += cfg.K) {
      ns.push_back(n);
      if (static_cast<int>(ns.size()) == cfg.chunk) {
        items.push_back({l, std::move(ns)});
        ns.clear();
      }
    }
    if (!ns.empty()) items.push_back({l, std::move(ns)});
  }

  const int workers = std::min<int>(cfg.threads, static_cast<int>(items.size()));
  if (workers <= 1) {
    for (const auto& it : items) detail::rollout_group(in, models, cfg, seed, it.head, it.ns, b);
    return b;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < items.size(); i = next++) {
        try {
          detail::rollout_group(in, models, cfg, seed, items[i].head, items[i].ns, b);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return b;
}

/// Return-weighted average of action sequences: weights exp(kappa * R_n),
/// evaluated after subtracting max R. Column t of the result aggregates
/// column t of every trajectory (the (t+1)-th planned action).
inline MatrixXd mppi_reweight(const std::vector<MatrixXd>& actions, const VectorXd& returns, double kappa,
                              WeightStats* stats = nullptr) {
  if (actions.empty()) throw ContractError("mppi_reweight needs at least one trajectory");
  if (static_cast<Eigen::Index>(actions.size()) != returns.size()) throw DimensionError("actions / returns size mismatch");
  if (!(kappa > 0.0)) throw ConfigError("kappa must be > 0");
  const double r_max = returns.maxCoeff();
  const VectorXd w = (kappa * (returns.array() - r_max)).exp().matrix();
  const double total = w.sum();
  if (!(total >= 1.0) || !std::isfinite(total)) throw NumericError("MPPI weights are degenerate");
  MatrixXd T = MatrixXd::Zero(actions.front().rows(), actions.front().cols());
  MatrixXd lo = actions.front(), hi = actions.front();
  for (std::size_t n = 0; n < actions.size(); ++n) {
    if (actions[n].rows() != T.rows() || actions[n].cols() != T.cols()) throw DimensionError("trajectory shapes differ");
    T += w(n) * actions[n];
    lo = lo.cwiseMin(actions[n]);
    hi = hi.cwiseMax(actions[n]);
  }
  T /= total;
  // rounding of the weighted sum can step an ulp outside the hull
  T = T.cwiseMax(lo).cwiseMin(hi);
  if (stats) {
    const VectorXd p = w / total;
    stats->count = static_cast<int>(p.size());
    stats->max_weight = p.maxCoeff();
    stats->entropy = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i)
      if (p(i) > 0.0) stats->entropy -= p(i) * std::log(p(i));
  }
  return T;
}

inline MatrixXd mppi_reweight(const TrajectoryBatch& b, const std::vector<int>& subset, double kappa,
                              WeightStats* stats = nullptr) {
  std::vector<MatrixXd> A;
  VectorXd R(static_cast<Eigen::Index>(subset.size()));
  for (std::size_t i = 0; i < subset.size(); ++i) {
    A.push_back(b.actions.at(subset[i]));
    R(static_cast<Eigen::Index>(i)) = b.returns(subset[i]);
  }
  return mppi_reweight(A, R, kappa, stats);
}

struct Selection {
  int head = 0;
  std::vector<int> indices;
  std::vector<double> head_sums;
};

/// Head whose valid trajectories have the lowest summed return; ties go to
/// the lowest index. Heads without valid trajectories are skipped.
inline Selection pessimistic_select(const TrajectoryBatch& b, int K) {
  if (K < 1) throw ConfigError("K must be >= 1");
  std::vector<double> sums(K, 0.0);
  std::vector<int> counts(K, 0);
  for (int n = 0; n < b.size(); ++n) {
    if (!b.valid[n]) continue;
    sums[b.head[n]] += b.returns(n);
    ++counts[b.head[n]];
  }
  Selection s;
  s.head = -1;
  for (int k = 0; k < K; ++k)
    if (counts[k] > 0 && (s.head < 0 || sums[k] < sums[s.head])) s.head = k;
  if (s.head < 0) throw NumericError("no valid trajectories to select from");
  for (int n = 0; n < b.size(); ++n)
    if (b.valid[n] && b.head[n] == s.head) s.indices.push_back(n);
  s.head_sums = std::move(sums);
  return s;
}

/// One planning cycle: rollout, exclusion of non-finite trajectories, then
/// MPPI over the full batch (umbrella, mbop) or the pessimistic head only.
inline PlanResult plan(const PlanInput& in, const Models& models, const PlannerConfig& cfg, std::uint64_t seed) {
  PlanResult res;
  res.batch = rollout_trajectories(in, models, cfg, seed);
  std::vector<int> keep = res.batch.valid_indices();
  res.excluded = cfg.N - static_cast<int>(keep.size());
  if (res.excluded > 0) {
    if (res.excluded > cfg.max_excluded_fraction * cfg.N)
      throw NumericError(std::to_string(res.excluded) + " of " + std::to_string(cfg.N) +
                         " trajectories are non-finite");
    warn("excluded " + std::to_string(res.excluded) + " non-finite trajectories");
  }
  if (cfg.mode == PlannerMode::umbrella_p) {
    auto sel = pessimistic_select(res.batch, cfg.K);
    res.k_star = sel.head;
    keep = std::move(sel.indices);
  }
  res.trajectory = mppi_reweight(res.batch, keep, cfg.kappa, &res.weights);
  return res;
}

}  // namespace umbrella::planner
