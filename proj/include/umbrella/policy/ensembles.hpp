#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <deque>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "umbrella/data/training_set.hpp"
#include "umbrella/nn/adam.hpp"
#include "umbrella/nn/checkpoint.hpp"
#include "umbrella/nn/mlp.hpp"

namespace umbrella::policy {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::json;
using nn::Rng;

struct PolicyArchitecture {
  int n_c = 20;
  std::vector<int> hidden{64, 64};
  nn::Activation activation = nn::Activation::tanh;
  double dropout = 0.0;

  int input_dim() const { return n_c * (data::kActionDim + static_cast<int>(sim::kObsDim)); }
};

/// K networks mapping (stacked state, previous n_c actions) to an output of
/// fixed width: the action for the BC policy, a scalar for the value function.
struct HistoryEnsemble {
  std::string kind;
  int n_c = 20;
  std::vector<nn::Network> heads;
  std::vector<std::uint64_t> seeds;
  data::NormStats stats;
  json metadata = json::object();

  int size() const { return static_cast<int>(heads.size()); }
  int output_dim() const { return heads.front().spec.output_width(); }
  int state_dim() const { return n_c * sim::kObsDim; }
};

struct BCPolicyEnsemble : HistoryEnsemble {};
struct ValueEnsemble : HistoryEnsemble {};

namespace detail {

inline void init(HistoryEnsemble& e, const char* kind, int K, const PolicyArchitecture& a, int out,
                 const data::NormStats& stats, std::uint64_t seed) {
  if (K < 1) throw ConfigError("ensemble size must be >= 1");
  e.kind = kind;
  e.n_c = a.n_c;
  e.stats = stats;
  for (int k = 0; k < K; ++k) {
    const auto s = nn::derive_seed(seed, static_cast<std::uint64_t>(k));
    Rng rng(s);
    e.heads.emplace_back(nn::NetworkSpec::mlp(a.input_dim(), a.hidden, out, a.activation, a.dropout), rng);
    e.seeds.push_back(s);
  }
}

inline MatrixXd stack_inputs(const MatrixXd& states, const MatrixXd& previous_actions) {
  if (states.cols() != previous_actions.cols()) throw DimensionError("state / action batch size mismatch");
  MatrixXd in(states.rows() + previous_actions.rows(), states.cols());
  in << states, previous_actions;
  return in;
}

}  // namespace detail

inline BCPolicyEnsemble make_bc_ensemble(int K, PolicyArchitecture a, const data::NormStats& stats, std::uint64_t seed) {
  BCPolicyEnsemble e;
  detail::init(e, "bc_policy", K, a, data::kActionDim, stats, seed);
  return e;
}

inline ValueEnsemble make_value_ensemble(int K, PolicyArchitecture a, const data::NormStats& stats, std::uint64_t seed) {
  ValueEnsemble e;
  detail::init(e, "value_function", K, a, 1, stats, seed);
  return e;
}

/// Head `l` evaluated on a batch; inputs and outputs in normalized units.
inline MatrixXd head_forward(const HistoryEnsemble& e, int l, const MatrixXd& states, const MatrixXd& previous_actions) {
  if (l < 0 || l >= e.size()) throw DimensionError("head index out of range");
  if (states.rows() != e.state_dim() || previous_actions.rows() != e.n_c * data::kActionDim)
    throw DimensionError("history input has the wrong dimension for n_c = " + std::to_string(e.n_c));
  return e.heads[l](detail::stack_inputs(states, previous_actions));
}

/// Normalized action of BC head `l`.
inline VectorXd bc_act(const BCPolicyEnsemble& e, int l, const VectorXd& state, const VectorXd& previous_actions) {
  VectorXd a = head_forward(e, l, state, previous_actions).col(0);
  if (!a.allFinite()) throw NumericError("bc_act produced a non-finite action");
  return a;
}

/// Mean of the K value heads, in reward units.
inline double value_estimate_mean(const ValueEnsemble& e, const VectorXd& state, const VectorXd& previous_actions) {
  double s = 0.0;
  for (int k = 0; k < e.size(); ++k) s += head_forward(e, k, state, previous_actions)(0, 0);
  return e.stats.denormalize_value(s / e.size());
}

/// Batched K-head mean in reward units.
inline Eigen::RowVectorXd value_estimate_mean_batch(const ValueEnsemble& e, const MatrixXd& states,
                                                    const MatrixXd& previous_actions) {
  const MatrixXd in = detail::stack_inputs(states, previous_actions);
  Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(states.cols());
  for (const auto& h : e.heads) acc += h(in).row(0);
  acc /= static_cast<double>(e.size());
  for (Eigen::Index j = 0; j < acc.size(); ++j) acc(j) = e.stats.denormalize_value(acc(j));
  return acc;
}

// ------------------------------------------------------------------ training

struct SupervisedSchedule {
  int steps = 5000;
  int batch = 32;
  nn::AdamConfig adam{};
  double divergence_factor = 1e3;
  std::uint64_t seed = 0;
  int log_every = 500;
};

struct SupervisedRecord {
  int step;
  int head;
  double loss;
};

namespace detail {

template <class Target>
void train_mse(HistoryEnsemble& e, const data::TrainingSet& ts, const std::vector<data::SampleRef>& samples,
               Target&& target, const SupervisedSchedule& sch, std::vector<SupervisedRecord>* log) {
  if (sch.steps <= 0) return;
  if (samples.empty()) throw ContractError(e.kind + ": no training samples");
  if (ts.n_c() != e.n_c) throw ConfigError(e.kind + ": training set n_c differs from the ensemble");
  const int out = e.output_dim();
  for (int k = 0; k < e.size(); ++k) {
    auto& net = e.heads[k];
    Rng order(nn::derive_seed(sch.seed, 0x0DE5));
    Rng noise(nn::derive_seed(e.seeds[k], 0xD0));
    std::deque<double> window;
    double initial = -1.0;
    for (int step = 1; step <= sch.steps; ++step) {
      MatrixXd in(e.state_dim() + e.n_c * data::kActionDim, sch.batch);
      MatrixXd y(out, sch.batch);
      for (int j = 0; j < sch.batch; ++j) {
        const auto& r = samples[order.index(samples.size())];
        in.col(j) << ts.state(r.episode, r.t), ts.previous_actions(r.episode, r.t);
        y.col(j) = target(r);
      }
      nn::ForwardTape tape;
      const MatrixXd pred = net.train_forward(in, noise, tape);
      const MatrixXd err = pred - y;
      const double loss = err.squaredNorm() / sch.batch;
      if (!std::isfinite(loss)) throw NumericError(e.kind + ": non-finite loss at step " + std::to_string(step));
      auto back = net.backward(tape, (2.0 / sch.batch) * err);
      nn::adam_step(net.params, back.params, sch.adam);

      window.push_back(loss);
      if (window.size() > 50) window.pop_front();
      const double avg = std::accumulate(window.begin(), window.end(), 0.0) / window.size();
      if (step == std::min(50, sch.steps)) initial = avg;
      if (initial > 0.0 && step > 50 && avg > sch.divergence_factor * initial)
        throw DivergenceError(e.kind + " head " + std::to_string(k) + " diverged at step " + std::to_string(step));
      if (log && (step % std::max(1, sch.log_every) == 0 || step == sch.steps)) log->push_back({step, k, loss});
    }
  }
}

}  // namespace detail

/// Behaviour cloning: per-head MSE between logged and predicted action.
inline BCPolicyEnsemble train_bc(BCPolicyEnsemble e, const data::TrainingSet& ts, const SupervisedSchedule& sch,
                                 std::vector<SupervisedRecord>* log = nullptr) {
  detail::train_mse(
      e, ts, ts.action_samples(), [&](const data::SampleRef& r) { return ts.action(r.episode, r.t); }, sch, log);
  e.metadata["steps"] = sch.steps;
  return e;
}

/// Truncated value regression onto R_H (windows crossing the episode end are
/// excluded by the training set).
inline ValueEnsemble train_value(ValueEnsemble e, const data::TrainingSet& ts, const SupervisedSchedule& sch,
                                 std::vector<SupervisedRecord>* log = nullptr) {
  detail::train_mse(
      e, ts, ts.value_samples(),
      [&](const data::SampleRef& r) { return VectorXd::Constant(1, *ts.value(r.episode, r.t)); }, sch, log);
  e.metadata["steps"] = sch.steps;
  return e;
}

// ---------------------------------------------------------------- checkpoint

inline json ensemble_to_json(const HistoryEnsemble& e) {
  json heads = json::array();
  for (const auto& h : e.heads) heads.push_back(nn::network_to_json(h));
  return {{"kind", e.kind},     {"version", nn::kCheckpointVersion}, {"n_c", e.n_c},
          {"seeds", e.seeds},   {"norm", data::norm_stats_to_json(e.stats)},
          {"metadata", e.metadata}, {"heads", heads}};
}

template <class Ensemble>
Ensemble ensemble_from_json(const json& j, const std::string& expected_kind) {
  if (j.value("kind", "") != expected_kind) throw ParseError("checkpoint is not a " + expected_kind);
  if (j.at("version").get<int>() != nn::kCheckpointVersion) throw ParseError("unsupported checkpoint version");
  Ensemble e;
  e.kind = expected_kind;
  e.n_c = j.at("n_c");
  e.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  e.stats = data::norm_stats_from_json(j.at("norm"));
  e.metadata = j.at("metadata");
  for (const auto& h : j.at("heads")) e.heads.push_back(nn::network_from_json(h));
  if (e.heads.empty()) throw ParseError(expected_kind + " checkpoint has no heads");
  return e;
}

inline BCPolicyEnsemble bc_from_json(const json& j) { return ensemble_from_json<BCPolicyEnsemble>(j, "bc_policy"); }
inline ValueEnsemble value_from_json(const json& j) { return ensemble_from_json<ValueEnsemble>(j, "value_function"); }

}  // namespace umbrella::policy
