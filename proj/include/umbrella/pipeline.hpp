#pragma once

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "umbrella/data/behavior.hpp"
#include "umbrella/data/training_set.hpp"
#include "umbrella/dynamics/ensemble.hpp"
#include "umbrella/eval/suite.hpp"
#include "umbrella/policy/ensembles.hpp"

namespace umbrella {

/// Everything a run needs besides the models. One flat `key = value` file;
/// unprefixed keys are scenario fields, the rest are grouped by prefix.
struct TrainingConfig {
  int K = 2;
  int n_c = 20;
  int value_horizon = 30;
  std::uint64_t split_seed = 0;
  int hidden = 64;
  int encoding = 64;
  double dropout = 0.1;
  dynamics::LatentConfig latent;
  dynamics::DynamicsSchedule dynamics;
  int bc_steps = 5000;
  int value_steps = 5000;
  int batch = 32;
  double learning_rate = 1e-4;
  double value_dropout = 0.1;

  dynamics::HeadArchitecture head_architecture() const {
    dynamics::HeadArchitecture a;
    a.n_c = n_c;
    a.hidden = hidden;
    a.encoding = encoding;
    a.latent_dim = latent.latent_dim;
    a.dropout = dropout;
    return a;
  }
  policy::PolicyArchitecture policy_architecture() const {
    policy::PolicyArchitecture a;
    a.n_c = n_c;
    a.hidden = {hidden, hidden};
    return a;
  }
  void validate() const {
    if (K < 1) throw ConfigError("train.K must be >= 1");
    if (n_c < 1) throw ConfigError("train.n_c must be >= 1");
    if (value_horizon < 1) throw ConfigError("train.value_horizon must be >= 1");
    if (hidden < 1 || encoding < 1) throw ConfigError("layer widths must be >= 1");
    if (bc_steps < 0 || value_steps < 0 || dynamics.deterministic_steps < 0 || dynamics.stochastic_steps < 0)
      throw ConfigError("step counts must be >= 0");
    if (batch < 1 || dynamics.batch < 1) throw ConfigError("batch must be >= 1");
    if (dynamics.n_p < 1) throw ConfigError("train.n_p must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train.lr must be > 0");
    latent.validate();
  }
};

struct RunConfig {
  sim::ScenarioConfig scenario;
  data::GenerationOptions generation;
  int dataset_episodes = 1200;
  TrainingConfig training;
  planner::PlannerConfig planner;
  int eval_episodes = 200;
  eval::MetricsOptions metrics;
  std::string sweep_parameter = "beta";
  std::vector<double> sweep_values{0.0, 0.1, 0.3, 0.5, 0.7, 0.9};
  int sweep_episodes = 50;
  eval::BenchSpec bench;

  void validate() const {
    scenario.validate();
    generation.mix.validate();
    training.validate();
    if (dataset_episodes < 1) throw ConfigError("gen.episodes must be >= 1");
    if (eval_episodes < 1) throw ConfigError("eval.episodes must be >= 1");
    if (metrics.resamples < 1) throw ConfigError("eval.resamples must be >= 1");
    bench.validate();
  }
};

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    T out;
    if constexpr (std::is_same_v<T, int>) out = std::stoi(v, &used);
    else if constexpr (std::is_same_v<T, std::uint64_t>) out = std::stoull(v, &used);
    else out = std::stod(v, &used);
    if (used != v.size()) throw ParseError("trailing characters");
    return out;
  } catch (const std::exception&) {
    throw ParseError("invalid value '" + v + "' for key '" + key + "'");
  }
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& v) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, sim::detail::trim(item)));
  if (out.empty()) throw ParseError("empty list for key '" + key + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ParseError("invalid value '" + v + "' for key '" + key + "' (expected true/false)");
}

}  // namespace detail

/// Applies one key; unknown keys are a ConfigError.
inline void apply_run_key(RunConfig& c, const std::string& key, const std::string& v) {
  using detail::parse_number;
  if (sim::apply_scenario_key(c.scenario, key, v)) return;
  auto& t = c.training;
  auto& p = c.planner;
  const std::map<std::string, std::function<void()>> table = {
      {"gen.episodes", [&] { c.dataset_episodes = parse_number<int>(key, v); }},
      {"gen.wait_fraction", [&] { c.generation.wait_fraction = parse_number<double>(key, v); }},
      {"gen.wait_steps_max", [&] { c.generation.wait_steps_max = parse_number<int>(key, v); }},
      {"gen.wait_dv", [&] { c.generation.wait_dv = parse_number<double>(key, v); }},
      {"gen.max_rejection_rate", [&] { c.generation.max_rejection_rate = parse_number<double>(key, v); }},
      {"gen.mix",
       [&] {
         const auto w = detail::parse_list<double>(key, v);
         if (w.size() != 3) throw ParseError("gen.mix needs three weights");
         c.generation.mix.weights = {w[0], w[1], w[2]};
       }},
      {"train.K", [&] { t.K = parse_number<int>(key, v); }},
      {"train.n_c", [&] { t.n_c = parse_number<int>(key, v); }},
      {"train.value_horizon", [&] { t.value_horizon = parse_number<int>(key, v); }},
      {"train.split_seed", [&] { t.split_seed = parse_number<std::uint64_t>(key, v); }},
      {"train.hidden", [&] { t.hidden = parse_number<int>(key, v); }},
      {"train.encoding", [&] { t.encoding = parse_number<int>(key, v); }},
      {"train.dropout", [&] { t.dropout = parse_number<double>(key, v); }},
      {"train.latent_dim", [&] { t.latent.latent_dim = parse_number<int>(key, v); }},
      {"train.kl_weight", [&] { t.latent.kl_weight = parse_number<double>(key, v); }},
      {"train.latent_dropout", [&] { t.latent.latent_dropout = parse_number<double>(key, v); }},
      {"train.deterministic_steps", [&] { t.dynamics.deterministic_steps = parse_number<int>(key, v); }},
      {"train.stochastic_steps", [&] { t.dynamics.stochastic_steps = parse_number<int>(key, v); }},
      {"train.n_p", [&] { t.dynamics.n_p = parse_number<int>(key, v); }},
      {"train.bc_steps", [&] { t.bc_steps = parse_number<int>(key, v); }},
      {"train.value_steps", [&] { t.value_steps = parse_number<int>(key, v); }},
      {"train.batch",
       [&] {
         t.batch = parse_number<int>(key, v);
         t.dynamics.batch = t.batch;
       }},
      {"train.lr", [&] { t.learning_rate = parse_number<double>(key, v); }},
      {"train.value_dropout", [&] { t.value_dropout = parse_number<double>(key, v); }},
      {"planner.N", [&] { p.N = parse_number<int>(key, v); }},
      {"planner.H", [&] { p.H = parse_number<int>(key, v); }},
      {"planner.sigma2", [&] { p.sigma2 = parse_number<double>(key, v); }},
      {"planner.beta", [&] { p.beta = parse_number<double>(key, v); }},
      {"planner.kappa", [&] { p.kappa = parse_number<double>(key, v); }},
      {"planner.shift_warm_start", [&] { p.shift_warm_start = detail::parse_bool(key, v); }},
      {"planner.chunk", [&] { p.chunk = parse_number<int>(key, v); }},
      {"planner.max_excluded_fraction", [&] { p.max_excluded_fraction = parse_number<double>(key, v); }},
      {"eval.episodes", [&] { c.eval_episodes = parse_number<int>(key, v); }},
      {"eval.resamples", [&] { c.metrics.resamples = parse_number<int>(key, v); }},
      {"sweep.parameter", [&] { c.sweep_parameter = v; }},
      {"sweep.values", [&] { c.sweep_values = detail::parse_list<double>(key, v); }},
      {"sweep.episodes", [&] { c.sweep_episodes = parse_number<int>(key, v); }},
      {"bench.N", [&] { c.bench.N_grid = detail::parse_list<int>(key, v); }},
      {"bench.K", [&] { c.bench.K_grid = detail::parse_list<int>(key, v); }},
      {"bench.H", [&] { c.bench.H = parse_number<int>(key, v); }},
      {"bench.repeats", [&] { c.bench.repeats = parse_number<int>(key, v); }},
      {"bench.warmup", [&] { c.bench.warmup = parse_number<int>(key, v); }},
  };
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second();
}

inline RunConfig parse_run_config(std::istream& in, const std::string& source = "<config>") {
  RunConfig c;
  for (const auto& [k, v] : sim::parse_key_values(in, source)) {
    try {
      apply_run_key(c, k, v);
    } catch (const Error& e) {
      rethrow_with_context(e, source + ": ");
    }
  }
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  return parse_run_config(in, path);
}

// ----------------------------------------------------------------- training

/// Train split, normalization and windowed views; every model trained on the
/// same dataset and split_seed shares identical statistics.
struct PreparedData {
  std::vector<data::EpisodeRecord> train, validation;
  data::NormStats stats;
  std::unique_ptr<data::TrainingSet> train_set, validation_set;
};

inline PreparedData prepare(const std::vector<data::EpisodeRecord>& episodes, const TrainingConfig& t) {
  if (episodes.empty()) throw ContractError("dataset is empty");
  PreparedData p;
  const auto split = data::split_episodes(episodes.size(), t.split_seed);
  p.train = data::select(episodes, split.train);
  p.validation = data::select(episodes, split.validation);
  if (p.train.empty()) throw ContractError("training split is empty");
  p.stats = data::compute_norm_stats(p.train, t.value_horizon);
  p.train_set = std::make_unique<data::TrainingSet>(p.train, p.stats, t.n_c, t.value_horizon);
  if (!p.validation.empty())
    p.validation_set = std::make_unique<data::TrainingSet>(p.validation, p.stats, t.n_c, t.value_horizon);
  return p;
}

struct TrainedDynamics {
  dynamics::DynamicsEnsemble stochastic;
  dynamics::DynamicsEnsemble deterministic;
  std::vector<dynamics::LossRecord> curves;
};

inline TrainedDynamics train_dynamics_models(const PreparedData& d, const TrainingConfig& t, std::uint64_t seed) {
  auto sch = t.dynamics;
  sch.seed = nn::derive_seed(seed, 1);
  sch.adam.learning_rate = t.learning_rate;
  auto init = dynamics::DynamicsEnsemble::create(t.K, t.head_architecture(), dynamics::HeadMode::deterministic,
                                                 t.latent, d.stats, nn::derive_seed(seed, 0));
  TrainedDynamics out;
  out.stochastic =
      dynamics::train_dynamics(std::move(init), *d.train_set, d.validation_set.get(), sch, &out.curves,
                               &out.deterministic);
  return out;
}

inline policy::BCPolicyEnsemble train_bc_model(const PreparedData& d, const TrainingConfig& t, std::uint64_t seed) {
  policy::SupervisedSchedule s;
  s.steps = t.bc_steps;
  s.batch = t.batch;
  s.adam.learning_rate = t.learning_rate;
  s.seed = nn::derive_seed(seed, 1);
  return policy::train_bc(policy::make_bc_ensemble(t.K, t.policy_architecture(), d.stats, nn::derive_seed(seed, 0)),
                          *d.train_set, s);
}

inline policy::ValueEnsemble train_value_model(const PreparedData& d, const TrainingConfig& t, std::uint64_t seed) {
  policy::SupervisedSchedule s;
  s.steps = t.value_steps;
  s.batch = t.batch;
  s.adam.learning_rate = t.learning_rate;
  s.seed = nn::derive_seed(seed, 1);
  auto arch = t.policy_architecture();
  arch.dropout = t.value_dropout;
  return policy::train_value(policy::make_value_ensemble(t.K, arch, d.stats, nn::derive_seed(seed, 0)), *d.train_set,
                             s);
}

/// Planner config aligned with the loaded checkpoints (K and n_c are model
/// properties, not tunables).
inline planner::PlannerConfig planner_for(const planner::PlannerConfig& base, const eval::ModelSet& ms) {
  auto pc = base;
  if (ms.stochastic) {
    pc.K = ms.stochastic->size();
    pc.n_c = ms.stochastic->arch().n_c;
  } else if (ms.deterministic) {
    pc.K = ms.deterministic->size();
    pc.n_c = ms.deterministic->arch().n_c;
  } else if (ms.bc) {
    pc.K = ms.bc->size();
    pc.n_c = ms.bc->n_c;
  }
  return pc;
}

}  // namespace umbrella
