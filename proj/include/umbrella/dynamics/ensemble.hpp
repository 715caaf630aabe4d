#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "umbrella/data/training_set.hpp"
#include "umbrella/dynamics/head.hpp"
#include "umbrella/nn/checkpoint.hpp"

namespace umbrella::dynamics {

using json = nlohmann::json;

/// K heads with shared architecture and dataset; heads differ only by seed.
struct DynamicsEnsemble {
  std::vector<DynamicsHead> heads;
  LatentConfig latent;
  data::NormStats stats;
  std::vector<std::uint64_t> seeds;
  json metadata = json::object();

  static DynamicsEnsemble create(int K, const HeadArchitecture& arch, HeadMode mode, const LatentConfig& latent,
                                 const data::NormStats& stats, std::uint64_t seed) {
    if (K < 1) throw ConfigError("ensemble size must be >= 1");
    latent.validate();
    if (arch.latent_dim != latent.latent_dim) throw ConfigError("architecture and latent config disagree on n_z");
    DynamicsEnsemble ens;
    ens.latent = latent;
    ens.stats = stats;
    for (int k = 0; k < K; ++k) {
      const std::uint64_t s = nn::derive_seed(seed, static_cast<std::uint64_t>(k));
      Rng rng(s);
      ens.heads.push_back(DynamicsHead::create(arch, mode, rng));
      ens.seeds.push_back(s);
    }
    return ens;
  }

  int size() const { return static_cast<int>(heads.size()); }
  const HeadArchitecture& arch() const { return heads.front().arch; }
  HeadMode mode() const { return heads.front().mode; }
  void set_mode(HeadMode m) {
    for (auto& h : heads) h.mode = m;
  }
};

struct DynamicsSchedule {
  int deterministic_steps = 5000;
  int stochastic_steps = 5000;
  int batch = 32;
  int n_p = 5;
  nn::AdamConfig adam{};
  int validate_every = 500;
  int validation_samples = 256;
  double divergence_factor = 1e3;
  std::uint64_t seed = 0;
};

struct LossRecord {
  int step = 0;
  std::string phase;
  int head = 0;
  double train = 0.0;
  double val = std::nan("");
  double state = 0.0;
  double reward = 0.0;
  double kl = 0.0;
};

inline std::string loss_curves_csv(const std::vector<LossRecord>& rows) {
  std::string out = "step,phase,head,train,val,state,reward,kl\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%s,%d,%.10g,%.10g,%.10g,%.10g,%.10g\n", r.step, r.phase.c_str(), r.head, r.train,
                  r.val, r.state, r.reward, r.kl);
    out += buf;
  }
  return out;
}

inline SequenceBatch make_sequence_batch(const data::TrainingSet& ts, const std::vector<data::SampleRef>& refs,
                                         int n_p) {
  const auto B = static_cast<Eigen::Index>(refs.size());
  SequenceBatch b;
  b.initial_state.resize(ts.state_dim(), B);
  b.actions.assign(n_p, MatrixXd(kActionDim, B));
  b.next_obs.assign(n_p, MatrixXd(kObsDim, B));
  b.rewards.assign(n_p, RowVectorXd(B));
  b.true_states.assign(n_p + 1, MatrixXd(ts.state_dim(), B));
  for (Eigen::Index j = 0; j < B; ++j) {
    const auto& r = refs[j];
    b.initial_state.col(j) = ts.state(r.episode, r.t);
    for (int k = 0; k < n_p; ++k) {
      b.actions[k].col(j) = ts.action(r.episode, r.t + k);
      b.next_obs[k].col(j) = ts.observation(r.episode, r.t + k + 1);
      b.rewards[k](j) = ts.reward(r.episode, r.t + k);
    }
    for (int k = 0; k <= n_p; ++k) b.true_states[k].col(j) = ts.state(r.episode, r.t + k);
  }
  return b;
}

namespace detail {

inline void apply(DynamicsHead& h, const HeadGradients& g, const nn::AdamConfig& adam) {
  nn::adam_step(h.encoder.params, g.encoder, adam);
  nn::adam_step(h.decoder.params, g.decoder, adam);
  if (h.mode == HeadMode::stochastic) nn::adam_step(h.posterior.params, g.posterior, adam);
}

inline double validation_loss(const DynamicsHead& h, const LatentConfig& latent, const SequenceBatch& val) {
  Rng unused(0);
  const auto r = sequence_loss(h, val, latent, unused, false, LatentSampling::posterior_mean);
  return r.loss.state + r.loss.reward;
}

}  // namespace detail

/// Trains every head for `steps` Adam steps in `mode`. All heads see the same
/// minibatch sequence; dropout and latent draws use per-head streams.
inline void train_phase(DynamicsEnsemble& ens, const data::TrainingSet& train, const data::TrainingSet* val, int steps,
                        HeadMode mode, const DynamicsSchedule& sch, std::vector<LossRecord>* curves,
                        std::uint64_t phase_tag) {
  if (steps <= 0) return;
  const auto samples = train.transition_samples(sch.n_p);
  if (samples.empty()) throw ContractError("no training windows long enough for the unroll");
  SequenceBatch val_batch;
  bool have_val = false;
  if (val) {
    auto vs = val->transition_samples(1);
    if (!vs.empty()) {
      Rng pick(nn::derive_seed(sch.seed, 0x7A1));
      std::vector<data::SampleRef> chosen;
      for (int i = 0; i < sch.validation_samples; ++i) chosen.push_back(vs[pick.index(vs.size())]);
      val_batch = make_sequence_batch(*val, chosen, 1);
      have_val = true;
    }
  }
  const char* phase = to_string(mode);
  for (int k = 0; k < ens.size(); ++k) {
    auto& head = ens.heads[k];
    head.mode = mode;
    Rng order(nn::derive_seed(sch.seed, 0xDA7A00 + phase_tag));
    Rng noise(nn::derive_seed(ens.seeds[k], 0x0150 + phase_tag));
    std::deque<double> window;
    double initial = -1.0;
    for (int step = 1; step <= steps; ++step) {
      std::vector<data::SampleRef> refs(sch.batch);
      for (auto& r : refs) r = samples[order.index(samples.size())];
      const auto batch = make_sequence_batch(train, refs, sch.n_p);
      const auto res = sequence_loss(head, batch, ens.latent, noise, true);
      detail::apply(head, res.grads, sch.adam);

      window.push_back(res.loss.total);
      if (window.size() > 50) window.pop_front();
      const double avg = std::accumulate(window.begin(), window.end(), 0.0) / window.size();
      if (step == std::min(50, steps)) initial = avg;
      if (initial > 0.0 && step > 50 && avg > sch.divergence_factor * initial)
        throw DivergenceError("dynamics head " + std::to_string(k) + " diverged in " + phase + " phase at step " +
                              std::to_string(step) + ": loss " + std::to_string(avg) + " vs initial " +
                              std::to_string(initial));
      const bool log = step % std::max(1, sch.validate_every) == 0 || step == steps;
      if (curves && log) {
        LossRecord rec{step, phase, k, res.loss.total, std::nan(""), res.loss.state, res.loss.reward, res.loss.kl};
        if (have_val) rec.val = detail::validation_loss(head, ens.latent, val_batch);
        curves->push_back(rec);
      }
    }
  }
}

/// Staged training: deterministic phase, then stochastic phase with latent
/// dropout. When `deterministic_out` is given it receives a copy of the
/// ensemble after phase one, trained deterministically for the phase-two
/// budget as well (the latent-free baseline model).
inline DynamicsEnsemble train_dynamics(DynamicsEnsemble ens, const data::TrainingSet& train,
                                       const data::TrainingSet* val, const DynamicsSchedule& sch,
                                       std::vector<LossRecord>* curves = nullptr,
                                       DynamicsEnsemble* deterministic_out = nullptr) {
  const HeadMode initial_mode = ens.mode();
  train_phase(ens, train, val, sch.deterministic_steps, HeadMode::deterministic, sch, curves, 1);
  if (deterministic_out) {
    *deterministic_out = ens;
    train_phase(*deterministic_out, train, val, sch.stochastic_steps, HeadMode::deterministic, sch, nullptr, 3);
    deterministic_out->set_mode(HeadMode::deterministic);
    deterministic_out->metadata["training_steps"] = sch.deterministic_steps + sch.stochastic_steps;
  }
  train_phase(ens, train, val, sch.stochastic_steps, HeadMode::stochastic, sch, curves, 2);
  if (sch.deterministic_steps + sch.stochastic_steps == 0) ens.set_mode(initial_mode);
  else ens.set_mode(sch.stochastic_steps > 0 ? HeadMode::stochastic : HeadMode::deterministic);
  ens.metadata["deterministic_steps"] = sch.deterministic_steps;
  ens.metadata["stochastic_steps"] = sch.stochastic_steps;
  return ens;
}

// ------------------------------------------------------------------ checkpoint

inline json dynamics_to_json(const DynamicsEnsemble& ens) {
  const auto& a = ens.arch();
  json heads = json::array();
  for (const auto& h : ens.heads)
    heads.push_back({{"encoder", nn::network_to_json(h.encoder)},
                     {"posterior", nn::network_to_json(h.posterior)},
                     {"decoder", nn::network_to_json(h.decoder)}});
  return {{"kind", "dynamics_ensemble"},
          {"version", nn::kCheckpointVersion},
          {"mode", to_string(ens.mode())},
          {"architecture",
           {{"n_c", a.n_c},
            {"hidden", a.hidden},
            {"encoding", a.encoding},
            {"latent_dim", a.latent_dim},
            {"dropout", a.dropout},
            {"activation", nn::to_string(a.activation)}}},
          {"latent", {{"latent_dim", ens.latent.latent_dim}, {"kl_weight", ens.latent.kl_weight}, {"latent_dropout", ens.latent.latent_dropout}}},
          {"norm", data::norm_stats_to_json(ens.stats)},
          {"seeds", ens.seeds},
          {"metadata", ens.metadata},
          {"heads", heads}};
}

inline DynamicsEnsemble dynamics_from_json(const json& j) {
  if (j.value("kind", "") != "dynamics_ensemble") throw ParseError("not a dynamics ensemble checkpoint");
  if (j.at("version").get<int>() != nn::kCheckpointVersion) throw ParseError("unsupported checkpoint version");
  DynamicsEnsemble ens;
  const auto& ja = j.at("architecture");
  HeadArchitecture a;
  a.n_c = ja.at("n_c");
  a.hidden = ja.at("hidden");
  a.encoding = ja.at("encoding");
  a.latent_dim = ja.at("latent_dim");
  a.dropout = ja.at("dropout");
  a.activation = nn::activation_from_string(ja.at("activation"));
  const auto& jl = j.at("latent");
  ens.latent = {jl.at("latent_dim"), jl.at("kl_weight"), jl.at("latent_dropout")};
  ens.stats = data::norm_stats_from_json(j.at("norm"));
  ens.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  ens.metadata = j.at("metadata");
  const HeadMode mode = head_mode_from_string(j.at("mode"));
  for (const auto& jh : j.at("heads")) {
    DynamicsHead h;
    h.arch = a;
    h.mode = mode;
    h.encoder = nn::network_from_json(jh.at("encoder"));
    h.posterior = nn::network_from_json(jh.at("posterior"));
    h.decoder = nn::network_from_json(jh.at("decoder"));
    ens.heads.push_back(std::move(h));
  }
  if (ens.heads.empty()) throw ParseError("dynamics checkpoint has no heads");
  return ens;
}

}  // namespace umbrella::dynamics
