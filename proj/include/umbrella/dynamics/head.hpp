#pragma once

#include <Eigen/Core>

#include <cmath>
#include <string>
#include <vector>

#include "umbrella/errors.hpp"
#include "umbrella/nn/adam.hpp"
#include "umbrella/nn/gaussian.hpp"
#include "umbrella/nn/mlp.hpp"
#include "umbrella/sim/highway.hpp"

namespace umbrella::dynamics {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;
using nn::Rng;

inline constexpr int kObsDim = sim::kObsDim;
inline constexpr int kActionDim = 2;

enum class HeadMode { deterministic, stochastic };

inline const char* to_string(HeadMode m) { return m == HeadMode::deterministic ? "deterministic" : "stochastic"; }
inline HeadMode head_mode_from_string(const std::string& s) {
  if (s == "deterministic") return HeadMode::deterministic;
  if (s == "stochastic") return HeadMode::stochastic;
  throw ParseError("unknown head mode '" + s + "'");
}

/// Prior N(0, I), KL weight and latent-dropout probability.
struct LatentConfig {
  int latent_dim = 8;
  double kl_weight = 0.1;
  double latent_dropout = 0.5;

  void validate() const {
    if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
    if (!(kl_weight > 0.0)) throw ConfigError("kl_weight must be > 0");
    if (!(latent_dropout >= 0.0 && latent_dropout <= 1.0)) throw ConfigError("latent_dropout must lie in [0,1]");
  }
};

struct HeadArchitecture {
  int n_c = 20;
  int hidden = 64;
  int encoding = 64;
  int latent_dim = 8;
  double dropout = 0.1;
  nn::Activation activation = nn::Activation::tanh;

  int state_dim() const { return n_c * kObsDim; }
  bool operator==(const HeadArchitecture&) const = default;
};

/// One CVAE dynamics head. The encoder sees (stacked state, action), the
/// posterior sees (state, next state) and the decoder maps (encoding, z) to the
/// change of the newest observation frame plus the transition reward.
struct DynamicsHead {
  HeadArchitecture arch;
  HeadMode mode = HeadMode::stochastic;
  nn::Network encoder;
  nn::Network posterior;
  nn::Network decoder;

  static DynamicsHead create(const HeadArchitecture& a, HeadMode mode, Rng& rng) {
    if (a.n_c < 1 || a.latent_dim < 1 || a.hidden < 1 || a.encoding < 1) throw ConfigError("invalid head architecture");
    DynamicsHead h;
    h.arch = a;
    h.mode = mode;
    const int S = a.state_dim();
    h.encoder = nn::Network(nn::NetworkSpec::mlp(S + kActionDim, {a.hidden}, a.encoding, a.activation, a.dropout), rng);
    h.posterior = nn::Network(nn::NetworkSpec::mlp(2 * S, {a.hidden}, 2 * a.latent_dim, a.activation, a.dropout), rng);
    h.decoder = nn::Network(
        nn::NetworkSpec::mlp(a.encoding + a.latent_dim, {a.hidden}, kObsDim + 1, a.activation, a.dropout), rng);
    return h;
  }

  int state_dim() const { return arch.state_dim(); }
  int latent_dim() const { return arch.latent_dim; }
};

struct Prediction {
  MatrixXd next_states;  // S x B
  RowVectorXd rewards;   // 1 x B, normalized units
};

/// Drops the oldest frame and appends `newest`.
inline MatrixXd shift_append(const MatrixXd& states, const MatrixXd& newest) {
  const Eigen::Index S = states.rows();
  MatrixXd out(S, states.cols());
  out.topRows(S - kObsDim) = states.bottomRows(S - kObsDim);
  out.bottomRows(kObsDim) = newest;
  return out;
}

/// Batched inference without the finiteness check; columns are samples. In
/// deterministic mode `z` is ignored and may be empty.
inline Prediction predict_unchecked(const DynamicsHead& head, const MatrixXd& states, const MatrixXd& actions,
                                    const MatrixXd& z) {
  const Eigen::Index B = states.cols();
  if (states.rows() != head.state_dim()) throw DimensionError("predict: state has wrong dimension");
  if (actions.rows() != kActionDim || actions.cols() != B) throw DimensionError("predict: action batch mismatch");
  MatrixXd enc_in(head.state_dim() + kActionDim, B);
  enc_in << states, actions;
  const MatrixXd e = head.encoder(enc_in);
  MatrixXd dec_in(head.arch.encoding + head.latent_dim(), B);
  dec_in.topRows(head.arch.encoding) = e;
  if (head.mode == HeadMode::deterministic) {
    dec_in.bottomRows(head.latent_dim()).setZero();
  } else {
    if (z.rows() != head.latent_dim() || z.cols() != B) throw DimensionError("predict: latent batch mismatch");
    dec_in.bottomRows(head.latent_dim()) = z;
  }
  const MatrixXd out = head.decoder(dec_in);
  Prediction p;
  p.next_states = shift_append(states, states.bottomRows(kObsDim) + out.topRows(kObsDim));
  p.rewards = out.row(kObsDim);
  return p;
}

inline Prediction predict_batch(const DynamicsHead& head, const MatrixXd& states, const MatrixXd& actions,
                                const MatrixXd& z) {
  auto p = predict_unchecked(head, states, actions, z);
  if (!p.next_states.allFinite() || !p.rewards.allFinite()) throw NumericError("dynamics prediction is not finite");
  return p;
}

/// Single-sample form of `predict_batch`.
inline std::pair<VectorXd, double> predict_step(const DynamicsHead& head, const VectorXd& state,
                                                const VectorXd& action, const VectorXd& z) {
  if (!state.allFinite() || !action.allFinite() || (head.mode == HeadMode::stochastic && !z.allFinite()))
    throw NumericError("predict_step: non-finite input");
  auto p = predict_batch(head, state, action, head.mode == HeadMode::stochastic ? MatrixXd(z) : MatrixXd());
  return {p.next_states.col(0), p.rewards(0)};
}

// ---------------------------------------------------------------------- loss

/// B training sequences of `steps()` consecutive transitions, normalized.
struct SequenceBatch {
  MatrixXd initial_state;              // S x B, stack at t
  std::vector<MatrixXd> actions;       // a_{t+k}: 2 x B
  std::vector<MatrixXd> next_obs;      // o_{t+k+1}: 22 x B
  std::vector<RowVectorXd> rewards;    // r_{t+k}: 1 x B
  std::vector<MatrixXd> true_states;   // stacks at t+k, k = 0..steps: S x B

  int steps() const { return static_cast<int>(actions.size()); }
  Eigen::Index batch() const { return initial_state.cols(); }
};

enum class LatentSampling {
  latent_dropout,  // training: prior with probability p_x, else reparameterized posterior
  posterior,       // always reparameterized posterior
  posterior_mean,  // z = posterior mean, no noise
};

struct LossBreakdown {
  double total = 0.0;
  double state = 0.0;    // sum over steps of mean ||o - o_hat||^2
  double reward = 0.0;   // sum over steps of mean (r - r_hat)^2
  double kl = 0.0;       // sum over steps of mean KL(q || p)
  double kl_term = 0.0;  // kl_weight * kl
};

struct HeadGradients {
  nn::Gradients encoder, posterior, decoder;
};

struct LossResult {
  LossBreakdown loss;
  HeadGradients grads;
};

namespace detail {

struct StepCache {
  nn::ForwardTape enc, post, dec;
  MatrixXd state_err;     // 22 x B
  RowVectorXd rew_err;    // 1 x B
  MatrixXd mean, log_std, eps;
  MatrixXd in_range;      // 1 where log_std was not clamped
  Eigen::RowVectorXd from_posterior;  // 1 where z came from the posterior
};

}  // namespace detail

/// Unrolled multi-step loss: the head's own predictions are fed forward for
/// every step and per-step losses are summed; gradients flow through the
/// whole chain. The posterior conditions on the true stacked states.
inline LossResult sequence_loss(const DynamicsHead& head, const SequenceBatch& batch, const LatentConfig& latent,
                                Rng& rng, bool train_mode, LatentSampling sampling = LatentSampling::latent_dropout) {
  const int n_p = batch.steps();
  const Eigen::Index B = batch.batch();
  const int S = head.state_dim();
  const int nz = head.latent_dim();
  const int E = head.arch.encoding;
  const bool stochastic = head.mode == HeadMode::stochastic;
  if (n_p < 1 || B < 1) throw ContractError("sequence_loss needs at least one step and one sample");
  if (batch.initial_state.rows() != S) throw DimensionError("sequence batch state dimension mismatch");
  if (static_cast<int>(batch.next_obs.size()) != n_p || static_cast<int>(batch.rewards.size()) != n_p)
    throw ContractError("sequence batch targets shorter than the unroll");
  if (stochastic && static_cast<int>(batch.true_states.size()) != n_p + 1)
    throw ContractError("sequence batch needs n_p + 1 true states for the posterior");

  Rng* r = &rng;
  std::vector<detail::StepCache> cache(n_p);
  LossBreakdown L;
  const double inv_b = 1.0 / static_cast<double>(B);
  MatrixXd state = batch.initial_state;
  for (int k = 0; k < n_p; ++k) {
    auto& c = cache[k];
    MatrixXd enc_in(S + kActionDim, B);
    enc_in << state, batch.actions[k];
    const MatrixXd e = nn::forward_batch(head.encoder.spec, head.encoder.params, enc_in, train_mode, r, &c.enc);

    MatrixXd z = MatrixXd::Zero(nz, B);
    if (stochastic) {
      MatrixXd post_in(2 * S, B);
      post_in << batch.true_states[k], batch.true_states[k + 1];
      const MatrixXd q = nn::forward_batch(head.posterior.spec, head.posterior.params, post_in, train_mode, r, &c.post);
      c.mean = q.topRows(nz);
      c.log_std.resize(nz, B);
      c.in_range.resize(nz, B);
      for (Eigen::Index j = 0; j < B; ++j)
        for (int i = 0; i < nz; ++i) {
          const double raw = q(nz + i, j);
          c.log_std(i, j) = nn::clamp_log_std(raw);
          c.in_range(i, j) = (raw > nn::kLogStdMin && raw < nn::kLogStdMax) ? 1.0 : 0.0;
        }
      c.eps.resize(nz, B);
      c.from_posterior.resize(B);
      for (Eigen::Index j = 0; j < B; ++j) {
        const bool prior = sampling == LatentSampling::latent_dropout && rng.bernoulli(latent.latent_dropout);
        c.from_posterior(j) = prior ? 0.0 : 1.0;
        for (int i = 0; i < nz; ++i) {
          c.eps(i, j) = sampling == LatentSampling::posterior_mean ? 0.0 : rng.normal();
          z(i, j) = prior ? c.eps(i, j) : c.mean(i, j) + std::exp(c.log_std(i, j)) * c.eps(i, j);
        }
        double kl = 0.0;
        for (int i = 0; i < nz; ++i)
          kl += -c.log_std(i, j) + 0.5 * (std::exp(2.0 * c.log_std(i, j)) + c.mean(i, j) * c.mean(i, j)) - 0.5;
        L.kl += kl * inv_b;
      }
    }

    MatrixXd dec_in(E + nz, B);
    dec_in << e, z;
    const MatrixXd out = nn::forward_batch(head.decoder.spec, head.decoder.params, dec_in, train_mode, r, &c.dec);
    const MatrixXd newest = state.bottomRows(kObsDim) + out.topRows(kObsDim);
    c.state_err = newest - batch.next_obs[k];
    c.rew_err = out.row(kObsDim) - batch.rewards[k];
    L.state += c.state_err.squaredNorm() * inv_b;
    L.reward += c.rew_err.squaredNorm() * inv_b;
    state = shift_append(state, newest);
  }
  L.kl_term = stochastic ? latent.kl_weight * L.kl : 0.0;
  L.total = L.state + L.reward + L.kl_term;
  if (!std::isfinite(L.total)) throw NumericError("dynamics loss is not finite");

  LossResult res;
  res.loss = L;
  res.grads.encoder = nn::zero_gradients(head.encoder.params);
  res.grads.posterior = nn::zero_gradients(head.posterior.params);
  res.grads.decoder = nn::zero_gradients(head.decoder.params);

  MatrixXd G = MatrixXd::Zero(S, B);  // dL / d(predicted stack after step k)
  for (int k = n_p - 1; k >= 0; --k) {
    auto& c = cache[k];
    G.bottomRows(kObsDim) += 2.0 * inv_b * c.state_err;
    MatrixXd dec_up(kObsDim + 1, B);
    dec_up.topRows(kObsDim) = G.bottomRows(kObsDim);
    dec_up.row(kObsDim) = 2.0 * inv_b * c.rew_err;
    auto dec_back = nn::backward(head.decoder.spec, head.decoder.params, c.dec, dec_up);
    nn::accumulate(res.grads.decoder, dec_back.params);

    if (stochastic) {
      const MatrixXd dz = dec_back.input.bottomRows(nz);
      const MatrixXd std_dev = c.log_std.array().exp().matrix();
      MatrixXd d_mean = dz.array().rowwise() * c.from_posterior.array();
      MatrixXd d_log = (dz.array() * std_dev.array() * c.eps.array()).rowwise() * c.from_posterior.array();
      const double w = latent.kl_weight * inv_b;
      d_mean += w * c.mean;
      d_log.array() += w * (std_dev.array().square() - 1.0);
      d_log.array() *= c.in_range.array();
      MatrixXd post_up(2 * nz, B);
      post_up << d_mean, d_log;
      auto post_back = nn::backward(head.posterior.spec, head.posterior.params, c.post, post_up);
      nn::accumulate(res.grads.posterior, post_back.params);
    }

    auto enc_back = nn::backward(head.encoder.spec, head.encoder.params, c.enc, dec_back.input.topRows(E));
    nn::accumulate(res.grads.encoder, enc_back.params);

    if (k == 0) break;
    MatrixXd G_prev = enc_back.input.topRows(S);
    G_prev.bottomRows(S - kObsDim) += G.topRows(S - kObsDim);
    G_prev.bottomRows(kObsDim) += G.bottomRows(kObsDim);
    G = std::move(G_prev);
  }
  return res;
}

/// Single-transition ELBO: state MSE + reward MSE + kl_weight * KL.
inline LossResult elbo_loss(const DynamicsHead& head, const SequenceBatch& transitions, const LatentConfig& latent,
                            Rng& rng, bool train_mode) {
  if (head.mode != HeadMode::stochastic) throw ContractError("elbo_loss needs a stochastic head; use mse_loss");
  if (transitions.steps() != 1) throw ContractError("elbo_loss takes single transitions");
  return sequence_loss(head, transitions, latent, rng, train_mode);
}

/// Deterministic-mode loss (no latent, no KL).
inline LossResult mse_loss(const DynamicsHead& head, const SequenceBatch& batch, Rng& rng, bool train_mode) {
  if (head.mode != HeadMode::deterministic) throw ContractError("mse_loss needs a deterministic head");
  return sequence_loss(head, batch, LatentConfig{head.latent_dim(), 1.0, 0.0}, rng, train_mode);
}

inline LossResult unrolled_loss(const DynamicsHead& head, const SequenceBatch& window, int n_p,
                                const LatentConfig& latent, Rng& rng, bool train_mode = true) {
  if (window.steps() < n_p) throw ContractError("window shorter than the unroll length");
  if (n_p < 1) throw ContractError("n_p must be >= 1");
  if (window.steps() == n_p) return sequence_loss(head, window, latent, rng, train_mode);
  SequenceBatch cut;
  cut.initial_state = window.initial_state;
  cut.actions.assign(window.actions.begin(), window.actions.begin() + n_p);
  cut.next_obs.assign(window.next_obs.begin(), window.next_obs.begin() + n_p);
  cut.rewards.assign(window.rewards.begin(), window.rewards.begin() + n_p);
  if (!window.true_states.empty()) cut.true_states.assign(window.true_states.begin(), window.true_states.begin() + n_p + 1);
  return sequence_loss(head, cut, latent, rng, train_mode);
}

/// Draws `count` latent vectors from N(0, I); returned as columns.
inline MatrixXd sample_prior(const LatentConfig& latent, int count, Rng& rng) {
  if (count < 1) throw ContractError("sample_prior needs count >= 1");
  MatrixXd z(latent.latent_dim, count);
  for (int j = 0; j < count; ++j)
    for (int i = 0; i < latent.latent_dim; ++i) z(i, j) = rng.normal();
  return z;
}

}  // namespace umbrella::dynamics
