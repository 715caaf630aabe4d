#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "fixtures.hpp"
#include "umbrella/dynamics/ensemble.hpp"

// Reference implementations shared by the unit tests and the acceptance run.
namespace checks {

using namespace umbrella;
using namespace umbrella::dynamics;
using namespace umbrella::planner;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Worst relative error of an MLP's parameter and input gradients against
/// central differences of a squared loss.
inline std::pair<double, double> mlp_gradient_error(std::uint64_t seed) {
  nn::Rng rng(seed);
  const auto act = seed % 2 ? nn::Activation::tanh : nn::Activation::linear;
  nn::Network net(nn::NetworkSpec::mlp(4, {5, 3}, 2, act), rng);
  MatrixXd x(4, 3), target(2, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.normal();
  for (Eigen::Index i = 0; i < target.size(); ++i) target(i) = rng.normal();

  auto loss = [&]() { return 0.5 * (net(x) - target).squaredNorm(); };
  nn::ForwardTape tape;
  const MatrixXd y = nn::forward_batch(net.spec, net.params, x, false, nullptr, &tape);
  const auto back = net.backward(tape, y - target);

  auto flat = nn::flatten(net.params.layers);
  const auto analytic = nn::flatten(back.params);
  const double err = fixtures::max_rel_error(flat, analytic, [&] {
    nn::unflatten(flat, net.params.layers);
    return loss();
  });
  nn::unflatten(flat, net.params.layers);

  std::vector<double> xin(x.data(), x.data() + x.size());
  std::vector<double> gin(back.input.data(), back.input.data() + back.input.size());
  const double err_in = fixtures::max_rel_error(xin, gin, [&] {
    x = Eigen::Map<MatrixXd>(xin.data(), 4, 3);
    return loss();
  });
  return {err, err_in};
}

inline HeadArchitecture tiny_arch(int n_c = 2) {
  HeadArchitecture a;
  a.n_c = n_c;
  a.hidden = 6;
  a.encoding = 5;
  a.latent_dim = 3;
  a.dropout = 0.0;
  return a;
}

inline SequenceBatch random_batch(int S, int B, int steps, Rng& rng) {
  SequenceBatch b;
  auto rnd = [&](int r, int c) {
    MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.normal();
    return m;
  };
  b.initial_state = rnd(S, B);
  for (int k = 0; k < steps; ++k) {
    b.actions.push_back(rnd(kActionDim, B));
    b.next_obs.push_back(rnd(kObsDim, B));
    b.rewards.push_back(rnd(1, B));
  }
  b.true_states.push_back(b.initial_state);
  for (int k = 0; k < steps; ++k) b.true_states.push_back(shift_append(b.true_states.back(), b.next_obs[k]));
  return b;
}

inline std::vector<double> flat_head(const DynamicsHead& h) {
  auto a = nn::flatten(h.encoder.params.layers), b = nn::flatten(h.posterior.params.layers),
       c = nn::flatten(h.decoder.params.layers);
  a.insert(a.end(), b.begin(), b.end());
  a.insert(a.end(), c.begin(), c.end());
  return a;
}

inline std::vector<double> flat_grads(const HeadGradients& g) {
  auto a = nn::flatten(g.encoder), b = nn::flatten(g.posterior), c = nn::flatten(g.decoder);
  a.insert(a.end(), b.begin(), b.end());
  a.insert(a.end(), c.begin(), c.end());
  return a;
}

inline void set_head(DynamicsHead& h, const std::vector<double>& flat) {
  const auto ne = h.encoder.params.size(), np = h.posterior.params.size();
  nn::unflatten({flat.begin(), flat.begin() + ne}, h.encoder.params.layers);
  nn::unflatten({flat.begin() + ne, flat.begin() + ne + np}, h.posterior.params.layers);
  nn::unflatten({flat.begin() + ne + np, flat.end()}, h.decoder.params.layers);
}

inline double gradient_error(DynamicsHead head, const SequenceBatch& batch, const LatentConfig& lat, std::uint64_t seed,
                      bool deterministic) {
  auto eval = [&](const DynamicsHead& h) {
    Rng rng(seed);
    return deterministic ? mse_loss(h, batch, rng, true) : sequence_loss(h, batch, lat, rng, true);
  };
  const auto analytic = flat_grads(eval(head).grads);
  auto params = flat_head(head);
  return fixtures::max_rel_error(params, analytic, [&] {
    set_head(head, params);
    return eval(head).loss.total;
  });
}


inline PlannerConfig small_config(int N, int K, int H, int n_c, PlannerMode mode = PlannerMode::umbrella) {
  PlannerConfig c;
  c.N = N;
  c.K = K;
  c.H = H;
  c.n_c = n_c;
  c.mode = mode;
  c.sigma2 = 0.7;
  c.beta = 0.35;
  c.kappa = 0.8;
  return c;
}

/// One trajectory at a time, written directly from the algorithm with plain
/// vectors and explicit loops.
struct Oracle {
  const fixtures::TinyModels& m;
  PlannerConfig cfg;

  VectorXd stack(const VectorXd& a, const VectorXd& b) const {
    VectorXd x(a.size() + b.size());
    x << a, b;
    return x;
  }

  void push(VectorXd& hist, const VectorXd& a) const {
    VectorXd h(hist.size());
    for (Eigen::Index i = 0; i + 2 < hist.size(); ++i) h(i) = hist(i + 2);
    h(hist.size() - 2) = a(0);
    h(hist.size() - 1) = a(1);
    hist = h;
  }

  MatrixXd latents(std::uint64_t seed) const {
    const int nz = m.dynamics.latent.latent_dim, M = cfg.N / cfg.K;
    MatrixXd z(nz, M);
    nn::Rng rng(nn::derive_seed(seed, 0xFFFF'FFFF'0000'0001ULL));
    for (int j = 0; j < M; ++j)
      for (int i = 0; i < nz; ++i) z(i, j) = rng.normal();
    return z;
  }

  std::pair<MatrixXd, double> trajectory(const PlanInput& in, std::uint64_t seed, int n, const MatrixXd& Z) const {
    const int K = cfg.K, H = cfg.H, M = cfg.N / K, l = n % K;
    const bool stochastic = m.dynamics.mode() == dynamics::HeadMode::stochastic;
    const int nz = m.dynamics.latent.latent_dim;
    const VectorXd z = stochastic ? VectorXd(Z.col(n % M)) : VectorXd::Zero(nz);
    const auto& st = m.dynamics.stats;
    nn::Rng rng(nn::derive_seed(seed, static_cast<std::uint64_t>(n)));
    VectorXd s = in.state, bc_hist = in.previous_actions;
    bc_hist(bc_hist.size() - 2) = in.warm_start(0, 0);
    bc_hist(bc_hist.size() - 1) = in.warm_start(1, 0);
    VectorXd val_hist = bc_hist;
    MatrixXd actions(2, H);
    double R = 0.0;
    for (int j = 0; j < H; ++j) {
      VectorXd a = m.bc.heads[l](stack(s, bc_hist)).col(0);
      a(0) += std::sqrt(cfg.sigma2) * rng.normal();
      a(1) += std::sqrt(cfg.sigma2) * rng.normal();
      const int w = std::min(j + 1, H - 1);
      VectorXd A(2);
      for (int d = 0; d < 2; ++d) A(d) = (1 - cfg.beta) * a(d) + cfg.beta * in.warm_start(d, w);
      actions.col(j) = A;
      double r = 0.0;
      VectorXd next;
      for (int i = 0; i < K; ++i) {
        const auto& h = m.dynamics.heads[i];
        const VectorXd out = h.decoder(stack(h.encoder(stack(s, A)).col(0), z)).col(0);
        r += out(sim::kObsDim) * st.rew_std + st.rew_mean;
        if (i == l) {
          next = s;
          const int S = static_cast<int>(s.size());
          for (int k = 0; k + sim::kObsDim < S; ++k) next(k) = s(k + sim::kObsDim);
          for (int k = 0; k < sim::kObsDim; ++k) next(S - sim::kObsDim + k) = s(S - sim::kObsDim + k) + out(k);
        }
      }
      R += r / K;
      s = next;
      push(bc_hist, a);
      push(val_hist, A);
    }
    double v = 0.0;
    for (const auto& h : m.value.heads) v += h(stack(s, val_hist))(0, 0);
    R += (v / m.value.size()) * st.value_std + st.value_mean;
    return {actions, R};
  }

  MatrixXd plan(const PlanInput& in, std::uint64_t seed, VectorXd* returns = nullptr) const {
    const MatrixXd Z = latents(seed);
    std::vector<MatrixXd> acts;
    VectorXd R(cfg.N);
    for (int n = 0; n < cfg.N; ++n) {
      auto [a, r] = trajectory(in, seed, n, Z);
      acts.push_back(a);
      R(n) = r;
    }
    if (returns) *returns = R;
    std::vector<int> keep;
    if (cfg.mode == PlannerMode::umbrella_p) {
      std::vector<double> sums(cfg.K, 0.0);
      for (int n = 0; n < cfg.N; ++n) sums[n % cfg.K] += R(n);
      const int k = static_cast<int>(std::min_element(sums.begin(), sums.end()) - sums.begin());
      for (int n = k; n < cfg.N; n += cfg.K) keep.push_back(n);
    } else {
      for (int n = 0; n < cfg.N; ++n) keep.push_back(n);
    }
    double rmax = -INFINITY;
    for (int n : keep) rmax = std::max(rmax, R(n));
    MatrixXd T = MatrixXd::Zero(2, cfg.H);
    double total = 0.0;
    for (int n : keep) {
      const double w = std::exp(cfg.kappa * (R(n) - rmax));
      T += w * acts[n];
      total += w;
    }
    return T / total;
  }
};

inline double rel_diff(const MatrixXd& a, const MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

inline TrajectoryBatch crafted_batch(const std::vector<double>& returns, int K) {
  TrajectoryBatch b;
  for (std::size_t n = 0; n < returns.size(); ++n) {
    b.actions.push_back(MatrixXd::Constant(2, 1, static_cast<double>(n)));
    b.head.push_back(static_cast<int>(n) % K);
    b.latent.push_back(0);
    b.valid.push_back(1);
  }
  b.returns = Eigen::Map<const VectorXd>(returns.data(), static_cast<Eigen::Index>(returns.size()));
  return b;
}

}  // namespace checks
