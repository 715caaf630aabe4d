#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

#include "umbrella/errors.hpp"
#include "umbrella/nn/rng.hpp"

namespace umbrella::nn {

inline constexpr double kLogStdMin = -7.0;
inline constexpr double kLogStdMax = 2.0;

inline double clamp_log_std(double s) {
  if (std::isnan(s)) throw NumericError("log_std is NaN");
  return std::clamp(s, kLogStdMin, kLogStdMax);
}

struct DiagonalGaussian {
  Eigen::VectorXd mean;
  Eigen::VectorXd log_std;

  static DiagonalGaussian standard(Eigen::Index dim) {
    return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Zero(dim)};
  }
  Eigen::Index dim() const { return mean.size(); }
};

/// KL(q || p) for diagonal Gaussians, summed over dimensions.
inline double gaussian_kl(const DiagonalGaussian& q, const DiagonalGaussian& p) {
  if (q.mean.size() != p.mean.size() || q.log_std.size() != q.mean.size() || p.log_std.size() != p.mean.size())
    throw DimensionError("gaussian_kl: dimension mismatch");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < q.mean.size(); ++i) {
    const double var_ratio = std::exp(2.0 * (q.log_std(i) - p.log_std(i)));
    const double diff = q.mean(i) - p.mean(i);
    kl += p.log_std(i) - q.log_std(i) + 0.5 * (var_ratio + diff * diff * std::exp(-2.0 * p.log_std(i))) - 0.5;
  }
  return kl;
}

/// Gradient of KL(q || N(0, I)) with respect to q's mean and log_std.
struct KlGradient {
  Eigen::VectorXd mean;
  Eigen::VectorXd log_std;
};

inline KlGradient gaussian_kl_standard_grad(const DiagonalGaussian& q) {
  return {q.mean, (2.0 * q.log_std.array()).exp().matrix() - Eigen::VectorXd::Ones(q.dim())};
}

/// z = mean + exp(clamped log_std) * eps with eps ~ N(0, I). The drawn noise
/// is returned through `eps_out` for callers that backpropagate through z.
inline Eigen::VectorXd reparameterize(const DiagonalGaussian& q, Rng& rng, Eigen::VectorXd* eps_out = nullptr) {
  if (q.log_std.size() != q.mean.size()) throw DimensionError("reparameterize: dimension mismatch");
  Eigen::VectorXd eps(q.dim());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = rng.normal();
  Eigen::VectorXd z(q.dim());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = q.mean(i) + std::exp(clamp_log_std(q.log_std(i))) * eps(i);
  if (eps_out) *eps_out = eps;
  return z;
}

}  // namespace umbrella::nn
