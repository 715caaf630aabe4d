#pragma once

#include <cmath>
#include <string>

#include "umbrella/nn/mlp.hpp"

namespace umbrella::nn {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

namespace detail {

inline void check_finite(const LayerParams& g, std::size_t layer) {
  for (Eigen::Index c = 0; c < g.weight.cols(); ++c)
    for (Eigen::Index r = 0; r < g.weight.rows(); ++r)
      if (!std::isfinite(g.weight(r, c)))
        throw NumericError("non-finite gradient at layers[" + std::to_string(layer) + "].weight(" +
                           std::to_string(r) + "," + std::to_string(c) + ")");
  for (Eigen::Index r = 0; r < g.bias.size(); ++r)
    if (!std::isfinite(g.bias(r)))
      throw NumericError("non-finite gradient at layers[" + std::to_string(layer) + "].bias(" +
                         std::to_string(r) + ")");
}

}  // namespace detail

/// Bias-corrected Adam update in place. All gradients are validated before any
/// parameter is touched, so a numeric error leaves `params` unchanged.
inline void adam_step(ParameterBundle& params, const Gradients& grads, const AdamConfig& cfg) {
  if (grads.size() != params.layers.size()) throw DimensionError("gradient layer count mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].weight.rows() != params.layers[i].weight.rows() ||
        grads[i].weight.cols() != params.layers[i].weight.cols() ||
        grads[i].bias.size() != params.layers[i].bias.size())
      throw DimensionError("gradient shape mismatch at layer " + std::to_string(i));
    detail::check_finite(grads[i], i);
  }
  if (params.first_moment.size() != params.layers.size()) params.first_moment = zero_like(params.layers);
  if (params.second_moment.size() != params.layers.size()) params.second_moment = zero_like(params.layers);

  params.step += 1;
  const double t = static_cast<double>(params.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  auto update = [&](auto& p, auto& m, auto& v, const auto& g) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    p.array() -= cfg.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.epsilon);
  };
  for (std::size_t i = 0; i < grads.size(); ++i) {
    update(params.layers[i].weight, params.first_moment[i].weight, params.second_moment[i].weight,
           grads[i].weight);
    update(params.layers[i].bias, params.first_moment[i].bias, params.second_moment[i].bias, grads[i].bias);
  }
}

}  // namespace umbrella::nn
