#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "umbrella/errors.hpp"
#include "umbrella/nn/rng.hpp"

namespace umbrella::nn {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Activation { relu, tanh, linear };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::linear: return "linear";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "linear") return Activation::linear;
  throw ParseError("unknown activation '" + s + "'");
}

/// Topology of a fully connected network. `activations` has one entry per
/// hidden layer; the output layer is always linear.
struct NetworkSpec {
  std::vector<int> layer_widths;
  std::vector<Activation> activations;
  double dropout_rate = 0.0;

  static NetworkSpec mlp(int input, const std::vector<int>& hidden, int output,
                         Activation act = Activation::tanh, double dropout = 0.0) {
    NetworkSpec s;
    s.layer_widths.push_back(input);
    for (int h : hidden) s.layer_widths.push_back(h);
    s.layer_widths.push_back(output);
    s.activations.assign(hidden.size(), act);
    s.dropout_rate = dropout;
    s.validate();
    return s;
  }

  std::size_t layer_count() const { return layer_widths.size() - 1; }
  int input_width() const { return layer_widths.front(); }
  int output_width() const { return layer_widths.back(); }

  void validate() const {
    if (layer_widths.size() < 2) throw ConfigError("NetworkSpec needs at least input and output widths");
    for (int w : layer_widths)
      if (w <= 0) throw ConfigError("NetworkSpec widths must be positive");
    if (activations.size() != layer_widths.size() - 2)
      throw ConfigError("NetworkSpec needs one activation per hidden layer");
    if (!(dropout_rate >= 0.0 && dropout_rate <= 1.0))
      throw ConfigError("dropout_rate must lie in [0,1]");
  }

  bool operator==(const NetworkSpec&) const = default;
};

struct LayerParams {
  MatrixXd weight;  // out x in
  VectorXd bias;
};

using Gradients = std::vector<LayerParams>;

/// Weights, biases and Adam moments of one network.
struct ParameterBundle {
  std::vector<LayerParams> layers;
  std::vector<LayerParams> first_moment;
  std::vector<LayerParams> second_moment;
  std::uint64_t step = 0;

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }
};

inline std::vector<LayerParams> zero_like(const std::vector<LayerParams>& ls) {
  std::vector<LayerParams> out;
  out.reserve(ls.size());
  for (const auto& l : ls)
    out.push_back({MatrixXd::Zero(l.weight.rows(), l.weight.cols()), VectorXd::Zero(l.bias.size())});
  return out;
}

inline ParameterBundle zero_parameters(const NetworkSpec& spec) {
  spec.validate();
  ParameterBundle p;
  for (std::size_t i = 0; i < spec.layer_count(); ++i) {
    const int in = spec.layer_widths[i];
    const int out = spec.layer_widths[i + 1];
    p.layers.push_back({MatrixXd::Zero(out, in), VectorXd::Zero(out)});
  }
  p.first_moment = zero_like(p.layers);
  p.second_moment = zero_like(p.layers);
  return p;
}

/// Glorot-uniform weights, zero biases.
inline ParameterBundle init_parameters(const NetworkSpec& spec, Rng& rng) {
  ParameterBundle p = zero_parameters(spec);
  for (auto& l : p.layers) {
    const double limit = std::sqrt(6.0 / static_cast<double>(l.weight.rows() + l.weight.cols()));
    for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r) l.weight(r, c) = rng.uniform(-limit, limit);
  }
  return p;
}

inline Gradients zero_gradients(const ParameterBundle& p) { return zero_like(p.layers); }

inline void accumulate(Gradients& into, const Gradients& g, double scale = 1.0) {
  if (into.size() != g.size()) throw DimensionError("gradient bundles differ in layer count");
  for (std::size_t i = 0; i < g.size(); ++i) {
    into[i].weight += scale * g[i].weight;
    into[i].bias += scale * g[i].bias;
  }
}

/// Intermediate values of one batched forward pass, consumed by `backward`.
struct ForwardTape {
  std::vector<MatrixXd> layer_inputs;     // input of layer i (after dropout)
  std::vector<MatrixXd> pre_activations;  // W x + b of hidden layers
  std::vector<MatrixXd> masks;            // scaled dropout masks (empty when off)
  Eigen::Index batch = 0;
  bool recorded = false;
};

namespace detail {

inline void activate(Activation a, MatrixXd& m) {
  switch (a) {
    case Activation::relu: m = m.cwiseMax(0.0); break;
    case Activation::tanh: m = m.array().tanh().matrix(); break;
    case Activation::linear: break;
  }
}

inline MatrixXd activation_derivative(Activation a, const MatrixXd& pre) {
  switch (a) {
    case Activation::relu: return (pre.array() > 0.0).cast<double>().matrix();
    case Activation::tanh: return (1.0 - pre.array().tanh().square()).matrix();
    case Activation::linear: return MatrixXd::Ones(pre.rows(), pre.cols());
  }
  return MatrixXd();
}

inline void check_shapes(const NetworkSpec& spec, const ParameterBundle& params) {
  if (params.layers.size() != spec.layer_count())
    throw DimensionError("parameter bundle has " + std::to_string(params.layers.size()) +
                         " layers, spec has " + std::to_string(spec.layer_count()));
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& l = params.layers[i];
    if (l.weight.cols() != spec.layer_widths[i] || l.weight.rows() != spec.layer_widths[i + 1] ||
        l.bias.size() != spec.layer_widths[i + 1])
      throw DimensionError("layer " + std::to_string(i) + " shape does not match spec");
  }
}

}  // namespace detail

/// Batched forward pass; columns of `input` are samples. Dropout is applied to
/// hidden activations only when `train_mode` is set and requires `rng`.
inline MatrixXd forward_batch(const NetworkSpec& spec, const ParameterBundle& params,
                              const MatrixXd& input, bool train_mode, Rng* rng,
                              ForwardTape* tape = nullptr) {
  detail::check_shapes(spec, params);
  if (input.rows() != spec.input_width())
    throw DimensionError("network input has " + std::to_string(input.rows()) + " rows, expected " +
                         std::to_string(spec.input_width()));
  const bool use_dropout = train_mode && spec.dropout_rate > 0.0;
  if (use_dropout && rng == nullptr) throw StateError("dropout in train mode needs an rng");
  if (tape) {
    tape->layer_inputs.clear();
    tape->pre_activations.clear();
    tape->masks.clear();
    tape->batch = input.cols();
    tape->recorded = true;
  }

  MatrixXd x = input;
  const std::size_t L = spec.layer_count();
  for (std::size_t i = 0; i < L; ++i) {
    const auto& layer = params.layers[i];
    MatrixXd pre = layer.weight * x;
    pre.colwise() += layer.bias;
    if (tape) tape->layer_inputs.push_back(std::move(x));
    if (i + 1 == L) return pre;

    MatrixXd h = pre;
    detail::activate(spec.activations[i], h);
    if (tape) tape->pre_activations.push_back(std::move(pre));
    if (use_dropout) {
      const double keep = 1.0 - spec.dropout_rate;
      MatrixXd mask(h.rows(), h.cols());
      for (Eigen::Index c = 0; c < mask.cols(); ++c)
        for (Eigen::Index r = 0; r < mask.rows(); ++r)
          mask(r, c) = (keep > 0.0 && rng->uniform() < keep) ? 1.0 / keep : 0.0;
      h.array() *= mask.array();
      if (tape) tape->masks.push_back(std::move(mask));
    }
    x = std::move(h);
  }
  return x;
}

inline VectorXd forward(const NetworkSpec& spec, const ParameterBundle& params, const VectorXd& input,
                        bool train_mode, Rng& rng) {
  return forward_batch(spec, params, input, train_mode, &rng);
}

/// Inference-mode single-sample evaluation.
inline VectorXd evaluate(const NetworkSpec& spec, const ParameterBundle& params, const VectorXd& input) {
  return forward_batch(spec, params, input, false, nullptr);
}

struct BackwardResult {
  Gradients params;
  MatrixXd input;  // dLoss/dInput, same shape as the forward input
};

/// Reverse pass for the forward pass recorded in `tape`. Parameter gradients
/// are summed over the batch.
inline BackwardResult backward(const NetworkSpec& spec, const ParameterBundle& params,
                               const ForwardTape& tape, const MatrixXd& upstream) {
  if (!tape.recorded || tape.layer_inputs.size() != spec.layer_count())
    throw StateError("backward called without a matching forward pass");
  if (upstream.rows() != spec.output_width() || upstream.cols() != tape.batch)
    throw DimensionError("upstream gradient shape does not match recorded output");
  detail::check_shapes(spec, params);

  const std::size_t L = spec.layer_count();
  BackwardResult out;
  out.params.resize(L);
  MatrixXd delta = upstream;
  for (std::size_t k = L; k-- > 0;) {
    if (k + 1 < L) {
      if (!tape.masks.empty()) delta.array() *= tape.masks[k].array();
      delta.array() *= detail::activation_derivative(spec.activations[k], tape.pre_activations[k]).array();
    }
    out.params[k].weight = delta * tape.layer_inputs[k].transpose();
    out.params[k].bias = delta.rowwise().sum();
    delta = params.layers[k].weight.transpose() * delta;
  }
  out.input = std::move(delta);
  return out;
}

/// A network topology together with its parameters.
struct Network {
  NetworkSpec spec;
  ParameterBundle params;

  Network() = default;
  Network(NetworkSpec s, Rng& rng) : spec(std::move(s)), params(init_parameters(spec, rng)) {}

  MatrixXd operator()(const MatrixXd& input) const { return forward_batch(spec, params, input, false, nullptr); }
  MatrixXd train_forward(const MatrixXd& input, Rng& rng, ForwardTape& tape) const {
    return forward_batch(spec, params, input, true, &rng, &tape);
  }
  BackwardResult backward(const ForwardTape& tape, const MatrixXd& upstream) const {
    return nn::backward(spec, params, tape, upstream);
  }
};

/// Flattened parameter view, weights column-major then bias, layer by layer.
inline std::vector<double> flatten(const std::vector<LayerParams>& layers) {
  std::vector<double> out;
  for (const auto& l : layers) {
    out.insert(out.end(), l.weight.data(), l.weight.data() + l.weight.size());
    out.insert(out.end(), l.bias.data(), l.bias.data() + l.bias.size());
  }
  return out;
}

inline void unflatten(const std::vector<double>& flat, std::vector<LayerParams>& layers) {
  std::size_t need = 0;
  for (const auto& l : layers) need += l.weight.size() + l.bias.size();
  if (flat.size() != need)
    throw DimensionError("flat parameter vector has " + std::to_string(flat.size()) + " entries, expected " +
                         std::to_string(need));
  std::size_t pos = 0;
  for (auto& l : layers) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), l.weight.size(), l.weight.data());
    pos += l.weight.size();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), l.bias.size(), l.bias.data());
    pos += l.bias.size();
  }
}

}  // namespace umbrella::nn
