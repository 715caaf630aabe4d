#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "umbrella/nn/mlp.hpp"

namespace umbrella::nn {

using json = nlohmann::json;

inline constexpr int kCheckpointVersion = 1;

inline json spec_to_json(const NetworkSpec& s) {
  json acts = json::array();
  for (auto a : s.activations) acts.push_back(to_string(a));
  return {{"layer_widths", s.layer_widths}, {"activations", acts}, {"dropout_rate", s.dropout_rate}};
}

inline NetworkSpec spec_from_json(const json& j) {
  NetworkSpec s;
  s.layer_widths = j.at("layer_widths").get<std::vector<int>>();
  for (const auto& a : j.at("activations")) s.activations.push_back(activation_from_string(a.get<std::string>()));
  s.dropout_rate = j.at("dropout_rate").get<double>();
  s.validate();
  return s;
}

/// Network checkpoint document: spec, flattened parameters and Adam state.
/// Doubles are written in shortest round-trip form, so save/load is bit-exact.
inline json network_to_json(const Network& net) {
  return {{"spec", spec_to_json(net.spec)},
          {"params", flatten(net.params.layers)},
          {"adam_m", flatten(net.params.first_moment)},
          {"adam_v", flatten(net.params.second_moment)},
          {"adam_step", net.params.step}};
}

inline Network network_from_json(const json& j) {
  Network net;
  net.spec = spec_from_json(j.at("spec"));
  net.params = zero_parameters(net.spec);
  unflatten(j.at("params").get<std::vector<double>>(), net.params.layers);
  unflatten(j.at("adam_m").get<std::vector<double>>(), net.params.first_moment);
  unflatten(j.at("adam_v").get<std::vector<double>>(), net.params.second_moment);
  net.params.step = j.at("adam_step").get<std::uint64_t>();
  return net;
}

inline void write_json_file(const std::string& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open '" + path + "' for writing");
  out << doc.dump() << '\n';
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace umbrella::nn
