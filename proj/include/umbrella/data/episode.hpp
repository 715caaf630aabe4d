#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "umbrella/errors.hpp"
#include "umbrella/sim/highway.hpp"

namespace umbrella::data {

using sim::EgoAction;
using sim::Observation;
using sim::RewardComponents;

inline constexpr int kDatasetVersion = 1;
inline constexpr int kRetroLabelSpan = 10;  // collision step plus the 9 before it

/// One logged episode. `obs[t]` is the observation the action `act[t]` was
/// taken from and `rew[t]` the reward of that transition.
struct EpisodeRecord {
  std::uint64_t seed = 0;
  std::string policy_tag;
  std::optional<int> t_coll;
  std::vector<Observation> obs;
  std::vector<EgoAction> act;
  std::vector<RewardComponents> rew;
  std::vector<bool> done;

  std::size_t size() const { return obs.size(); }

  void check_lengths() const {
    if (act.size() != obs.size() || rew.size() != obs.size() || done.size() != obs.size())
      throw ContractError("episode sequences differ in length");
  }

  double reward_sum() const {
    double s = 0.0;
    for (const auto& r : rew) s += r.total;
    return s;
  }

  bool operator==(const EpisodeRecord&) const = default;
};

/// Collision reward of step `t` for a collision at `t_coll`: linear ramp from
/// -0.2 nine steps before to -2 at the collision step, zero elsewhere.
inline double retro_collision_reward(int t, int t_coll) {
  if (t > t_coll || t < t_coll - (kRetroLabelSpan - 1)) return 0.0;
  return -2.0 + 0.2 * (t_coll - t);
}

/// Rewrites r_coll of every step from the collision time and recomputes the
/// totals with the scenario weights. Collisions earlier than step 9 label
/// only the existing prefix.
inline EpisodeRecord retro_label_collision(EpisodeRecord ep, const sim::ScenarioConfig& cfg) {
  ep.check_lengths();
  if (!ep.t_coll) throw ContractError("retro_label_collision: episode has no collision time");
  const int tc = *ep.t_coll;
  if (tc < 0 || tc >= static_cast<int>(ep.size())) throw ContractError("t_coll outside the episode");
  for (int t = 0; t < static_cast<int>(ep.size()); ++t) {
    auto& r = ep.rew[t];
    r.coll = retro_collision_reward(t, tc);
    r.total = sim::combine_reward(cfg, r.prog, r.lane, r.coll);
  }
  return ep;
}

// ------------------------------------------------------------------ JSON Lines

using json = nlohmann::json;

inline json episode_to_json(const EpisodeRecord& ep) {
  ep.check_lengths();
  json obs = json::array(), act = json::array(), rew = json::array(), done = json::array();
  for (std::size_t t = 0; t < ep.size(); ++t) {
    obs.push_back(std::vector<double>(ep.obs[t].data(), ep.obs[t].data() + sim::kObsDim));
    act.push_back({ep.act[t].delta_v, ep.act[t].delta_delta});
    rew.push_back({ep.rew[t].prog, ep.rew[t].lane, ep.rew[t].coll, ep.rew[t].total});
    done.push_back(static_cast<bool>(ep.done[t]));
  }
  json j;
  j["version"] = kDatasetVersion;
  j["seed"] = ep.seed;
  j["policy_tag"] = ep.policy_tag;
  j["t_coll"] = ep.t_coll ? json(*ep.t_coll) : json(nullptr);
  j["obs"] = std::move(obs);
  j["act"] = std::move(act);
  j["rew_components"] = std::move(rew);
  j["done"] = std::move(done);
  return j;
}

inline EpisodeRecord episode_from_json(const json& j) {
  if (j.at("version").get<int>() != kDatasetVersion)
    throw ParseError("dataset version " + j.at("version").dump() + " is not supported");
  EpisodeRecord ep;
  ep.seed = j.at("seed").get<std::uint64_t>();
  ep.policy_tag = j.at("policy_tag").get<std::string>();
  if (!j.at("t_coll").is_null()) ep.t_coll = j.at("t_coll").get<int>();
  for (const auto& o : j.at("obs")) {
    const auto v = o.get<std::vector<double>>();
    if (v.size() != sim::kObsDim) throw ParseError("observation has " + std::to_string(v.size()) + " entries");
    ep.obs.push_back(Eigen::Map<const Observation>(v.data()));
  }
  for (const auto& a : j.at("act")) {
    const auto v = a.get<std::vector<double>>();
    if (v.size() != 2) throw ParseError("action must have 2 entries");
    ep.act.push_back({v[0], v[1]});
  }
  for (const auto& r : j.at("rew_components")) {
    const auto v = r.get<std::vector<double>>();
    if (v.size() != 4) throw ParseError("reward components must have 4 entries");
    ep.rew.push_back({v[0], v[1], v[2], v[3]});
  }
  for (const auto& d : j.at("done")) ep.done.push_back(d.get<bool>());
  try {
    ep.check_lengths();
  } catch (const ContractError& e) {
    throw ParseError(e.what());
  }
  return ep;
}

inline json dataset_header(std::size_t count) {
  return {{"format", "umbrella-dataset"}, {"version", kDatasetVersion}, {"episodes", count}};
}

inline void write_dataset(std::ostream& out, const std::vector<EpisodeRecord>& episodes) {
  out << dataset_header(episodes.size()).dump() << '\n';
  for (const auto& ep : episodes) out << episode_to_json(ep).dump() << '\n';
}

inline std::vector<EpisodeRecord> read_dataset(std::istream& in, const std::string& source = "<dataset>") {
  std::vector<EpisodeRecord> episodes;
  std::string line;
  int lineno = 0;
  bool header = false;
  std::size_t declared = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (!header) {
        if (j.value("format", "") != "umbrella-dataset") throw ParseError("missing dataset header");
        if (j.at("version").get<int>() != kDatasetVersion) throw ParseError("unsupported dataset version");
        declared = j.at("episodes").get<std::size_t>();
        header = true;
        continue;
      }
      episodes.push_back(episode_from_json(j));
    } catch (const ParseError& e) {
      throw ParseError(source + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const json::exception& e) {
      throw ParseError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!header) throw ParseError(source + ": empty file, expected a header line");
  if (declared != episodes.size())
    throw ParseError(source + ": header declares " + std::to_string(declared) + " episodes, found " +
                     std::to_string(episodes.size()));
  return episodes;
}

inline void save_dataset(const std::string& path, const std::vector<EpisodeRecord>& episodes) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open '" + path + "' for writing");
  write_dataset(out, episodes);
}

inline std::vector<EpisodeRecord> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset '" + path + "'");
  return read_dataset(in, path);
}

}  // namespace umbrella::data
