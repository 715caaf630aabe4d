#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "umbrella/errors.hpp"

namespace umbrella::sim {

enum class Mode { keep = 0, cut_in = 1, brake = 2 };
inline constexpr int kModeCount = 3;

using TransitionMatrix = std::array<std::array<double, kModeCount>, kModeCount>;

/// Scenario parameters of the highway simulator. Every field has a default;
/// `load_scenario_config` overrides them from a `key = value` file.
struct ScenarioConfig {
  // road
  int lane_count = 3;
  double lane_width = 3.7;
  double dt = 0.1;
  int horizon_steps = 100;
  // vehicles
  double vehicle_length = 4.5;
  double vehicle_width = 1.8;
  double v_max = 15.0;
  double v_limit = 13.0;
  double e_goal = 10000.0;
  bool success_requires_goal = false;
  // ego spawn
  int ego_lane = 1;  // -1: random lane
  double ego_speed_min = 9.0;
  double ego_speed_max = 12.0;
  // other agents
  int agent_count = 8;
  double spawn_range = 60.0;  // others spawn with |x - x_ego| <= spawn_range
  double spawn_gap = 6.0;     // minimal bumper gap at spawn
  double other_speed_min = 8.0;
  double other_speed_max = 13.0;
  // mode transitions (off-diagonal; the diagonal is the remainder)
  double p_keep_cut_in = 0.01;
  double p_keep_brake = 0.004;
  double p_cut_in_keep = 0.03;
  double p_cut_in_brake = 0.0;
  double p_brake_keep = 0.05;
  double p_brake_cut_in = 0.0;
  int cut_in_steps = 10;
  double brake_decel = 2.0;
  // longitudinal following of other agents (IDM)
  double idm_accel = 1.5;
  double idm_decel = 2.0;
  double idm_time_gap = 1.2;
  double idm_min_gap = 2.0;
  // ego action bounds, per step
  double dv_min = -0.6;
  double dv_max = 0.4;
  double dd_max = 0.3;
  // reward
  double gamma = 0.99;
  double w_prog = 1.0;
  double w_lane = 0.1;
  double w_coll = 1.0;
  double collision_penalty = -2.0;
  std::uint64_t seed = 0;

  double road_width() const { return lane_count * lane_width; }
  double lane_center(int lane) const { return (lane + 0.5) * lane_width; }
  int lane_of(double y) const {
    int l = static_cast<int>(std::floor(y / lane_width));
    return l < 0 ? 0 : (l >= lane_count ? lane_count - 1 : l);
  }
  double y_min() const { return 0.5 * vehicle_width; }
  double y_max() const { return road_width() - 0.5 * vehicle_width; }

  TransitionMatrix transition_matrix() const {
    return {{{1.0 - p_keep_cut_in - p_keep_brake, p_keep_cut_in, p_keep_brake},
             {p_cut_in_keep, 1.0 - p_cut_in_keep - p_cut_in_brake, p_cut_in_brake},
             {p_brake_keep, p_brake_cut_in, 1.0 - p_brake_keep - p_brake_cut_in}}};
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("scenario: " + m); };
    if (lane_count < 2) fail("lane_count must be >= 2");
    if (!(lane_width > 0)) fail("lane_width must be > 0");
    if (!(dt > 0)) fail("dt must be > 0");
    if (horizon_steps < 0) fail("horizon_steps must be >= 0");
    if (!(vehicle_length > 0 && vehicle_width > 0)) fail("vehicle extents must be > 0");
    if (vehicle_width >= lane_width) fail("vehicle_width must be below lane_width");
    if (!(v_max > 0)) fail("v_max must be > 0");
    if (agent_count < 0) fail("agent_count must be >= 0");
    if (ego_lane < -1 || ego_lane >= lane_count) fail("ego_lane out of range");
    if (ego_speed_min < 0 || ego_speed_max < ego_speed_min || ego_speed_max > v_max) fail("ego speed range invalid");
    if (other_speed_min < 0 || other_speed_max < other_speed_min) fail("other speed range invalid");
    if (cut_in_steps < 1) fail("cut_in_steps must be >= 1");
    if (dv_min > 0 || dv_max < 0 || dd_max < 0) fail("action bounds must contain zero");
    for (const auto& row : transition_matrix()) {
      double sum = 0;
      for (double p : row) {
        if (!(p >= 0.0 && p <= 1.0)) fail("transition probabilities must lie in [0,1]");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-12) fail("transition rows must sum to 1");
    }
  }
};

namespace detail {

using FieldRef = std::variant<int ScenarioConfig::*, double ScenarioConfig::*, bool ScenarioConfig::*,
                              std::uint64_t ScenarioConfig::*>;

inline const std::map<std::string, FieldRef>& scenario_fields() {
  static const std::map<std::string, FieldRef> fields = {
      {"lane_count", &ScenarioConfig::lane_count},
      {"lane_width", &ScenarioConfig::lane_width},
      {"dt", &ScenarioConfig::dt},
      {"horizon_steps", &ScenarioConfig::horizon_steps},
      {"vehicle_length", &ScenarioConfig::vehicle_length},
      {"vehicle_width", &ScenarioConfig::vehicle_width},
      {"v_max", &ScenarioConfig::v_max},
      {"v_limit", &ScenarioConfig::v_limit},
      {"e_goal", &ScenarioConfig::e_goal},
      {"success_requires_goal", &ScenarioConfig::success_requires_goal},
      {"ego_lane", &ScenarioConfig::ego_lane},
      {"ego_speed_min", &ScenarioConfig::ego_speed_min},
      {"ego_speed_max", &ScenarioConfig::ego_speed_max},
      {"agent_count", &ScenarioConfig::agent_count},
      {"spawn_range", &ScenarioConfig::spawn_range},
      {"spawn_gap", &ScenarioConfig::spawn_gap},
      {"other_speed_min", &ScenarioConfig::other_speed_min},
      {"other_speed_max", &ScenarioConfig::other_speed_max},
      {"p_keep_cut_in", &ScenarioConfig::p_keep_cut_in},
      {"p_keep_brake", &ScenarioConfig::p_keep_brake},
      {"p_cut_in_keep", &ScenarioConfig::p_cut_in_keep},
      {"p_cut_in_brake", &ScenarioConfig::p_cut_in_brake},
      {"p_brake_keep", &ScenarioConfig::p_brake_keep},
      {"p_brake_cut_in", &ScenarioConfig::p_brake_cut_in},
      {"cut_in_steps", &ScenarioConfig::cut_in_steps},
      {"brake_decel", &ScenarioConfig::brake_decel},
      {"idm_accel", &ScenarioConfig::idm_accel},
      {"idm_decel", &ScenarioConfig::idm_decel},
      {"idm_time_gap", &ScenarioConfig::idm_time_gap},
      {"idm_min_gap", &ScenarioConfig::idm_min_gap},
      {"dv_min", &ScenarioConfig::dv_min},
      {"dv_max", &ScenarioConfig::dv_max},
      {"dd_max", &ScenarioConfig::dd_max},
      {"gamma", &ScenarioConfig::gamma},
      {"w_prog", &ScenarioConfig::w_prog},
      {"w_lane", &ScenarioConfig::w_lane},
      {"w_coll", &ScenarioConfig::w_coll},
      {"collision_penalty", &ScenarioConfig::collision_penalty},
      {"seed", &ScenarioConfig::seed},
  };
  return fields;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Key/value parsing shared by every config file of the project: one
/// `key = value` per line, `#` starts a comment. Returns keys in file order.
inline std::vector<std::pair<std::string, std::string>> parse_key_values(std::istream& in,
                                                                          const std::string& source) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(source + ":" + std::to_string(lineno) + ": expected key = value");
    auto key = detail::trim(line.substr(0, eq));
    auto value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ParseError(source + ":" + std::to_string(lineno) + ": empty key or value");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

/// Applies one key to the scenario. Returns false if the key is not a
/// scenario field, so composite configs can route it elsewhere.
inline bool apply_scenario_key(ScenarioConfig& cfg, const std::string& key, const std::string& value) {
  const auto& fields = detail::scenario_fields();
  auto it = fields.find(key);
  if (it == fields.end()) return false;
  try {
    std::visit(
        [&](auto member) {
          using T = std::remove_reference_t<decltype(cfg.*member)>;
          std::size_t used = 0;
          if constexpr (std::is_same_v<T, bool>) {
            if (value == "true" || value == "1") cfg.*member = true;
            else if (value == "false" || value == "0") cfg.*member = false;
            else throw ParseError("expected true/false");
            used = value.size();
          } else if constexpr (std::is_same_v<T, int>) {
            cfg.*member = std::stoi(value, &used);
          } else if constexpr (std::is_same_v<T, std::uint64_t>) {
            cfg.*member = std::stoull(value, &used);
          } else {
            cfg.*member = std::stod(value, &used);
          }
          if (used != value.size()) throw ParseError("trailing characters");
        },
        it->second);
  } catch (const std::exception&) {
    throw ParseError("invalid value '" + value + "' for key '" + key + "'");
  }
  return true;
}

inline ScenarioConfig parse_scenario_config(std::istream& in, const std::string& source = "<config>") {
  ScenarioConfig cfg;
  for (const auto& [k, v] : parse_key_values(in, source))
    if (!apply_scenario_key(cfg, k, v)) throw ConfigError(source + ": unknown key '" + k + "'");
  cfg.validate();
  return cfg;
}

inline ScenarioConfig load_scenario_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  return parse_scenario_config(in, path);
}

}  // namespace umbrella::sim
