#pragma once

// JSON mapping for every configuration struct. Unknown keys are rejected so a
// typo in a config file surfaces as an error instead of a silent default.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <string_view>

#include "emv/baselines.hpp"
#include "emv/env.hpp"
#include "emv/risk.hpp"
#include "emv/train_config.hpp"
#include "emv/vehicle.hpp"

namespace emv {

using Json = nlohmann::ordered_json;

namespace io {

inline void reject_unknown(const Json& j, std::initializer_list<std::string_view> keys, std::string_view where) {
  if (!j.is_object()) throw std::invalid_argument(std::string(where) + ": expected an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (auto k : keys) known = known || item.key() == k;
    if (!known) throw std::invalid_argument(std::string(where) + ": unknown key '" + item.key() + "'");
  }
}

template <typename T>
void read(const Json& j, const char* key, T& out, std::string_view where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    it->get_to(out);  // overlays onto the current value
  } catch (const Json::exception& e) {
    throw std::invalid_argument(std::string(where) + "." + key + ": " + e.what());
  }
}

/// 64-bit FNV-1a, used to fingerprint canonical config dumps.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

}  // namespace io

inline void to_json(Json& j, const TrackConfig& c) {
  j = Json{{"loop_length", c.loop_length}, {"lanes", c.lanes}, {"lane_width", c.lane_width}, {"dt", c.dt},
           {"lane_change_steps", c.lane_change_steps}};
}
inline void from_json(const Json& j, TrackConfig& c) {
  io::reject_unknown(j, {"loop_length", "lanes", "lane_width", "dt", "lane_change_steps"}, "track");
  io::read(j, "loop_length", c.loop_length, "track");
  io::read(j, "lanes", c.lanes, "track");
  io::read(j, "lane_width", c.lane_width, "track");
  io::read(j, "dt", c.dt, "track");
  io::read(j, "lane_change_steps", c.lane_change_steps, "track");
}

inline void to_json(Json& j, const VehicleSpec& v) {
  j = Json{{"v_min", v.v_min}, {"v_max", v.v_max}, {"length", v.length}, {"width", v.width},
           {"perception_radius", v.perception_radius}};
}
inline void from_json(const Json& j, VehicleSpec& v) {
  io::reject_unknown(j, {"v_min", "v_max", "length", "width", "perception_radius"}, "vehicle");
  io::read(j, "v_min", v.v_min, "vehicle");
  io::read(j, "v_max", v.v_max, "vehicle");
  io::read(j, "length", v.length, "vehicle");
  io::read(j, "width", v.width, "vehicle");
  io::read(j, "perception_radius", v.perception_radius, "vehicle");
}

inline void to_json(Json& j, const ActionMagnitudes& m) {
  j = Json{{"accelerate", m.accelerate}, {"heavy_accelerate", m.heavy_accelerate}, {"brake", m.brake},
           {"heavy_brake", m.heavy_brake}};
}
inline void from_json(const Json& j, ActionMagnitudes& m) {
  io::reject_unknown(j, {"accelerate", "heavy_accelerate", "brake", "heavy_brake"}, "actions");
  io::read(j, "accelerate", m.accelerate, "actions");
  io::read(j, "heavy_accelerate", m.heavy_accelerate, "actions");
  io::read(j, "brake", m.brake, "actions");
  io::read(j, "heavy_brake", m.heavy_brake, "actions");
}

inline void to_json(Json& j, const RiskParams& p) {
  j = Json{{"rho", p.rho},         {"a_max", p.a_max},         {"b_min", p.b_min},
           {"b_max", p.b_max},     {"B", p.B},                 {"a_lat_max", p.a_lat_max},
           {"b_lat_min", p.b_lat_min}, {"B_lat", p.B_lat},     {"beta", p.beta},
           {"gamma", p.gamma}};
}
inline void from_json(const Json& j, RiskParams& p) {
  io::reject_unknown(j, {"rho", "a_max", "b_min", "b_max", "B", "a_lat_max", "b_lat_min", "B_lat", "beta", "gamma"},
                     "risk");
  io::read(j, "rho", p.rho, "risk");
  io::read(j, "a_max", p.a_max, "risk");
  io::read(j, "b_min", p.b_min, "risk");
  io::read(j, "b_max", p.b_max, "risk");
  io::read(j, "B", p.B, "risk");
  io::read(j, "a_lat_max", p.a_lat_max, "risk");
  io::read(j, "b_lat_min", p.b_lat_min, "risk");
  io::read(j, "B_lat", p.B_lat, "risk");
  io::read(j, "beta", p.beta, "risk");
  io::read(j, "gamma", p.gamma, "risk");
}

inline void to_json(Json& j, const RewardWeights& w) {
  j = Json{{"w_risk", w.w_risk}, {"w_eff", w.w_eff},       {"p_col", w.p_col},
           {"p_lcm", w.p_lcm},   {"p_lcm_ev", w.p_lcm_ev}, {"w_ev_speed", w.w_ev_speed}};
}
inline void from_json(const Json& j, RewardWeights& w) {
  io::reject_unknown(j, {"w_risk", "w_eff", "p_col", "p_lcm", "p_lcm_ev", "w_ev_speed"}, "reward");
  io::read(j, "w_risk", w.w_risk, "reward");
  io::read(j, "w_eff", w.w_eff, "reward");
  io::read(j, "p_col", w.p_col, "reward");
  io::read(j, "p_lcm", w.p_lcm, "reward");
  io::read(j, "p_lcm_ev", w.p_lcm_ev, "reward");
  io::read(j, "w_ev_speed", w.w_ev_speed, "reward");
}

inline void to_json(Json& j, const EnvConfig& c) {
  j = Json{{"track", c.track},
           {"agents", c.agents},
           {"av", c.av},
           {"emv", c.emv},
           {"actions", c.actions},
           {"risk", c.risk},
           {"reward", c.reward},
           {"spawn_gap", c.spawn_gap},
           {"post_collision_gap", c.post_collision_gap},
           {"horizon", c.horizon},
           {"neighbour_slots", c.neighbour_slots},
           {"competitive", c.competitive}};
}
inline void from_json(const Json& j, EnvConfig& c) {
  io::reject_unknown(j,
                     {"track", "agents", "av", "emv", "actions", "risk", "reward", "spawn_gap", "post_collision_gap",
                      "horizon", "neighbour_slots", "competitive"},
                     "env");
  io::read(j, "track", c.track, "env");
  io::read(j, "agents", c.agents, "env");
  io::read(j, "av", c.av, "env");
  io::read(j, "emv", c.emv, "env");
  io::read(j, "actions", c.actions, "env");
  io::read(j, "risk", c.risk, "env");
  io::read(j, "reward", c.reward, "env");
  io::read(j, "spawn_gap", c.spawn_gap, "env");
  io::read(j, "post_collision_gap", c.post_collision_gap, "env");
  io::read(j, "horizon", c.horizon, "env");
  io::read(j, "neighbour_slots", c.neighbour_slots, "env");
  io::read(j, "competitive", c.competitive, "env");
  c.av.role = Role::AV;
  c.emv.role = Role::EMV;
}

inline void to_json(Json& j, const GippsParams& p) {
  j = Json{{"T", p.T}, {"v_d", p.v_d}, {"a_n", p.a_n}, {"d_n", p.d_n}, {"d_est", p.d_est}, {"S", p.S},
           {"speed_gain_threshold", p.speed_gain_threshold}};
}
inline void from_json(const Json& j, GippsParams& p) {
  io::reject_unknown(j, {"T", "v_d", "a_n", "d_n", "d_est", "S", "speed_gain_threshold"}, "gipps");
  io::read(j, "T", p.T, "gipps");
  io::read(j, "v_d", p.v_d, "gipps");
  io::read(j, "a_n", p.a_n, "gipps");
  io::read(j, "d_n", p.d_n, "gipps");
  io::read(j, "d_est", p.d_est, "gipps");
  io::read(j, "S", p.S, "gipps");
  io::read(j, "speed_gain_threshold", p.speed_gain_threshold, "gipps");
}

inline void to_json(Json& j, const MpcParams& p) {
  j = Json{{"horizon", p.horizon}, {"dt", p.dt},           {"t_hw", p.t_hw},         {"S_max", p.S_max},
           {"dV_max", p.dV_max},   {"a_lower", p.a_lower}, {"a_upper", p.a_upper}};
}
inline void from_json(const Json& j, MpcParams& p) {
  io::reject_unknown(j, {"horizon", "dt", "t_hw", "S_max", "dV_max", "a_lower", "a_upper"}, "mpc");
  io::read(j, "horizon", p.horizon, "mpc");
  io::read(j, "dt", p.dt, "mpc");
  io::read(j, "t_hw", p.t_hw, "mpc");
  io::read(j, "S_max", p.S_max, "mpc");
  io::read(j, "dV_max", p.dV_max, "mpc");
  io::read(j, "a_lower", p.a_lower, "mpc");
  io::read(j, "a_upper", p.a_upper, "mpc");
}

inline void to_json(Json& j, const TrainConfig& c) {
  j = Json{{"episodes", c.episodes},
           {"steps_per_episode", c.steps_per_episode},
           {"actor_lr", c.actor_lr},
           {"critic_lr", c.critic_lr},
           {"ppo_epochs", c.ppo_epochs},
           {"clip", c.clip},
           {"gamma", c.gamma},
           {"lambda", c.lambda},
           {"entropy_coef", c.entropy_coef},
           {"minibatches", c.minibatches},
           {"seed", c.seed},
           {"mode", std::string(to_string(c.mode))},
           {"hidden", c.hidden},
           {"share_av_actor", c.share_av_actor},
           {"value_normalization", c.value_normalization},
           {"value_norm_beta", c.value_norm_beta},
           {"max_grad_norm", c.max_grad_norm},
           {"checkpoint_every", c.checkpoint_every}};
}
inline void from_json(const Json& j, TrainConfig& c) {
  io::reject_unknown(j,
                     {"episodes", "steps_per_episode", "actor_lr", "critic_lr", "ppo_epochs", "clip", "gamma",
                      "lambda", "entropy_coef", "minibatches", "seed", "mode", "hidden", "share_av_actor",
                      "value_normalization", "value_norm_beta", "max_grad_norm", "checkpoint_every"},
                     "train");
  io::read(j, "episodes", c.episodes, "train");
  io::read(j, "steps_per_episode", c.steps_per_episode, "train");
  io::read(j, "actor_lr", c.actor_lr, "train");
  io::read(j, "critic_lr", c.critic_lr, "train");
  io::read(j, "ppo_epochs", c.ppo_epochs, "train");
  io::read(j, "clip", c.clip, "train");
  io::read(j, "gamma", c.gamma, "train");
  io::read(j, "lambda", c.lambda, "train");
  io::read(j, "entropy_coef", c.entropy_coef, "train");
  io::read(j, "minibatches", c.minibatches, "train");
  io::read(j, "seed", c.seed, "train");
  if (auto it = j.find("mode"); it != j.end()) c.mode = mode_from_string(it->get<std::string>());
  io::read(j, "hidden", c.hidden, "train");
  io::read(j, "share_av_actor", c.share_av_actor, "train");
  io::read(j, "value_normalization", c.value_normalization, "train");
  io::read(j, "value_norm_beta", c.value_norm_beta, "train");
  io::read(j, "max_grad_norm", c.max_grad_norm, "train");
  io::read(j, "checkpoint_every", c.checkpoint_every, "train");
}

/// Fingerprint of the canonical JSON form of an environment config.
inline std::string config_hash(const EnvConfig& c) { return io::hex64(io::fnv1a(Json(c).dump())); }

}  // namespace emv
