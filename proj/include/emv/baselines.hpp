#pragma once

// Rule-based comparators: Gipps car following with RSS-gated lane changes, and
// a discrete-action MPC adaptive cruise controller.

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "emv/env.hpp"
#include "emv/risk.hpp"
#include "emv/vehicle.hpp"

namespace emv {

struct GippsParams {
  double T = 0.7;        // reaction time (s)
  double v_d = 0.0;      // desired speed; <= 0 means "use the vehicle's v_max"
  double a_n = 2.5;      // max acceleration
  double d_n = 3.0;      // own severest braking (magnitude)
  double d_est = 2.5;    // estimate of the leader's severest braking (magnitude)
  double S = 2.0;        // stopped spacing margin (m)
  double speed_gain_threshold = 1.0;  // lane-change incentive (m/s)

  void validate() const {
    if (!(T > 0 && a_n > 0 && d_n > 0 && d_est > 0)) throw std::invalid_argument("gipps: rates must be > 0");
    if (S < 0) throw std::invalid_argument("gipps: S must be >= 0");
  }
};

struct GippsLeader {
  double gap = 0.0;  // bumper-to-bumper
  double v = 0.0;
};

/// Free-flow branch: the desired speed is never exceeded.
inline double gipps_acceleration_branch(double v, double v_d, const GippsParams& p) {
  const double ratio = v / v_d;
  return v + 2.5 * p.a_n * p.T * (1.0 - ratio) * std::sqrt(0.025 + ratio);
}

/// Safe-distance branch. Empty when the discriminant is negative (the safe gap
/// is already violated).
inline std::optional<double> gipps_braking_branch(double v, const GippsLeader& leader, const GippsParams& p) {
  const double disc = p.d_n * p.d_n * p.T * p.T +
                      p.d_n * (2.0 * (leader.gap - p.S) - v * p.T + leader.v * leader.v / p.d_est);
  if (disc < 0.0) return std::nullopt;
  return -p.d_n * p.T + std::sqrt(disc);
}

/// Speed after one reaction time: min of both branches, clamped to
/// [v_min, v_max]; v_min when the braking branch has no real solution.
inline double gipps_velocity(double v, std::optional<GippsLeader> leader, const GippsParams& p, double v_min,
                             double v_max) {
  const double v_d = p.v_d > 0.0 ? p.v_d : v_max;
  double target = gipps_acceleration_branch(v, v_d, p);
  if (leader) {
    const auto braking = gipps_braking_branch(v, *leader, p);
    if (!braking) return v_min;
    target = std::min(target, *braking);
  }
  return std::clamp(target, v_min, v_max);
}

/// Longitudinal command whose acceleration is nearest `desired`; ties go to the
/// lower action index.
inline Action nearest_longitudinal_action(double desired, const ActionMagnitudes& m) {
  Action best = Action::Keep;
  double best_err = std::numeric_limits<double>::infinity();
  for (Action a : kLongitudinalActions) {
    const double err = std::abs(m.acceleration(a) - desired);
    if (err < best_err) {
      best_err = err;
      best = a;
    }
  }
  return best;
}

namespace detail {

inline std::optional<GippsLeader> to_leader(const Environment& env, std::optional<Environment::Neighbour> n) {
  if (!n) return std::nullopt;
  return GippsLeader{n->gap, env.agents()[n->index].v};
}

// Closest vehicle ahead in the agent's lane, or in its target lane while a lane
// change is under way.
inline std::optional<Environment::Neighbour> current_leader(const Environment& env, int i) {
  const AgentState& a = env.agents()[i];
  auto best = env.leader_in_lane(i, a.lane);
  if (a.lane_change) {
    auto other = env.leader_in_lane(i, a.lane_change->target_lane);
    if (other && (!best || other->gap < best->gap)) best = other;
  }
  return best;
}

}  // namespace detail

/// RSS gate for moving agent `i` into `lane`: the gaps to the new leader and
/// follower must both hold the minimum safe longitudinal distance.
inline bool lane_change_is_safe(const Environment& env, int i, int lane) {
  const AgentState& self = env.agents()[i];
  const RiskParams& risk = env.config().risk;
  if (auto lead = env.leader_in_lane(i, lane)) {
    PairKinematics k{.v_r = self.v, .v_f = env.agents()[lead->index].v};
    if (lead->gap <= 0.0 || lead->gap < lon_safe_distance(k, risk, false)) return false;
  }
  if (auto follow = env.follower_in_lane(i, lane)) {
    PairKinematics k{.v_r = env.agents()[follow->index].v, .v_f = self.v};
    if (follow->gap <= 0.0 || follow->gap < lon_safe_distance(k, risk, false)) return false;
  }
  return true;
}

/// Lane rules: yield right to an emergency vehicle approaching from behind,
/// otherwise change lane when it is safe and promises a speed gain.
inline Action gipps_lane_decision(const Environment& env, int i, const GippsParams& p) {
  const AgentState& self = env.agents()[i];
  if (self.lane_change) return Action::Keep;
  const int lanes = env.config().track.lanes;

  const int e = env.emv_index();
  if (!self.is_emv() && e >= 0) {
    const AgentState& emv = env.agents()[e];
    const double behind = env.config().track.forward_arc(emv.s, self.s);
    if (emv.occupies(self.lane) && behind <= self.spec.perception_radius && self.lane > 0 &&
        lane_change_is_safe(env, i, self.lane - 1)) {
      return Action::ChangeRight;
    }
  }

  const double here = gipps_velocity(self.v, detail::to_leader(env, env.leader_in_lane(i, self.lane)), p,
                                     self.spec.v_min, self.spec.v_max);
  Action best = Action::Keep;
  double best_gain = p.speed_gain_threshold;
  for (const auto& [lane, action] : {std::pair{self.lane + 1, Action::ChangeLeft},
                                     std::pair{self.lane - 1, Action::ChangeRight}}) {
    if (lane < 0 || lane >= lanes || !lane_change_is_safe(env, i, lane)) continue;
    const double there = gipps_velocity(self.v, detail::to_leader(env, env.leader_in_lane(i, lane)), p,
                                        self.spec.v_min, self.spec.v_max);
    if (there - here > best_gain) {
      best_gain = there - here;
      best = action;
    }
  }
  return best;
}

/// Gipps driver: lane rules first, then the car-following speed mapped onto the
/// nearest discrete acceleration.
inline Action gipps_action(const Environment& env, int i, const GippsParams& p) {
  const Action lane = gipps_lane_decision(env, i, p);
  if (lane != Action::Keep) return lane;
  const AgentState& self = env.agents()[i];
  const double target = gipps_velocity(self.v, detail::to_leader(env, detail::current_leader(env, i)), p,
                                       self.spec.v_min, self.spec.v_max);
  return nearest_longitudinal_action((target - self.v) / p.T, env.config().actions);
}

// ---------------------------------------------------------------------------
// MPC adaptive cruise control

struct MpcParams {
  int horizon = 4;
  double dt = 0.1;
  double t_hw = 1.2;
  double S_max = 15.0;
  double dV_max = 8.0;
  double a_lower = -3.0;
  double a_upper = 3.0;

  void validate() const {
    if (horizon < 1) throw std::invalid_argument("mpc: horizon must be >= 1");
    if (!(dt > 0 && t_hw > 0 && S_max > 0 && dV_max > 0)) throw std::invalid_argument("mpc: constants must be > 0");
    if (!(a_lower < a_upper)) throw std::invalid_argument("mpc: empty acceleration range");
  }
};

/// Gap to the leader, leader-minus-own speed, own speed.
struct MpcState {
  double S = 0.0;
  double dV = 0.0;
  double V = 0.0;

  friend MpcState operator+(const MpcState& a, const MpcState& b) { return {a.S + b.S, a.dV + b.dV, a.V + b.V}; }
  friend MpcState operator-(const MpcState& a, const MpcState& b) { return {a.S - b.S, a.dV - b.dV, a.V - b.V}; }
};

/// One step of the point-mass model x' = A x + B u with
/// A = [[1, dt, 0], [0, 1, 0], [0, 0, 1]] and B = (-dt^2/2, -dt, dt).
inline MpcState mpc_step(const MpcState& x, double u, double dt) {
  return {x.S + dt * x.dV - 0.5 * dt * dt * u, x.dV - dt * u, x.V + dt * u};
}

/// Predicted states x(1..N) for an acceleration sequence.
inline std::vector<MpcState> mpc_rollout(const MpcState& x0, std::span<const double> accelerations,
                                         const MpcParams& p) {
  std::vector<MpcState> out;
  out.reserve(accelerations.size());
  MpcState x = x0;
  for (double u : accelerations) {
    x = mpc_step(x, u, p.dt);
    out.push_back(x);
  }
  return out;
}

inline double mpc_stage_cost(const MpcState& x, const MpcParams& p) {
  const double gap_err = (x.S - x.V * p.t_hw) / p.S_max;
  const double speed_err = x.dV / p.dV_max;
  return gap_err * gap_err + speed_err * speed_err;
}

inline bool mpc_state_feasible(const MpcState& x) { return x.S > 0.0 && x.V > 0.0; }

struct MpcDecision {
  Action action = Action::HeavyBrake;
  std::vector<Action> sequence;
  double cost = std::numeric_limits<double>::infinity();
  bool feasible = false;
};

/// Exhaustive search over every action sequence of length N, in lexicographic
/// order of action index; the first sequence reaching the minimum cost wins.
/// Falls back to HeavyBrake when no sequence satisfies the constraints.
inline MpcDecision mpc_plan(const MpcState& x0, const MpcParams& p, const ActionMagnitudes& m,
                            std::span<const Action> action_set = kLongitudinalActions) {
  const int n = p.horizon;
  const int k = static_cast<int>(action_set.size());
  MpcDecision best;
  if (k == 0) return best;
  std::vector<int> digits(static_cast<std::size_t>(n), 0);
  std::vector<double> u(static_cast<std::size_t>(n));
  while (true) {
    bool admissible = true;
    for (int t = 0; t < n; ++t) {
      u[t] = m.acceleration(action_set[digits[t]]);
      if (u[t] < p.a_lower || u[t] > p.a_upper) admissible = false;
    }
    if (admissible) {
      double cost = 0.0;
      MpcState x = x0;
      for (int t = 0; t < n && admissible; ++t) {
        x = mpc_step(x, u[t], p.dt);
        if (!mpc_state_feasible(x)) admissible = false;
        cost += mpc_stage_cost(x, p);
      }
      if (admissible && cost < best.cost) {
        best.cost = cost;
        best.feasible = true;
        best.sequence.clear();
        for (int t = 0; t < n; ++t) best.sequence.push_back(action_set[digits[t]]);
        best.action = best.sequence.front();
      }
    }
    // Odometer increment, most significant digit first.
    int pos = n - 1;
    while (pos >= 0 && ++digits[pos] == k) digits[pos--] = 0;
    if (pos < 0) break;
  }
  if (!best.feasible) best.action = Action::HeavyBrake;
  return best;
}

/// MPC driver: Gipps lane rules, MPC car following behind the current leader,
/// free-flow cruising towards v_max without one.
inline Action mpc_action(const Environment& env, int i, const MpcParams& p, const GippsParams& lane_rules) {
  const Action lane = gipps_lane_decision(env, i, lane_rules);
  if (lane != Action::Keep) return lane;
  const AgentState& self = env.agents()[i];
  const auto leader = detail::current_leader(env, i);
  if (!leader) {
    const double target = gipps_velocity(self.v, std::nullopt, lane_rules, self.spec.v_min, self.spec.v_max);
    return nearest_longitudinal_action((target - self.v) / lane_rules.T, env.config().actions);
  }
  const MpcState x{leader->gap, env.agents()[leader->index].v - self.v, self.v};
  return mpc_plan(x, p, env.config().actions).action;
}

}  // namespace emv
