#pragma once

// Multi-agent ring-road environment with one emergency vehicle.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "emv/risk.hpp"
#include "emv/vehicle.hpp"

namespace emv {

/// Raised for configurations the environment cannot realise (e.g. too many
/// agents for the track).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RewardWeights {
  double w_risk = 1.0;
  double w_eff = 1.0;
  double p_col = -100.0;
  double p_lcm = -0.1;
  double p_lcm_ev = -0.2;
  double w_ev_speed = 1.0;

  void validate() const {
    if (!(p_col < 0.0)) throw std::invalid_argument("reward: p_col must be < 0");
    if (p_lcm > 0.0) throw std::invalid_argument("reward: p_lcm must be <= 0");
    if (p_lcm_ev > 0.0) throw std::invalid_argument("reward: p_lcm_ev must be <= 0");
  }
};

struct EnvConfig {
  TrackConfig track;
  int agents = 10;
  VehicleSpec av = VehicleSpec::av();
  VehicleSpec emv = VehicleSpec::emv();
  ActionMagnitudes actions;
  RiskParams risk;
  RewardWeights reward;
  double spawn_gap = 5.0;
  double post_collision_gap = 2.0;
  int horizon = 400;
  int neighbour_slots = 6;
  // Competitive play drops the emergency-vehicle terms from every reward.
  bool competitive = false;

  void validate() const {
    track.validate();
    av.validate();
    emv.validate();
    risk.validate();
    reward.validate();
    if (agents < 1) throw std::invalid_argument("env: agents must be >= 1");
    if (!(emv.v_max > av.v_max)) throw std::invalid_argument("env: EMV v_max must exceed AV v_max");
    if (av.role != Role::AV || emv.role != Role::EMV) throw std::invalid_argument("env: vehicle roles mismatched");
    if (spawn_gap < 0.0 || post_collision_gap < 0.0) throw std::invalid_argument("env: gaps must be >= 0");
    if (horizon < 1) throw std::invalid_argument("env: horizon must be >= 1");
    if (neighbour_slots < 0) throw std::invalid_argument("env: neighbour_slots must be >= 0");
  }

  [[nodiscard]] double max_length() const { return std::max(av.length, emv.length); }

  [[nodiscard]] int slots_per_lane() const {
    return static_cast<int>(std::floor(track.loop_length / (max_length() + spawn_gap)));
  }

  /// Number of vehicles that fit with the configured spawn gap.
  [[nodiscard]] int capacity() const { return track.lanes * slots_per_lane(); }

  [[nodiscard]] int observation_size() const { return 1 + track.lanes + 2 + 5 * neighbour_slots; }
  [[nodiscard]] int global_feature_size() const { return observation_size() + 4; }
};

struct CollisionEvent {
  int first = 0;
  int second = 0;
};

struct RewardTerms {
  double v = 0.0;
  double v_max = 1.0;
  double risk = 0.0;
  bool collided = false;
  bool began_lane_change = false;
  double emv_v = 0.0;
  double emv_v_max = 1.0;
  bool emv_began_lane_change = false;
  bool include_emv_terms = true;
};

/// Composite per-agent reward. Every component except the collision penalty
/// lies in [0, 1] before weighting.
inline double compute_reward(const RewardTerms& t, const RewardWeights& w) {
  double r = w.w_risk * (1.0 - t.risk) + w.w_eff * (t.v / t.v_max);
  if (t.collided) r += w.p_col;
  if (t.began_lane_change) r += w.p_lcm;
  if (t.include_emv_terms) {
    r += w.w_ev_speed * (t.emv_v / t.emv_v_max);
    if (t.emv_began_lane_change) r += w.p_lcm_ev;
  }
  return r;
}

using FeatureVector = std::vector<double>;

struct Observations {
  std::vector<FeatureVector> local;   // one per agent
  std::vector<FeatureVector> global;  // privileged critic features, one per agent
};

struct StepOutcome {
  std::vector<double> rewards;
  Observations obs;
  std::vector<double> risk;
  std::vector<CollisionEvent> collisions;
  std::vector<bool> began_lane_change;
  bool done = false;
};

class Environment {
 public:
  explicit Environment(EnvConfig config) : config_(std::move(config)) { config_.validate(); }

  [[nodiscard]] const EnvConfig& config() const { return config_; }
  [[nodiscard]] const std::vector<AgentState>& agents() const { return agents_; }
  [[nodiscard]] int num_agents() const { return static_cast<int>(agents_.size()); }
  [[nodiscard]] int step_count() const { return step_; }
  [[nodiscard]] bool done() const { return step_ >= config_.horizon; }
  [[nodiscard]] int emv_index() const { return emv_index_; }
  [[nodiscard]] const std::vector<double>& last_risk() const { return risk_; }

  /// Replaces the vehicle states (tests and snapshots). Resets the step counter
  /// unless `step` is given.
  void set_agents(std::vector<AgentState> agents, int step = 0) {
    agents_ = std::move(agents);
    step_ = step;
    emv_index_ = -1;
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      if (agents_[i].is_emv()) emv_index_ = static_cast<int>(i);
    }
    risk_ = compute_risk();
  }

  Observations reset(std::uint64_t seed) {
    const int n = config_.agents;
    const int cap = config_.capacity();
    if (n > cap) {
      throw ConfigError("env: " + std::to_string(n) + " agents exceed track capacity " + std::to_string(cap) +
                        " = lanes x floor(loop_length / (max vehicle length + spawn_gap))");
    }
    std::mt19937_64 rng(seed);
    const int per_lane = config_.slots_per_lane();
    std::vector<int> slots(static_cast<std::size_t>(cap));
    for (int i = 0; i < cap; ++i) slots[i] = i;
    std::shuffle(slots.begin(), slots.end(), rng);

    const double slot_size = config_.track.loop_length / per_lane;
    const double half_free = 0.5 * (slot_size - config_.max_length() - config_.spawn_gap);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    agents_.clear();
    agents_.reserve(n);
    for (int i = 0; i < n; ++i) {
      AgentState a;
      a.id = i;
      a.spec = i == 0 ? config_.emv : config_.av;
      const int slot = slots[i];
      a.lane = slot / per_lane;
      const double centre = (slot % per_lane + 0.5) * slot_size;
      a.s = config_.track.wrap(centre + (2.0 * unit(rng) - 1.0) * half_free);
      a.v = a.spec.v_min + unit(rng) * (a.spec.v_max - a.spec.v_min);
      agents_.push_back(a);
    }
    emv_index_ = 0;
    step_ = 0;
    risk_ = compute_risk();
    return observe_all();
  }

  StepOutcome step(const std::vector<Action>& joint_action) {
    if (joint_action.size() != agents_.size()) {
      throw std::invalid_argument("env: expected " + std::to_string(agents_.size()) + " actions, got " +
                                  std::to_string(joint_action.size()));
    }
    if (done()) throw std::logic_error("env: step called after episode end");

    const TrackConfig& track = config_.track;
    StepOutcome out;
    out.began_lane_change.assign(agents_.size(), false);
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      AgentState& a = agents_[i];
      a.collided_this_step = false;
      const Action act = joint_action[i];
      if ((act == Action::ChangeLeft || act == Action::ChangeRight) && !a.lane_change) {
        const int target = a.lane + (act == Action::ChangeLeft ? 1 : -1);
        if (target >= 0 && target < track.lanes) {
          a.lane_change = LaneChange{target, track.lane_change_steps};
          out.began_lane_change[i] = true;
        }
      }
      a.v = std::clamp(a.v + config_.actions.acceleration(act) * track.dt, a.spec.v_min, a.spec.v_max);
      a.s = track.wrap(a.s + a.v * track.dt);
      if (a.lane_change && --a.lane_change->steps_remaining <= 0) {
        a.lane = a.lane_change->target_lane;
        a.lane_change.reset();
      }
    }

    out.collisions = detect_collisions();
    risk_ = compute_risk();
    out.risk = risk_;

    const AgentState* emv = emv_index_ >= 0 ? &agents_[emv_index_] : nullptr;
    const bool emv_began = emv != nullptr && out.began_lane_change[emv_index_];
    out.rewards.resize(agents_.size());
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      const AgentState& a = agents_[i];
      RewardTerms t;
      t.v = a.v;
      t.v_max = a.spec.v_max;
      t.risk = risk_[i];
      t.collided = a.collided_this_step;
      t.began_lane_change = out.began_lane_change[i];
      t.include_emv_terms = emv != nullptr && !config_.competitive;
      if (emv != nullptr) {
        t.emv_v = emv->v;
        t.emv_v_max = emv->spec.v_max;
        t.emv_began_lane_change = emv_began;
      }
      out.rewards[i] = compute_reward(t, config_.reward);
    }

    ++step_;
    out.done = done();
    out.obs = observe_all();
    return out;
  }

  /// Axis-aligned overlap test in (arc length, lane) coordinates. Each colliding
  /// pair is slowed to v_min and the rear vehicle is moved back to the
  /// post-collision gap.
  std::vector<CollisionEvent> detect_collisions() {
    std::vector<CollisionEvent> events;
    const TrackConfig& track = config_.track;
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      for (std::size_t j = i + 1; j < agents_.size(); ++j) {
        AgentState& a = agents_[i];
        AgentState& b = agents_[j];
        if (!share_lane(a, b)) continue;
        const double centre = std::abs(track.signed_arc(a.s, b.s));
        if (centre >= 0.5 * (a.spec.length + b.spec.length)) continue;
        events.push_back({a.id, b.id});
        a.collided_this_step = true;
        b.collided_this_step = true;
        a.v = a.spec.v_min;
        b.v = b.spec.v_min;
        const bool b_in_front = track.signed_arc(a.s, b.s) >= 0.0;
        AgentState& front = b_in_front ? b : a;
        AgentState& rear = b_in_front ? a : b;
        rear.s = track.wrap(front.s - 0.5 * (front.spec.length + rear.spec.length) - config_.post_collision_gap);
      }
    }
    return events;
  }

  [[nodiscard]] FeatureVector observe(int i) const {
    const AgentState& self = agents_.at(static_cast<std::size_t>(i));
    const TrackConfig& track = config_.track;
    FeatureVector f;
    f.reserve(static_cast<std::size_t>(config_.observation_size()));
    f.push_back(self.v / self.spec.v_max);

    // Lane one-hot, split between source and target lanes during a change.
    std::vector<double> lanes(static_cast<std::size_t>(track.lanes), 0.0);
    if (self.lane_change) {
      const double p = static_cast<double>(track.lane_change_steps - self.lane_change->steps_remaining) /
                       track.lane_change_steps;
      lanes[self.lane] = 1.0 - p;
      lanes[self.lane_change->target_lane] = p;
    } else {
      lanes[self.lane] = 1.0;
    }
    f.insert(f.end(), lanes.begin(), lanes.end());

    const double phase = 2.0 * std::numbers::pi * self.s / track.loop_length;
    f.push_back(std::sin(phase));
    f.push_back(std::cos(phase));

    struct Seen {
      double arc;
      int index;
    };
    std::vector<Seen> near;
    for (std::size_t j = 0; j < agents_.size(); ++j) {
      if (static_cast<int>(j) == i) continue;
      const double arc = track.signed_arc(self.s, agents_[j].s);
      if (std::abs(arc) <= self.spec.perception_radius) near.push_back({arc, static_cast<int>(j)});
    }
    std::sort(near.begin(), near.end(), [](const Seen& x, const Seen& y) {
      const double ax = std::abs(x.arc);
      const double ay = std::abs(y.arc);
      return ax != ay ? ax < ay : x.index < y.index;
    });

    const double y_self = lateral_position(self, track);
    const double lane_span = track.lane_width * (track.lanes - 1);
    const double speed_scale = config_.emv.v_max;
    for (int k = 0; k < config_.neighbour_slots; ++k) {
      if (k < static_cast<int>(near.size())) {
        const AgentState& o = agents_[near[k].index];
        f.push_back(1.0);
        f.push_back(near[k].arc / self.spec.perception_radius);
        f.push_back(std::clamp((o.v - self.v) / speed_scale, -1.0, 1.0));
        f.push_back((lateral_position(o, track) - y_self) / lane_span);
        f.push_back(o.is_emv() ? 1.0 : 0.0);
      } else {
        f.insert(f.end(), 5, 0.0);
      }
    }
    return f;
  }

  /// Critic features: the agent's observation followed by emergency-vehicle
  /// speed, signed ring distance to it, mean AV speed and traffic density.
  [[nodiscard]] FeatureVector global_features(int i) const {
    FeatureVector f = observe(i);
    const AgentState& self = agents_.at(static_cast<std::size_t>(i));
    double emv_speed = 0.0;
    double emv_offset = 0.0;
    if (emv_index_ >= 0) {
      const AgentState& e = agents_[emv_index_];
      emv_speed = e.v / config_.emv.v_max;
      emv_offset = emv_index_ == i ? 0.0 : config_.track.signed_arc(self.s, e.s) / config_.track.loop_length;
    }
    double av_sum = 0.0;
    int av_count = 0;
    for (const AgentState& a : agents_) {
      if (!a.is_emv()) {
        av_sum += a.v;
        ++av_count;
      }
    }
    f.push_back(emv_speed);
    f.push_back(emv_offset);
    f.push_back(av_count > 0 ? av_sum / av_count / config_.av.v_max : 0.0);
    f.push_back(static_cast<double>(agents_.size()) / config_.capacity());
    return f;
  }

  [[nodiscard]] Observations observe_all() const {
    Observations o;
    o.local.reserve(agents_.size());
    o.global.reserve(agents_.size());
    for (int i = 0; i < num_agents(); ++i) {
      o.local.push_back(observe(i));
      o.global.push_back(global_features(i));
    }
    return o;
  }

  struct Neighbour {
    int index = -1;
    double gap = 0.0;  // bumper-to-bumper
  };

  /// Nearest vehicle ahead of agent `i` whose body occupies `lane`, searched
  /// over the full ring.
  [[nodiscard]] std::optional<Neighbour> leader_in_lane(int i, int lane) const {
    const AgentState& self = agents_.at(static_cast<std::size_t>(i));
    std::optional<Neighbour> best;
    double best_arc = 0.0;
    for (int j = 0; j < num_agents(); ++j) {
      if (j == i || !agents_[j].occupies(lane)) continue;
      const double arc = config_.track.forward_arc(self.s, agents_[j].s);
      if (!best || arc < best_arc) {
        best_arc = arc;
        best = Neighbour{j, arc - 0.5 * (self.spec.length + agents_[j].spec.length)};
      }
    }
    return best;
  }

  /// Nearest vehicle behind agent `i` whose body occupies `lane`.
  [[nodiscard]] std::optional<Neighbour> follower_in_lane(int i, int lane) const {
    const AgentState& self = agents_.at(static_cast<std::size_t>(i));
    std::optional<Neighbour> best;
    double best_arc = 0.0;
    for (int j = 0; j < num_agents(); ++j) {
      if (j == i || !agents_[j].occupies(lane)) continue;
      const double arc = config_.track.forward_arc(agents_[j].s, self.s);
      if (!best || arc < best_arc) {
        best_arc = arc;
        best = Neighbour{j, arc - 0.5 * (self.spec.length + agents_[j].spec.length)};
      }
    }
    return best;
  }

  /// Same-lane gap to the vehicle ahead; an agent alone in its lane sees the
  /// rest of the loop.
  [[nodiscard]] double leading_gap(int i) const {
    const AgentState& self = agents_.at(static_cast<std::size_t>(i));
    if (auto l = leader_in_lane(i, self.lane)) return l->gap;
    return config_.track.loop_length - self.spec.length;
  }

 private:
  static bool share_lane(const AgentState& a, const AgentState& b) {
    return a.occupies(b.lane) || (b.lane_change && a.occupies(b.lane_change->target_lane));
  }

  // Per-agent risk: worst unified index over perceived vehicles.
  [[nodiscard]] std::vector<double> compute_risk() const {
    std::vector<double> r(agents_.size(), 0.0);
    const TrackConfig& track = config_.track;
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      for (std::size_t j = i + 1; j < agents_.size(); ++j) {
        const double arc = std::abs(track.signed_arc(agents_[i].s, agents_[j].s));
        const bool i_sees = arc <= agents_[i].spec.perception_radius;
        const bool j_sees = arc <= agents_[j].spec.perception_radius;
        if (!i_sees && !j_sees) continue;
        const double pair = assess_pair(agents_[i], agents_[j], track, config_.risk).r;
        if (i_sees) r[i] = std::max(r[i], pair);
        if (j_sees) r[j] = std::max(r[j], pair);
      }
    }
    return r;
  }

  EnvConfig config_;
  std::vector<AgentState> agents_;
  std::vector<double> risk_;
  int step_ = 0;
  int emv_index_ = -1;
};

/// Writes one newline-delimited JSON record per agent for a step.
inline void write_trace(std::ostream& os, int step, const std::vector<AgentState>& agents,
                        const std::vector<Action>& actions, const StepOutcome& outcome) {
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const AgentState& a = agents[i];
    os << "{\"step\":" << step << ",\"agent\":" << a.id << ",\"s\":" << a.s << ",\"lane\":" << a.lane
       << ",\"v\":" << a.v << ",\"action\":\"" << to_string(actions[i]) << "\",\"reward\":" << outcome.rewards[i]
       << ",\"risk\":" << outcome.risk[i] << "}\n";
  }
}

}  // namespace emv
