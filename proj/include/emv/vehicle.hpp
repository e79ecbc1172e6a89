#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace emv {

/// Ring-road geometry. Lane 0 is the rightmost lane; lateral coordinates grow
/// to the left.
struct TrackConfig {
  double loop_length = 400.0;
  int lanes = 2;
  double lane_width = 3.5;
  double dt = 0.1;
  int lane_change_steps = 10;  // duration of a lane change manoeuvre

  void validate() const {
    if (!(loop_length > 0.0)) throw std::invalid_argument("track: loop_length must be > 0");
    if (lanes < 2) throw std::invalid_argument("track: lanes must be >= 2");
    if (!(lane_width > 0.0)) throw std::invalid_argument("track: lane_width must be > 0");
    if (!(dt > 0.0)) throw std::invalid_argument("track: dt must be > 0");
    if (lane_change_steps < 1) throw std::invalid_argument("track: lane_change_steps must be >= 1");
  }

  /// Lateral coordinate of a lane centre.
  [[nodiscard]] double lane_centre(double lane) const { return (lane + 0.5) * lane_width; }

  /// Position wrapped into [0, loop_length).
  [[nodiscard]] double wrap(double s) const {
    double w = std::fmod(s, loop_length);
    if (w < 0.0) w += loop_length;
    // fmod of a value just below a multiple of the loop can round up to it.
    if (w >= loop_length) w = 0.0;
    return w;
  }

  /// Arc length travelled forward from `from` to reach `to`, in [0, loop_length).
  [[nodiscard]] double forward_arc(double from, double to) const { return wrap(to - from); }

  /// Signed shortest arc from `from` to `to`, in [-loop_length/2, loop_length/2).
  [[nodiscard]] double signed_arc(double from, double to) const {
    double d = forward_arc(from, to);
    if (d >= 0.5 * loop_length) d -= loop_length;
    return d;
  }
};

enum class Role : std::uint8_t { AV, EMV };

inline std::string_view to_string(Role r) { return r == Role::AV ? "AV" : "EMV"; }

struct VehicleSpec {
  Role role = Role::AV;
  double v_min = 7.0;
  double v_max = 20.0;
  double length = 4.0;
  double width = 2.0;
  double perception_radius = 20.0;

  static VehicleSpec av() { return {}; }
  static VehicleSpec emv() { return {Role::EMV, 7.0, 30.0, 6.0, 2.5, 20.0}; }

  void validate() const {
    if (!(v_min <= v_max)) throw std::invalid_argument("vehicle: v_min must be <= v_max");
    if (!(length > 0.0 && width > 0.0)) throw std::invalid_argument("vehicle: dimensions must be > 0");
    if (!(perception_radius > 0.0)) throw std::invalid_argument("vehicle: perception_radius must be > 0");
  }
};

/// The seven high-level commands. Enumerator order is also the tie-breaking
/// order used by the planners.
enum class Action : std::uint8_t {
  Accelerate = 0,
  Brake,
  HeavyAccelerate,
  HeavyBrake,
  ChangeLeft,
  ChangeRight,
  Keep,
};

inline constexpr int kNumActions = 7;

inline constexpr std::array<Action, kNumActions> kAllActions = {
    Action::Accelerate, Action::Brake,       Action::HeavyAccelerate, Action::HeavyBrake,
    Action::ChangeLeft, Action::ChangeRight, Action::Keep};

/// The longitudinal subset, in enumerator order.
inline constexpr std::array<Action, 5> kLongitudinalActions = {
    Action::Accelerate, Action::Brake, Action::HeavyAccelerate, Action::HeavyBrake, Action::Keep};

inline std::string_view to_string(Action a) {
  switch (a) {
    case Action::Accelerate: return "Accelerate";
    case Action::Brake: return "Brake";
    case Action::HeavyAccelerate: return "HeavyAccelerate";
    case Action::HeavyBrake: return "HeavyBrake";
    case Action::ChangeLeft: return "ChangeLeft";
    case Action::ChangeRight: return "ChangeRight";
    case Action::Keep: return "Keep";
  }
  return "?";
}

inline Action action_from_index(int i) {
  if (i < 0 || i >= kNumActions) throw std::out_of_range("action index " + std::to_string(i));
  return static_cast<Action>(i);
}

inline int index_of(Action a) { return static_cast<int>(a); }

/// Acceleration magnitudes (m/s^2) attached to the discrete commands.
struct ActionMagnitudes {
  double accelerate = 1.0;
  double heavy_accelerate = 2.5;
  double brake = 1.0;
  double heavy_brake = 3.0;

  [[nodiscard]] double acceleration(Action a) const {
    switch (a) {
      case Action::Accelerate: return accelerate;
      case Action::HeavyAccelerate: return heavy_accelerate;
      case Action::Brake: return -brake;
      case Action::HeavyBrake: return -heavy_brake;
      default: return 0.0;
    }
  }
};

struct LaneChange {
  int target_lane = 0;
  int steps_remaining = 0;
};

struct AgentState {
  int id = 0;
  VehicleSpec spec;
  double s = 0.0;  // centre position along the ring
  int lane = 0;
  double v = 0.0;
  std::optional<LaneChange> lane_change;
  bool collided_this_step = false;

  [[nodiscard]] bool is_emv() const { return spec.role == Role::EMV; }
  [[nodiscard]] bool changing_lane() const { return lane_change.has_value(); }

  /// True when the vehicle body touches `l` (a lane-changing vehicle occupies
  /// both its source and target lanes).
  [[nodiscard]] bool occupies(int l) const {
    return lane == l || (lane_change && lane_change->target_lane == l);
  }
};

/// Lateral position (m from the right road edge) of a vehicle, interpolating
/// between lane centres while a lane change is in progress.
inline double lateral_position(const AgentState& a, const TrackConfig& track) {
  double y = track.lane_centre(a.lane);
  if (a.lane_change) {
    const int n = track.lane_change_steps;
    const double progress = static_cast<double>(n - a.lane_change->steps_remaining) / n;
    y += progress * (a.lane_change->target_lane - a.lane) * track.lane_width;
  }
  return y;
}

/// Lateral velocity (m/s, positive to the left) implied by an ongoing lane change.
inline double lateral_velocity(const AgentState& a, const TrackConfig& track) {
  if (!a.lane_change) return 0.0;
  const double duration = track.lane_change_steps * track.dt;
  const double sign = a.lane_change->target_lane > a.lane ? 1.0 : -1.0;
  return sign * track.lane_width / duration;
}

}  // namespace emv
