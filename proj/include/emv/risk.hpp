#pragma once

// Safe-distance bounds and the unified collision-risk index for a pair of
// vehicles.
//
// Lateral speeds follow a single axis pointing from the left vehicle towards
// the right vehicle: a positive v_left closes the gap, a positive v_right
// opens it.

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "emv/vehicle.hpp"

namespace emv {

struct RiskParams {
  double rho = 0.1;        // response time (s)
  double a_max = 2.5;      // max longitudinal acceleration during response
  double b_min = 1.0;      // min longitudinal braking of the rear vehicle
  double b_max = 2.5;      // max braking assumed for the front vehicle
  double B = 3.0;          // max capable longitudinal braking
  double a_lat_max = 1.0;  // max lateral acceleration during response
  double b_lat_min = 2.5;  // min lateral braking
  double B_lat = 4.0;      // max capable lateral braking
  double beta = 1.0;       // longitudinal risk propensity
  double gamma = 1.0;      // lateral risk propensity

  void validate() const {
    const bool rates_positive = rho > 0 && a_max > 0 && b_min > 0 && b_max > 0 && B > 0 &&
                                a_lat_max > 0 && b_lat_min > 0 && B_lat > 0;
    if (!rates_positive) throw std::invalid_argument("risk: all rates must be > 0");
    if (B < b_min) throw std::invalid_argument("risk: B must be >= b_min");
    if (B_lat < b_lat_min) throw std::invalid_argument("risk: B_lat must be >= b_lat_min");
    if (!(beta > 0 && gamma > 0)) throw std::invalid_argument("risk: beta and gamma must be > 0");
  }
};

struct PairKinematics {
  double v_r = 0.0;      // rear longitudinal speed
  double v_f = 0.0;      // front longitudinal speed
  double v_left = 0.0;   // lateral speed of the left vehicle
  double v_right = 0.0;  // lateral speed of the right vehicle
  double d_lon = 0.0;    // bumper-to-bumper gap
  double d_lat = 0.0;    // side-to-side gap
};

struct RiskAssessment {
  double d_lon_min = 0.0;
  double d_lon_min_brake = 0.0;
  double d_lat_min = 0.0;
  double d_lat_min_brake = 0.0;
  double r_lon = 0.0;
  double r_lat = 0.0;
  double r = 0.0;
  // Gaps the indices were evaluated at.
  double d_lon = 0.0;
  double d_lat = 0.0;
};

namespace detail {

inline double positive_part(double x) { return std::max(x, 0.0); }

// Piecewise-linear ramp shared by the longitudinal and lateral indices. When the
// ramp has no width (equal bounds, or a zero braking bound) the index is 0 above
// the safe distance and 1 otherwise.
inline double ramp_risk(double d, double d_min, double d_min_brake) {
  if (d_min > 0.0 && d >= d_min) return 0.0;
  if (d_min_brake > 0.0 && d_min > d_min_brake && d >= d_min_brake) {
    return 1.0 - (d - d_min_brake) / (d_min - d_min_brake);
  }
  return 1.0;
}

}  // namespace detail

/// Minimum safe longitudinal gap. The rear vehicle accelerates at a_max for
/// rho, then brakes at b_min (or B when `use_max_brake`); the front vehicle
/// brakes at b_max.
inline double lon_safe_distance(const PairKinematics& k, const RiskParams& p, bool use_max_brake) {
  const double brake = use_max_brake ? p.B : p.b_min;
  const double v_resp = k.v_r + p.rho * p.a_max;
  return detail::positive_part(k.v_r * p.rho + 0.5 * p.rho * p.rho * p.a_max +
                               v_resp * v_resp / (2.0 * brake) - k.v_f * k.v_f / (2.0 * p.b_max));
}

/// Minimum safe lateral gap. Both vehicles accelerate towards each other at
/// a_lat_max for rho, then brake laterally at b_lat_min (or B_lat).
inline double lat_safe_distance(const PairKinematics& k, const RiskParams& p, bool use_max_brake) {
  const double brake = use_max_brake ? p.B_lat : p.b_lat_min;
  const double v_left_resp = k.v_left + p.rho * p.a_lat_max;
  const double v_right_resp = k.v_right - p.rho * p.a_lat_max;
  const double left_travel =
      0.5 * (k.v_left + v_left_resp) * p.rho + v_left_resp * v_left_resp / (2.0 * brake);
  const double right_travel =
      0.5 * (k.v_right + v_right_resp) * p.rho - v_right_resp * v_right_resp / (2.0 * brake);
  return detail::positive_part(left_travel - right_travel);
}

inline double lon_risk(const PairKinematics& k, const RiskParams& p) {
  return detail::ramp_risk(k.d_lon, lon_safe_distance(k, p, false), lon_safe_distance(k, p, true));
}

inline double lat_risk(const PairKinematics& k, const RiskParams& p) {
  return detail::ramp_risk(k.d_lat, lat_safe_distance(k, p, false), lat_safe_distance(k, p, true));
}

/// r = r_lon^beta * r_lat^gamma, with 0^x taken as 0.
inline double unified_risk(double r_lon, double r_lat, const RiskParams& p) {
  if (r_lon <= 0.0 || r_lat <= 0.0) return 0.0;
  return std::clamp(std::pow(r_lon, p.beta) * std::pow(r_lat, p.gamma), 0.0, 1.0);
}

inline RiskAssessment assess(const PairKinematics& k, const RiskParams& p) {
  RiskAssessment out;
  out.d_lon = k.d_lon;
  out.d_lat = k.d_lat;
  out.d_lon_min = lon_safe_distance(k, p, false);
  out.d_lon_min_brake = lon_safe_distance(k, p, true);
  out.d_lat_min = lat_safe_distance(k, p, false);
  out.d_lat_min_brake = lat_safe_distance(k, p, true);
  out.r_lon = detail::ramp_risk(k.d_lon, out.d_lon_min, out.d_lon_min_brake);
  out.r_lat = detail::ramp_risk(k.d_lat, out.d_lat_min, out.d_lat_min_brake);
  out.r = unified_risk(out.r_lon, out.r_lat, p);
  return out;
}

/// Maps two simulator vehicles onto pair kinematics. The front vehicle is the
/// one reached along the shorter forward arc; gaps are edge-to-edge.
inline PairKinematics pair_kinematics(const AgentState& a, const AgentState& b, const TrackConfig& track) {
  PairKinematics k;
  const double ahead = track.forward_arc(a.s, b.s);
  const bool b_in_front = ahead <= 0.5 * track.loop_length;
  const double centre_gap = b_in_front ? ahead : track.loop_length - ahead;
  k.d_lon = centre_gap - 0.5 * (a.spec.length + b.spec.length);
  k.v_r = b_in_front ? a.v : b.v;
  k.v_f = b_in_front ? b.v : a.v;

  const double ya = lateral_position(a, track);
  const double yb = lateral_position(b, track);
  k.d_lat = std::abs(ya - yb) - 0.5 * (a.spec.width + b.spec.width);
  // Our lateral axis grows to the left; the pair axis points from left to right.
  const bool a_is_left = ya >= yb;
  const double va = -lateral_velocity(a, track);
  const double vb = -lateral_velocity(b, track);
  k.v_left = a_is_left ? va : vb;
  k.v_right = a_is_left ? vb : va;
  return k;
}

inline RiskAssessment assess_pair(const AgentState& a, const AgentState& b, const TrackConfig& track,
                                  const RiskParams& p) {
  const PairKinematics k = pair_kinematics(a, b, track);
  RiskAssessment out = assess(k, p);
  if (k.d_lon <= 0.0 && k.d_lat <= 0.0) {
    // Bodies overlap: collision state.
    out.r_lon = 1.0;
    out.r_lat = 1.0;
    out.r = 1.0;
  }
  return out;
}

}  // namespace emv
