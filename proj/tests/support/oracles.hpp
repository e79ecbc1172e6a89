#pragma once

// Independent reference implementations used as test oracles. None of these
// call into the code under test.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace oracle {

// ---------------------------------------------------------------------------
// Braking-profile simulation

/// One body moving along an axis with a piecewise-constant acceleration:
/// `a_response` for `response` seconds, then `a_after` until its velocity
/// reaches zero, after which it stays put.
struct Profile {
  double v0 = 0.0;
  double response = 0.0;
  double a_response = 0.0;
  double a_after = 0.0;
};

struct Body {
  double x = 0.0;
  double v = 0.0;
  bool stopped = false;
};

// Advances with exact kinematics inside the step. While `braking`, a body whose
// velocity would cross zero stops exactly at zero and stays there.
inline void advance(Body& b, double a, double dt, bool braking) {
  if (b.stopped) return;
  if (braking && b.v == 0.0) {
    b.stopped = true;
    return;
  }
  const double v1 = b.v + a * dt;
  if (braking && b.v * v1 < 0.0) {
    const double t0 = -b.v / a;
    b.x += b.v * t0 + 0.5 * a * t0 * t0;
    b.v = 0.0;
    b.stopped = true;
    return;
  }
  b.x += b.v * dt + 0.5 * a * dt * dt;
  b.v = v1;
  if (braking && v1 == 0.0) b.stopped = true;
}

/// Largest value of (x_rear - x_front) over time, both starting at x = 0, with
/// a millisecond time step. The rear follows `rear`, the front `front`. The
/// minimal non-colliding initial gap equals this maximum (when positive).
inline double max_closing(const Profile& rear, const Profile& front, double dt = 1e-3) {
  Body r{0.0, rear.v0};
  Body f{0.0, front.v0};
  double worst = 0.0;
  double t = 0.0;
  // Braking phases end at zero velocity, so the horizon is bounded.
  const double horizon = 1.0 + std::max({rear.response, front.response}) +
                         (std::abs(rear.v0) + 10.0) / std::max(1e-3, std::abs(rear.a_after)) +
                         (std::abs(front.v0) + 10.0) / std::max(1e-3, std::abs(front.a_after));
  while (t < horizon) {
    const bool r_brakes = t >= rear.response - 1e-12;
    const bool f_brakes = t >= front.response - 1e-12;
    advance(r, r_brakes ? rear.a_after : rear.a_response, dt, r_brakes);
    advance(f, f_brakes ? front.a_after : front.a_response, dt, f_brakes);
    t += dt;
    worst = std::max(worst, r.x - f.x);
    if (r.stopped && f.stopped) break;
  }
  return worst;
}

/// Rear accelerates at a_max for rho, then brakes at `brake` to a stop; the
/// front brakes at b_max to a stop.
inline double lon_min_gap(double v_r, double v_f, double rho, double a_max, double brake, double b_max) {
  return max_closing(Profile{v_r, rho, a_max, -brake}, Profile{v_f, 0.0, -b_max, -b_max});
}

/// Lateral analogue. The pair axis points from the left vehicle to the right
/// one; positive v_left closes the gap, positive v_right opens it. Both bodies
/// push towards each other at a_lat for rho, then brake their lateral velocity
/// to zero at `brake`.
inline double lat_min_gap(double v_left, double v_right, double rho, double a_lat, double brake) {
  // The left body's velocity after the response decides its braking direction.
  const double vl_resp = v_left + rho * a_lat;
  const double vr_resp = v_right - rho * a_lat;
  const Profile left{v_left, rho, a_lat, vl_resp > 0 ? -brake : brake};
  const Profile right{v_right, rho, -a_lat, vr_resp > 0 ? -brake : brake};
  return max_closing(left, right);
}

// ---------------------------------------------------------------------------
// MPC exhaustive search (matrix form of the point-mass model)

struct MpcProblem {
  std::array<double, 3> x0{};  // gap, relative speed, own speed
  double dt = 0.1;
  double t_hw = 1.2;
  double S_max = 15.0;
  double dV_max = 8.0;
  double a_lo = -3.0;
  double a_hi = 3.0;
  int horizon = 3;
};

struct MpcAnswer {
  int first = -1;  // index into the action list; -1 when nothing is feasible
  double cost = std::numeric_limits<double>::infinity();
};

/// Recursive enumeration; candidate lists are (action id, acceleration) in
/// ascending action id, so the first minimum found is the tie-break winner.
inline MpcAnswer mpc_search(const MpcProblem& p, const std::vector<std::pair<int, double>>& actions) {
  Eigen::Matrix3d A;
  A << 1, p.dt, 0, 0, 1, 0, 0, 0, 1;
  const Eigen::Vector3d B(-0.5 * p.dt * p.dt, -p.dt, p.dt);
  MpcAnswer best;
  std::vector<int> prefix;
  std::function<void(const Eigen::Vector3d&, double)> rec = [&](const Eigen::Vector3d& x, double cost) {
    const int depth = static_cast<int>(prefix.size());
    if (depth == p.horizon) {
      if (cost < best.cost) {
        best.cost = cost;
        best.first = prefix.front();
      }
      return;
    }
    for (const auto& [id, u] : actions) {
      if (u < p.a_lo || u > p.a_hi) continue;
      const Eigen::Vector3d next = A * x + B * u;
      if (!(next(0) > 0.0 && next(2) > 0.0)) continue;
      const double e1 = (next(0) - next(2) * p.t_hw) / p.S_max;
      const double e2 = next(1) / p.dV_max;
      prefix.push_back(id);
      rec(next, cost + e1 * e1 + e2 * e2);
      prefix.pop_back();
    }
  };
  rec(Eigen::Vector3d(p.x0[0], p.x0[1], p.x0[2]), 0.0);
  return best;
}

// ---------------------------------------------------------------------------
// Returns and gradients

/// Discounted reward-to-go of every step, by direct summation.
inline std::vector<double> reward_to_go(const std::vector<double>& rewards, double gamma) {
  std::vector<double> out(rewards.size(), 0.0);
  for (std::size_t t = 0; t < rewards.size(); ++t) {
    double g = 0.0;
    double w = 1.0;
    for (std::size_t k = t; k < rewards.size(); ++k) {
      g += w * rewards[k];
      w *= gamma;
    }
    out[t] = g;
  }
  return out;
}

/// Central finite differences of f at x with step h.
inline std::vector<double> finite_difference(const std::function<double(const std::vector<double>&)>& f,
                                             std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// max_i |a_i - b_i| / max(|a_i| + |b_i|, floor).
inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(std::abs(a[i]) + std::abs(b[i]), floor));
  }
  return worst;
}

/// Plain dense forward pass: weights[l] is out x in, tanh on every layer but
/// the last.
inline Eigen::VectorXd dense_forward(const std::vector<Eigen::MatrixXd>& weights,
                                     const std::vector<Eigen::VectorXd>& biases, Eigen::VectorXd x) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    Eigen::VectorXd z(weights[l].rows());
    for (int r = 0; r < weights[l].rows(); ++r) {
      double s = biases[l](r);
      for (int c = 0; c < weights[l].cols(); ++c) s += weights[l](r, c) * x(c);
      z(r) = l + 1 < weights.size() ? std::tanh(s) : s;
    }
    x = z;
  }
  return x;
}

}  // namespace oracle
