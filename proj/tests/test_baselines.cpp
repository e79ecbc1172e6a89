#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "emv/baselines.hpp"
#include "support/oracles.hpp"

namespace {

using namespace emv;

AgentState make_agent(int id, double s, int lane, double v, bool emv = false) {
  AgentState a;
  a.id = id;
  a.spec = emv ? VehicleSpec::emv() : VehicleSpec::av();
  a.s = s;
  a.lane = lane;
  a.v = v;
  return a;
}

TEST(Gipps, AccelerationBranchAtDesiredSpeedHolds) {
  const GippsParams p;
  EXPECT_DOUBLE_EQ(gipps_acceleration_branch(20.0, 20.0, p), 20.0);
}

TEST(Gipps, FreeFlowValue) {
  GippsParams p;
  p.v_d = 20.0;
  const long double expected = 10.0L + 2.5L * 2.5L * 0.7L * 0.5L * std::sqrt(0.525L);
  EXPECT_NEAR(gipps_velocity(10.0, std::nullopt, p, 7.0, 20.0), static_cast<double>(expected), 1e-12);
  EXPECT_NEAR(static_cast<double>(expected), 11.585, 1e-3);
}

TEST(Gipps, HugeGapLeavesAccelerationBranch) {
  GippsParams p;
  p.v_d = 20.0;
  const double free = gipps_acceleration_branch(12.0, 20.0, p);
  EXPECT_DOUBLE_EQ(gipps_velocity(12.0, GippsLeader{1e4, 0.0}, p, 7.0, 20.0), free);
}

TEST(Gipps, NegativeDiscriminantCommandsMinimumSpeed) {
  const GippsParams p;
  const GippsLeader tail{-20.0, 0.0};
  EXPECT_FALSE(gipps_braking_branch(20.0, tail, p).has_value());
  EXPECT_EQ(gipps_velocity(20.0, tail, p, 7.0, 20.0), 7.0);
}

TEST(Gipps, OutputNeverExceedsEitherBranch) {
  const GippsParams p;
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> speed(0.0, 30.0);
  std::uniform_real_distribution<double> gap(-5.0, 150.0);
  for (int i = 0; i < 10000; ++i) {
    const double v = speed(rng);
    const GippsLeader leader{gap(rng), speed(rng)};
    const double out = gipps_velocity(v, leader, p, 7.0, 30.0);
    double bound = gipps_acceleration_branch(v, 30.0, p);
    if (auto b = gipps_braking_branch(v, leader, p)) bound = std::min(bound, *b);
    else bound = 7.0;
    EXPECT_LE(out, std::max(bound, 7.0) + 1e-12);
    EXPECT_GE(out, 7.0);
    EXPECT_LE(out, 30.0);
  }
}

TEST(Gipps, NearestLongitudinalAction) {
  const ActionMagnitudes m;
  EXPECT_EQ(nearest_longitudinal_action(0.1, m), Action::Keep);
  EXPECT_EQ(nearest_longitudinal_action(0.9, m), Action::Accelerate);
  EXPECT_EQ(nearest_longitudinal_action(5.0, m), Action::HeavyAccelerate);
  EXPECT_EQ(nearest_longitudinal_action(-2.2, m), Action::HeavyBrake);
  EXPECT_EQ(nearest_longitudinal_action(-1.4, m), Action::Brake);
  // Equidistant between Keep and Accelerate: lower index wins.
  EXPECT_EQ(nearest_longitudinal_action(0.5, m), Action::Accelerate);
}

class LaneRules : public ::testing::Test {
 protected:
  Environment env{EnvConfig{}};
  GippsParams p;
};

TEST_F(LaneRules, EmptyAdjacentLaneAttractsStuckVehicle) {
  env.set_agents({make_agent(0, 300.0, 0, 20.0, true), make_agent(1, 100.0, 0, 15.0), make_agent(2, 112.0, 0, 7.0)});
  EXPECT_EQ(gipps_lane_decision(env, 1, p), Action::ChangeLeft);
}

TEST_F(LaneRules, OccupiedAdjacentLaneKeeps) {
  env.set_agents({make_agent(0, 300.0, 0, 20.0, true), make_agent(1, 100.0, 0, 15.0), make_agent(2, 112.0, 0, 7.0),
                  make_agent(3, 105.0, 1, 15.0)});
  EXPECT_FALSE(lane_change_is_safe(env, 1, 1));
  EXPECT_EQ(gipps_lane_decision(env, 1, p), Action::Keep);
}

TEST_F(LaneRules, YieldRightToEmergencyVehicle) {
  env.set_agents({make_agent(0, 90.0, 1, 25.0, true), make_agent(1, 100.0, 1, 15.0)});
  EXPECT_EQ(gipps_lane_decision(env, 1, p), Action::ChangeRight);
  // Already in the rightmost lane: nothing to yield to.
  env.set_agents({make_agent(0, 90.0, 0, 25.0, true), make_agent(1, 100.0, 0, 15.0)});
  EXPECT_NE(gipps_lane_decision(env, 1, p), Action::ChangeRight);
}

TEST_F(LaneRules, NoNewDecisionDuringManoeuvre) {
  auto mover = make_agent(1, 100.0, 0, 15.0);
  mover.lane_change = LaneChange{1, 4};
  env.set_agents({make_agent(0, 90.0, 0, 25.0, true), mover, make_agent(2, 112.0, 0, 7.0)});
  EXPECT_EQ(gipps_lane_decision(env, 1, p), Action::Keep);
}

TEST_F(LaneRules, DecisionsArePure) {
  env.reset(12);
  const Environment twin = env;
  for (int i = 0; i < env.num_agents(); ++i) {
    EXPECT_EQ(gipps_action(env, i, p), gipps_action(twin, i, p));
    EXPECT_EQ(mpc_action(env, i, MpcParams{}, p), mpc_action(twin, i, MpcParams{}, p));
  }
}

// Platoons start on an open gap: evenly spaced, and every follower's speed is
// within its Gipps safe speed for the leader ahead.
std::vector<AgentState> open_gap_platoon(const EnvConfig& c, const GippsParams& p, std::mt19937_64& rng) {
  const int lanes = c.track.lanes;
  const int per_lane = (c.agents + lanes - 1) / lanes;
  const double spacing = c.track.loop_length / per_lane;
  std::uniform_real_distribution<double> speed(c.av.v_min, c.av.v_max);
  std::vector<AgentState> agents;
  for (int i = 0; i < c.agents; ++i) {
    const int lane = i % lanes;
    agents.push_back(make_agent(i, (i / lanes) * spacing + lane * 0.5 * spacing, lane, 0.0));
  }
  for (;;) {
    for (auto& a : agents) a.v = speed(rng);
    bool open = true;
    for (const auto& a : agents) {
      for (const auto& b : agents) {
        if (&a == &b || a.lane != b.lane) continue;
        const double ahead = c.track.forward_arc(a.s, b.s);
        if (std::abs(ahead - spacing) > 1e-9) continue;
        const auto safe = gipps_braking_branch(a.v, {ahead - 0.5 * (a.spec.length + b.spec.length), b.v}, p);
        open = open && safe && *safe >= a.v;
      }
    }
    if (open) return agents;
  }
}

TEST(GippsPlatoon, HomogeneousTrafficIsCollisionFree) {
  EnvConfig c;
  c.horizon = 400;
  const GippsParams p;
  std::mt19937_64 rng(33);
  int collisions = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Environment env{c};
    env.reset(seed);
    env.set_agents(open_gap_platoon(c, p, rng));
    while (!env.done()) {
      std::vector<Action> act(static_cast<std::size_t>(env.num_agents()));
      for (int i = 0; i < env.num_agents(); ++i) act[i] = gipps_action(env, i, p);
      collisions += static_cast<int>(env.step(act).collisions.size());
    }
  }
  EXPECT_EQ(collisions, 0);
}

// --- MPC -------------------------------------------------------------------

TEST(Mpc, RolloutExamples) {
  const MpcParams p;
  const std::vector<double> one{1.0};
  const auto x = mpc_rollout({10.0, 0.0, 15.0}, one, p);
  ASSERT_EQ(x.size(), 1u);
  EXPECT_NEAR(x[0].S, 9.995, 1e-12);
  EXPECT_NEAR(x[0].dV, -0.1, 1e-12);
  EXPECT_NEAR(x[0].V, 15.1, 1e-12);

  const std::vector<double> zeros{0.0, 0.0};
  const auto still = mpc_rollout({10.0, 0.0, 15.0}, zeros, p);
  EXPECT_EQ(still[1].S, 10.0);
  EXPECT_EQ(still[1].V, 15.0);
  const auto opening = mpc_rollout({10.0, 2.0, 15.0}, zeros, p);
  EXPECT_NEAR(opening[0].S, 10.2, 1e-12);
  EXPECT_NEAR(opening[1].S, 10.4, 1e-12);
}

TEST(Mpc, RolloutIsLinear) {
  const MpcParams p;
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> val(-20.0, 20.0);
  std::uniform_real_distribution<double> acc(-3.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    const MpcState x1{val(rng), val(rng), val(rng)};
    const MpcState x2{val(rng), val(rng), val(rng)};
    std::vector<double> u1(5), u2(5), u12(5), zero(5, 0.0);
    for (int t = 0; t < 5; ++t) {
      u1[t] = acc(rng);
      u2[t] = acc(rng);
      u12[t] = u1[t] + u2[t];
    }
    const auto a = mpc_rollout(x1 + x2, u12, p);
    const auto b = mpc_rollout(x1, u1, p);
    const auto c = mpc_rollout(x2, u2, p);
    const auto z = mpc_rollout({}, zero, p);
    for (int t = 0; t < 5; ++t) {
      const MpcState sum = b[t] + c[t] - z[t];
      EXPECT_NEAR(a[t].S, sum.S, 1e-9);
      EXPECT_NEAR(a[t].dV, sum.dV, 1e-9);
      EXPECT_NEAR(a[t].V, sum.V, 1e-9);
    }
  }
}

TEST(Mpc, EquilibriumCostsNothing) {
  const MpcParams p;
  const MpcDecision d = mpc_plan({15.0 * 1.2, 0.0, 15.0}, p, ActionMagnitudes{});
  EXPECT_EQ(d.action, Action::Keep);
  EXPECT_NEAR(d.cost, 0.0, 1e-24);
  for (Action a : d.sequence) EXPECT_EQ(a, Action::Keep);
}

TEST(Mpc, LargeGapAccelerates) {
  const MpcDecision d = mpc_plan({80.0, 0.0, 10.0}, MpcParams{}, ActionMagnitudes{});
  EXPECT_GT(ActionMagnitudes{}.acceleration(d.action), 0.0);
}

TEST(Mpc, InfeasibleFallsBackToHeavyBrake) {
  const MpcDecision d = mpc_plan({0.01, -10.0, 10.0}, MpcParams{}, ActionMagnitudes{});
  EXPECT_FALSE(d.feasible);
  EXPECT_EQ(d.action, Action::HeavyBrake);
}

TEST(Mpc, MatchesIndependentExhaustiveSearch) {
  MpcParams p;
  p.horizon = 3;
  const ActionMagnitudes m;
  std::vector<std::pair<int, double>> candidates;
  for (Action a : kLongitudinalActions) candidates.emplace_back(index_of(a), m.acceleration(a));
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> gap(0.05, 60.0);
  std::uniform_real_distribution<double> rel(-8.0, 8.0);
  std::uniform_real_distribution<double> own(0.05, 30.0);
  int feasible = 0;
  for (int i = 0; i < 1000; ++i) {
    oracle::MpcProblem q;
    q.x0 = {gap(rng), rel(rng), own(rng)};
    const oracle::MpcAnswer want = oracle::mpc_search(q, candidates);
    const MpcDecision got = mpc_plan({q.x0[0], q.x0[1], q.x0[2]}, p, m);
    if (want.first < 0) {
      EXPECT_FALSE(got.feasible);
      EXPECT_EQ(got.action, Action::HeavyBrake);
      continue;
    }
    ++feasible;
    ASSERT_TRUE(got.feasible);
    EXPECT_EQ(index_of(got.action), want.first) << q.x0[0] << ' ' << q.x0[1] << ' ' << q.x0[2];
    EXPECT_NEAR(got.cost, want.cost, 1e-9 * std::max(1.0, want.cost));
  }
  EXPECT_GT(feasible, 900);
}

TEST(Mpc, PlanCostIsSumOfNonNegativeStageCosts) {
  const MpcParams p;
  const ActionMagnitudes m;
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> gap(1.0, 60.0);
  std::uniform_real_distribution<double> rel(-8.0, 8.0);
  std::uniform_real_distribution<double> own(7.0, 30.0);
  for (int i = 0; i < 200; ++i) {
    const MpcState x0{gap(rng), rel(rng), own(rng)};
    const MpcDecision d = mpc_plan(x0, p, m);
    if (!d.feasible) continue;
    std::vector<double> u;
    for (Action a : d.sequence) u.push_back(m.acceleration(a));
    double cost = 0.0;
    for (const MpcState& x : mpc_rollout(x0, u, p)) {
      const double stage = mpc_stage_cost(x, p);
      EXPECT_GE(stage, 0.0);
      cost += stage;
    }
    // Summation order differs from the planner's incremental sum.
    EXPECT_NEAR(d.cost, cost, 1e-12 * std::max(1.0, cost));
  }
}

}  // namespace
