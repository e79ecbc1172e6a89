#pragma once

// Per-episode traffic metrics gathered step by step.

#include <cstddef>

#include "emv/env.hpp"

namespace emv {

struct EpisodeMetrics {
  double summed_reward = 0.0;    // over all agents and steps
  double emv_speed = 0.0;        // m/s, mean over steps
  double av_speed = 0.0;         // m/s, mean over steps and AVs
  int collisions = 0;            // collision events
  double mean_risk = 0.0;        // over (step, agent)
  double emv_risk = 0.0;         // EMV's own risk, mean over steps
  double safety_distance = 0.0;  // mean same-lane leading gap over (step, agent)
  int steps = 0;
};

class EpisodeAccumulator {
 public:
  /// Call after every env.step with the returned outcome.
  void record(const Environment& env, const StepOutcome& out) {
    ++steps_;
    for (double r : out.rewards) reward_ += r;
    collisions_ += static_cast<int>(out.collisions.size());
    for (int i = 0; i < env.num_agents(); ++i) {
      const AgentState& a = env.agents()[i];
      risk_ += out.risk[i];
      gap_ += env.leading_gap(i);
      ++agent_steps_;
      if (a.is_emv()) {
        emv_ += a.v;
        emv_risk_ += out.risk[i];
        ++emv_samples_;
      } else {
        av_ += a.v;
        ++av_samples_;
      }
    }
  }

  [[nodiscard]] EpisodeMetrics finish() const {
    EpisodeMetrics m;
    m.summed_reward = reward_;
    m.collisions = collisions_;
    m.steps = steps_;
    if (emv_samples_ > 0) {
      m.emv_speed = emv_ / static_cast<double>(emv_samples_);
      m.emv_risk = emv_risk_ / static_cast<double>(emv_samples_);
    }
    if (av_samples_ > 0) m.av_speed = av_ / static_cast<double>(av_samples_);
    if (agent_steps_ > 0) {
      m.mean_risk = risk_ / static_cast<double>(agent_steps_);
      m.safety_distance = gap_ / static_cast<double>(agent_steps_);
    }
    return m;
  }

 private:
  double reward_ = 0.0;
  double risk_ = 0.0;
  double gap_ = 0.0;
  double emv_ = 0.0;
  double emv_risk_ = 0.0;
  double av_ = 0.0;
  std::size_t emv_samples_ = 0;
  std::size_t av_samples_ = 0;
  std::size_t agent_steps_ = 0;
  int collisions_ = 0;
  int steps_ = 0;
};

}  // namespace emv
