#pragma once

#include <cstdint>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace emv {

enum class Mode : std::uint8_t { Cooperative, Competitive };

inline std::string_view to_string(Mode m) { return m == Mode::Cooperative ? "cooperative" : "competitive"; }

inline Mode mode_from_string(std::string_view s) {
  if (s == "cooperative") return Mode::Cooperative;
  if (s == "competitive") return Mode::Competitive;
  throw std::invalid_argument("unknown mode '" + std::string(s) + "' (expected cooperative|competitive)");
}

struct TrainConfig {
  int episodes = 2000;
  int steps_per_episode = 400;
  double actor_lr = 5e-4;
  double critic_lr = 5e-4;
  int ppo_epochs = 15;
  double clip = 0.2;
  double gamma = 0.9;
  double lambda = 0.95;
  double entropy_coef = 0.01;
  int minibatches = 4;
  std::uint64_t seed = 1;
  Mode mode = Mode::Cooperative;
  std::vector<int> hidden = {64, 64};
  // Cooperative mode only: one actor for every AV instead of one per AV.
  bool share_av_actor = true;
  bool value_normalization = true;
  double value_norm_beta = 0.9;
  double max_grad_norm = 0.0;  // <= 0 disables clipping
  int checkpoint_every = 0;    // iterations; 0 keeps only the final checkpoint

  void validate() const {
    if (episodes < 1) throw std::invalid_argument("train: episodes must be >= 1");
    if (steps_per_episode < 1) throw std::invalid_argument("train: steps_per_episode must be >= 1");
    if (!(actor_lr > 0 && critic_lr > 0)) throw std::invalid_argument("train: learning rates must be > 0");
    if (ppo_epochs < 1) throw std::invalid_argument("train: ppo_epochs must be >= 1");
    if (!(clip > 0 && clip < 1)) throw std::invalid_argument("train: clip must lie in (0, 1)");
    if (!(gamma > 0 && gamma <= 1)) throw std::invalid_argument("train: gamma must lie in (0, 1]");
    if (!(lambda >= 0 && lambda <= 1)) throw std::invalid_argument("train: lambda must lie in [0, 1]");
    if (entropy_coef < 0) throw std::invalid_argument("train: entropy_coef must be >= 0");
    if (minibatches < 1) throw std::invalid_argument("train: minibatches must be >= 1");
    if (hidden.empty()) throw std::invalid_argument("train: need at least one hidden layer");
    for (int h : hidden)
      if (h < 1) throw std::invalid_argument("train: hidden widths must be >= 1");
    if (!(value_norm_beta >= 0 && value_norm_beta < 1)) throw std::invalid_argument("train: value_norm_beta in [0, 1)");
    if (checkpoint_every < 0) throw std::invalid_argument("train: checkpoint_every must be >= 0");
  }
};

}  // namespace emv
