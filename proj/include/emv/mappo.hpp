#pragma once

// Multi-agent PPO with a centralised critic: rollout collection, GAE, the
// clipped actor and critic objectives, minibatch updates and the training loop.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "emv/env.hpp"
#include "emv/episode.hpp"
#include "emv/neural.hpp"
#include "emv/serialize.hpp"
#include "emv/train_config.hpp"

namespace emv {

/// SplitMix64 finaliser; derives independent stream seeds from a base seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Value normalisation

/// Running mean / variance of value targets. The critic predicts normalised
/// values; when the statistics move, the critic's output layer is rescaled so
/// its denormalised predictions are unchanged.
struct ValueNorm {
  bool enabled = true;
  double beta = 0.9;
  double running_mean = 0.0;
  double running_sq = 0.0;
  double debias = 0.0;

  [[nodiscard]] double mean() const { return debias > 0.0 ? running_mean / debias : 0.0; }
  [[nodiscard]] double stddev() const {
    if (debias <= 0.0) return 1.0;
    const double m = mean();
    return std::sqrt(std::max(running_sq / debias - m * m, 1e-4));
  }
  [[nodiscard]] double normalize(double v) const { return enabled ? (v - mean()) / stddev() : v; }
  [[nodiscard]] double denormalize(double v) const { return enabled ? v * stddev() + mean() : v; }

  void update(std::span<const double> targets, nn::Mlp& critic) {
    if (!enabled || targets.empty()) return;
    const double old_mean = mean();
    const double old_std = stddev();
    double sum = 0.0;
    double sq = 0.0;
    for (double t : targets) {
      sum += t;
      sq += t * t;
    }
    const double n = static_cast<double>(targets.size());
    running_mean = beta * running_mean + (1.0 - beta) * sum / n;
    running_sq = beta * running_sq + (1.0 - beta) * sq / n;
    debias = beta * debias + (1.0 - beta);
    const double new_mean = mean();
    const double new_std = stddev();
    auto& out = critic.layers.back();
    out.weight *= old_std / new_std;
    out.bias = ((out.bias * old_std).array() + (old_mean - new_mean)).matrix() / new_std;
    ++critic.version;
  }
};

// ---------------------------------------------------------------------------
// Networks

struct Network {
  nn::Mlp net;
  nn::AdamState opt;
};

/// Actors and critics for one run. `actor_of[i]` / `critic_of[i]` route agent
/// i to its networks: cooperative play shares one AV actor and one critic,
/// competitive play gives every agent its own pair.
struct PolicyBundle {
  Mode mode = Mode::Cooperative;
  std::vector<Role> roles;
  std::vector<int> actor_of;
  std::vector<int> critic_of;
  std::vector<Network> actors;
  std::vector<Network> critics;
  std::vector<ValueNorm> value_norms;  // one per critic

  [[nodiscard]] int num_agents() const { return static_cast<int>(roles.size()); }
};

inline std::vector<int> layer_widths(int input, const std::vector<int>& hidden, int output) {
  std::vector<int> w{input};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(output);
  return w;
}

inline PolicyBundle make_bundle(const EnvConfig& env, const TrainConfig& cfg) {
  env.validate();
  cfg.validate();
  PolicyBundle b;
  b.mode = cfg.mode;
  const int n = env.agents;
  for (int i = 0; i < n; ++i) b.roles.push_back(i == 0 ? Role::EMV : Role::AV);
  std::mt19937_64 rng(mix_seed(cfg.seed, 1));

  const auto actor_shape = layer_widths(env.observation_size(), cfg.hidden, kNumActions);
  const auto critic_shape = layer_widths(env.global_feature_size(), cfg.hidden, 1);
  auto new_actor = [&] {
    auto net = nn::make_mlp(actor_shape, 0.01, rng);
    auto opt = nn::AdamState::for_params(net, cfg.actor_lr);
    return Network{std::move(net), std::move(opt)};
  };
  auto new_critic = [&] {
    auto net = nn::make_mlp(critic_shape, 1.0, rng);
    auto opt = nn::AdamState::for_params(net, cfg.critic_lr);
    return Network{std::move(net), std::move(opt)};
  };

  if (cfg.mode == Mode::Cooperative && cfg.share_av_actor) {
    b.actors.push_back(new_actor());  // EMV
    if (n > 1) b.actors.push_back(new_actor());
    for (int i = 0; i < n; ++i) b.actor_of.push_back(i == 0 ? 0 : 1);
  } else {
    for (int i = 0; i < n; ++i) {
      b.actors.push_back(new_actor());
      b.actor_of.push_back(i);
    }
  }
  if (cfg.mode == Mode::Cooperative) {
    b.critics.push_back(new_critic());
    b.critic_of.assign(static_cast<std::size_t>(n), 0);
  } else {
    for (int i = 0; i < n; ++i) {
      b.critics.push_back(new_critic());
      b.critic_of.push_back(i);
    }
  }
  ValueNorm vn;
  vn.enabled = cfg.value_normalization;
  vn.beta = cfg.value_norm_beta;
  b.value_norms.assign(b.critics.size(), vn);
  return b;
}

namespace detail {

inline nn::Matrix gather_columns(const std::vector<FeatureVector>& rows, const std::vector<int>& which) {
  const int dim = rows.empty() ? 0 : static_cast<int>(rows.front().size());
  nn::Matrix m(dim, static_cast<int>(which.size()));
  for (std::size_t c = 0; c < which.size(); ++c) {
    const auto& r = rows[static_cast<std::size_t>(which[c])];
    for (int k = 0; k < dim; ++k) m(k, static_cast<int>(c)) = r[static_cast<std::size_t>(k)];
  }
  return m;
}

// Agents grouped by network index, in ascending agent order.
inline std::vector<std::vector<int>> group_agents(const std::vector<int>& net_of, std::size_t networks) {
  std::vector<std::vector<int>> groups(networks);
  for (std::size_t i = 0; i < net_of.size(); ++i) groups[static_cast<std::size_t>(net_of[i])].push_back(static_cast<int>(i));
  return groups;
}

}  // namespace detail

struct PolicyDecision {
  std::vector<int> actions;
  std::vector<double> log_probs;
};

/// One action per agent. Samples from each actor's categorical distribution
/// when `rng` is given, otherwise takes the argmax. Sampling consumes the
/// generator in ascending agent order.
template <typename Rng>
PolicyDecision decide(const PolicyBundle& b, const std::vector<FeatureVector>& obs, Rng* rng) {
  if (static_cast<int>(obs.size()) != b.num_agents()) {
    throw std::invalid_argument("policy: bundle trained for " + std::to_string(b.num_agents()) + " agents, got " +
                                std::to_string(obs.size()));
  }
  const auto groups = detail::group_agents(b.actor_of, b.actors.size());
  std::vector<nn::Matrix> logits(b.actors.size());
  std::vector<int> column(obs.size(), 0);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) continue;
    logits[g] = nn::mlp_forward(b.actors[g].net, detail::gather_columns(obs, groups[g]));
    for (std::size_t c = 0; c < groups[g].size(); ++c) column[static_cast<std::size_t>(groups[g][c])] = static_cast<int>(c);
  }
  PolicyDecision d;
  d.actions.resize(obs.size());
  d.log_probs.resize(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const nn::Vector z = logits[static_cast<std::size_t>(b.actor_of[i])].col(column[i]);
    const int a = rng ? nn::categorical_sample(z, *rng) : nn::argmax(z);
    d.actions[i] = a;
    d.log_probs[i] = nn::categorical_logprob_entropy(z, a).log_prob;
  }
  return d;
}

inline std::vector<Action> to_actions(const std::vector<int>& indices) {
  std::vector<Action> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(action_from_index(i));
  return out;
}

/// Denormalised critic values for every agent.
inline std::vector<double> evaluate_values(const PolicyBundle& b, const std::vector<FeatureVector>& global) {
  const auto groups = detail::group_agents(b.critic_of, b.critics.size());
  std::vector<double> v(global.size(), 0.0);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) continue;
    const nn::Matrix out = nn::mlp_forward(b.critics[g].net, detail::gather_columns(global, groups[g]));
    for (std::size_t c = 0; c < groups[g].size(); ++c) {
      v[static_cast<std::size_t>(groups[g][c])] = b.value_norms[g].denormalize(out(0, static_cast<int>(c)));
    }
  }
  return v;
}

// ---------------------------------------------------------------------------
// Rollouts

/// Transitions for one iteration in structure-of-arrays form. Record k belongs
/// to step k / agents and agent k % agents. Values are in return units.
struct RolloutBuffer {
  int agents = 0;
  int steps = 0;
  nn::Matrix obs;     // observation_size x records
  nn::Matrix global;  // global_feature_size x records
  std::vector<int> action;
  std::vector<double> log_prob;
  std::vector<double> value;
  std::vector<double> reward;
  std::vector<std::uint8_t> done;
  std::vector<double> advantage;
  std::vector<double> ret;

  [[nodiscard]] int size() const { return agents * steps; }
  [[nodiscard]] int index(int t, int agent) const { return t * agents + agent; }
  [[nodiscard]] int agent_of(int k) const { return k % agents; }
  [[nodiscard]] bool has_advantages() const { return static_cast<int>(advantage.size()) == size(); }
};

struct Rollout {
  RolloutBuffer buffer;
  EpisodeMetrics metrics;
};

/// Runs `steps` joint steps from the environment's current state, sampling
/// every agent's action from its actor. The final step is marked terminal.
template <typename Rng>
Rollout collect_rollout(Environment& env, const PolicyBundle& b, int steps, Rng& rng) {
  if (steps < 1) throw std::invalid_argument("rollout: steps must be >= 1");
  if (env.num_agents() != b.num_agents()) throw std::invalid_argument("rollout: agent count does not match the bundle");
  if (env.step_count() + steps > env.config().horizon) throw std::invalid_argument("rollout: steps exceed the horizon");
  const int n = env.num_agents();
  Rollout r;
  RolloutBuffer& buf = r.buffer;
  buf.agents = n;
  buf.steps = steps;
  const int records = n * steps;
  buf.obs.resize(env.config().observation_size(), records);
  buf.global.resize(env.config().global_feature_size(), records);
  buf.action.resize(records);
  buf.log_prob.resize(records);
  buf.value.resize(records);
  buf.reward.resize(records);
  buf.done.resize(records);

  EpisodeAccumulator acc;
  Observations obs = env.observe_all();
  for (int t = 0; t < steps; ++t) {
    const PolicyDecision d = decide(b, obs.local, &rng);
    const std::vector<double> values = evaluate_values(b, obs.global);
    for (int i = 0; i < n; ++i) {
      const int k = buf.index(t, i);
      buf.obs.col(k) = Eigen::Map<const nn::Vector>(obs.local[i].data(), static_cast<int>(obs.local[i].size()));
      buf.global.col(k) = Eigen::Map<const nn::Vector>(obs.global[i].data(), static_cast<int>(obs.global[i].size()));
      buf.action[k] = d.actions[i];
      buf.log_prob[k] = d.log_probs[i];
      buf.value[k] = values[i];
    }
    StepOutcome out = env.step(to_actions(d.actions));
    acc.record(env, out);
    const bool terminal = out.done || t + 1 == steps;
    for (int i = 0; i < n; ++i) {
      const int k = buf.index(t, i);
      buf.reward[k] = out.rewards[i];
      buf.done[k] = terminal ? 1 : 0;
    }
    obs = std::move(out.obs);
  }
  r.metrics = acc.finish();
  return r;
}

// ---------------------------------------------------------------------------
// Advantage estimation

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// Backward GAE recursion over one agent's sequence. `values` carries one
/// entry per step plus the bootstrap value of the state after the last step;
/// done[t] = 1 means the episode ended with step t.
inline GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                             std::span<const std::uint8_t> dones, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n + 1) throw std::invalid_argument("gae: values need one bootstrap entry past the last step");
  if (dones.size() != n) throw std::invalid_argument("gae: dones and rewards differ in length");
  GaeResult g;
  g.advantages.assign(n, 0.0);
  g.returns.assign(n, 0.0);
  double next = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double mask = dones[t] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * mask * values[t + 1] - values[t];
    next = delta + gamma * lambda * mask * next;
    g.advantages[t] = next;
    g.returns[t] = next + values[t];
  }
  return g;
}

/// Shifts and scales in place to zero mean and unit (population) deviation.
inline void normalize_advantages(std::vector<double>& a) {
  if (a.empty()) return;
  const double n = static_cast<double>(a.size());
  const double mean = std::accumulate(a.begin(), a.end(), 0.0) / n;
  double var = 0.0;
  for (double x : a) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / n);
  for (double& x : a) x = (x - mean) / (sd + 1e-12);
}

/// Per-agent GAE over a buffer (bootstrap 0 after the last step), then
/// batch-wide advantage normalisation.
inline void compute_advantages(RolloutBuffer& buf, double gamma, double lambda, bool normalize = true) {
  const int n = buf.agents;
  const int T = buf.steps;
  buf.advantage.assign(static_cast<std::size_t>(buf.size()), 0.0);
  buf.ret.assign(static_cast<std::size_t>(buf.size()), 0.0);
  std::vector<double> r(static_cast<std::size_t>(T));
  std::vector<double> v(static_cast<std::size_t>(T) + 1);
  std::vector<std::uint8_t> d(static_cast<std::size_t>(T));
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t < T; ++t) {
      const int k = buf.index(t, i);
      r[t] = buf.reward[k];
      v[t] = buf.value[k];
      d[t] = buf.done[k];
    }
    v[T] = 0.0;
    const GaeResult g = compute_gae(r, v, d, gamma, lambda);
    for (int t = 0; t < T; ++t) {
      buf.advantage[buf.index(t, i)] = g.advantages[t];
      buf.ret[buf.index(t, i)] = g.returns[t];
    }
  }
  if (normalize) normalize_advantages(buf.advantage);
}

// ---------------------------------------------------------------------------
// Objectives

struct ActorBatch {
  nn::Matrix obs;  // one column per sample
  std::vector<int> actions;
  std::vector<double> old_log_probs;
  std::vector<double> advantages;
};

struct ActorResult {
  double objective = 0.0;  // surrogate + entropy bonus, to be maximised
  double surrogate = 0.0;
  double entropy = 0.0;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  nn::MlpGradient grad;  // d objective / d params
};

/// Clipped surrogate mean(min(r A, clip(r, 1-eps, 1+eps) A)) + sigma * mean(H).
/// `workspace` lets repeated calls reuse activation storage.
inline ActorResult actor_objective(const nn::Mlp& actor, const ActorBatch& batch, double eps, double sigma,
                                   nn::ForwardCache* workspace = nullptr) {
  const int n = static_cast<int>(batch.actions.size());
  if (n == 0) throw std::invalid_argument("actor: empty batch");
  if (batch.obs.cols() != n || static_cast<int>(batch.old_log_probs.size()) != n ||
      static_cast<int>(batch.advantages.size()) != n) {
    throw std::invalid_argument("actor: batch fields differ in length");
  }
  nn::ForwardCache local;
  nn::ForwardCache& cache = workspace ? *workspace : local;
  const nn::Matrix& logits = nn::mlp_forward(actor, batch.obs, cache);
  if (!logits.allFinite()) throw std::runtime_error("actor: non-finite logits");

  // Column-wise log-softmax.
  nn::Matrix lp = logits.rowwise() - logits.colwise().maxCoeff();
  const Eigen::RowVectorXd lse = lp.array().exp().colwise().sum().log();
  lp.rowwise() -= lse;
  const nn::Matrix p = lp.array().exp();
  const Eigen::RowVectorXd entropy = -(p.array() * lp.array()).colwise().sum();

  nn::Matrix d_logits(logits.rows(), n);
  ActorResult res;
  int clipped = 0;
  for (int c = 0; c < n; ++c) {
    const int a = batch.actions[c];
    if (a < 0 || a >= logits.rows()) throw std::out_of_range("actor: action index out of range");
    const double log_ratio = lp(a, c) - batch.old_log_probs[c];
    const double ratio = std::exp(log_ratio);
    if (!std::isfinite(ratio)) throw std::runtime_error("actor: non-finite probability ratio");
    const double adv = batch.advantages[c];
    const double unclipped_term = ratio * adv;
    const double clipped_term = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * adv;
    const bool inside = ratio >= 1.0 - eps && ratio <= 1.0 + eps;
    const bool unclipped_active = inside || unclipped_term < clipped_term;

    res.surrogate += std::min(unclipped_term, clipped_term);
    res.mean_ratio += ratio;
    res.approx_kl += (ratio - 1.0) - log_ratio;
    if (!inside) ++clipped;

    // d/dz of r A is A r (onehot - p); of H it is -p (log p + H).
    d_logits.col(c) = -sigma * p.col(c).cwiseProduct(lp.col(c).array().matrix() + nn::Vector::Constant(lp.rows(), entropy(c)));
    if (unclipped_active) {
      d_logits.col(c) -= adv * ratio * p.col(c);
      d_logits(a, c) += adv * ratio;
    }
  }
  d_logits /= n;
  res.entropy = entropy.mean();
  res.surrogate /= n;
  res.mean_ratio /= n;
  res.approx_kl /= n;
  res.clip_fraction = static_cast<double>(clipped) / n;
  res.objective = res.surrogate + sigma * res.entropy;
  res.grad = nn::mlp_gradient(actor, cache, d_logits, false);
  return res;
}

struct CriticBatch {
  nn::Matrix global;                // one column per sample
  std::vector<double> old_values;   // in critic output units
  std::vector<double> returns;      // in critic output units
};

struct CriticResult {
  double loss = 0.0;
  nn::MlpGradient grad;  // d loss / d params
};

/// mean(max((V - R)^2, (V_old + clip(V - V_old, -eps, eps) - R)^2)).
inline CriticResult critic_loss(const nn::Mlp& critic, const CriticBatch& batch, double eps,
                                nn::ForwardCache* workspace = nullptr) {
  const int n = static_cast<int>(batch.returns.size());
  if (n == 0) throw std::invalid_argument("critic: empty batch");
  if (batch.global.cols() != n || static_cast<int>(batch.old_values.size()) != n) {
    throw std::invalid_argument("critic: batch fields differ in length");
  }
  nn::ForwardCache local;
  nn::ForwardCache& cache = workspace ? *workspace : local;
  const nn::Matrix& out = nn::mlp_forward(critic, batch.global, cache);
  nn::Matrix d_out(1, n);
  CriticResult res;
  for (int c = 0; c < n; ++c) {
    const double v = out(0, c);
    const double v_old = batch.old_values[c];
    const double target = batch.returns[c];
    const double delta = std::clamp(v - v_old, -eps, eps);
    const double v_clip = v_old + delta;
    const double e1 = (v - target) * (v - target);
    const double e2 = (v_clip - target) * (v_clip - target);
    double grad = 0.0;
    if (e1 >= e2) {
      res.loss += e1;
      grad = 2.0 * (v - target);
    } else {
      res.loss += e2;
      const bool inside = std::abs(v - v_old) < eps;
      grad = inside ? 2.0 * (v_clip - target) : 0.0;
    }
    d_out(0, c) = grad / n;
  }
  res.loss /= n;
  res.grad = nn::mlp_gradient(critic, cache, d_out, false);
  return res;
}

/// Scales `g` so its global L2 norm is at most `max_norm`.
inline void clip_gradient_norm(nn::MlpGradient& g, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (const auto& w : g.weight) sq += w.squaredNorm();
  for (const auto& b : g.bias) sq += b.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) g *= max_norm / norm;
}

// ---------------------------------------------------------------------------
// Update

struct UpdateStats {
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  double first_clip_fraction = 0.0;  // first minibatch of the first epoch
  double entropy = 0.0;
  double actor_objective = 0.0;
  double critic_loss = 0.0;
  double approx_kl = 0.0;
  int actor_steps = 0;   // Adam steps summed over actors
  int critic_steps = 0;  // Adam steps summed over critics
};

/// PPO epochs over a buffer with advantages and returns. Each epoch reshuffles
/// the records and splits them into equal minibatches; every network takes one
/// Adam step per minibatch on its own agents' records.
template <typename Rng>
UpdateStats ppo_update(const RolloutBuffer& buf, PolicyBundle& b, const TrainConfig& cfg, Rng& rng) {
  if (!buf.has_advantages()) throw std::logic_error("ppo: advantages not computed");
  UpdateStats s;
  const int records = buf.size();
  std::vector<int> order(static_cast<std::size_t>(records));
  std::iota(order.begin(), order.end(), 0);
  int actor_calls = 0;
  int critic_calls = 0;
  bool first = true;
  std::vector<nn::ForwardCache> actor_ws(b.actors.size());
  std::vector<nn::ForwardCache> critic_ws(b.critics.size());

  for (int epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int mb = 0; mb < cfg.minibatches; ++mb) {
      const int lo = static_cast<int>(static_cast<long long>(records) * mb / cfg.minibatches);
      const int hi = static_cast<int>(static_cast<long long>(records) * (mb + 1) / cfg.minibatches);
      std::vector<std::vector<int>> by_actor(b.actors.size());
      std::vector<std::vector<int>> by_critic(b.critics.size());
      for (int p = lo; p < hi; ++p) {
        const int k = order[static_cast<std::size_t>(p)];
        const int agent = buf.agent_of(k);
        by_actor[static_cast<std::size_t>(b.actor_of[agent])].push_back(k);
        by_critic[static_cast<std::size_t>(b.critic_of[agent])].push_back(k);
      }

      double first_clipped = 0.0;
      int first_count = 0;
      for (std::size_t g = 0; g < b.actors.size(); ++g) {
        const auto& idx = by_actor[g];
        if (idx.empty()) continue;
        ActorBatch batch;
        batch.obs = buf.obs(Eigen::all, idx);
        for (int k : idx) {
          batch.actions.push_back(buf.action[k]);
          batch.old_log_probs.push_back(buf.log_prob[k]);
          batch.advantages.push_back(buf.advantage[k]);
        }
        ActorResult res = actor_objective(b.actors[g].net, batch, cfg.clip, cfg.entropy_coef, &actor_ws[g]);
        res.grad *= -1.0;  // ascend the objective
        clip_gradient_norm(res.grad, cfg.max_grad_norm);
        nn::adam_update(b.actors[g].opt, b.actors[g].net, res.grad);
        s.mean_ratio += res.mean_ratio;
        s.clip_fraction += res.clip_fraction;
        s.entropy += res.entropy;
        s.actor_objective += res.objective;
        s.approx_kl += res.approx_kl;
        ++s.actor_steps;
        ++actor_calls;
        first_clipped += res.clip_fraction * static_cast<double>(idx.size());
        first_count += static_cast<int>(idx.size());
      }
      if (first) {
        s.first_clip_fraction = first_count > 0 ? first_clipped / first_count : 0.0;
        first = false;
      }

      for (std::size_t g = 0; g < b.critics.size(); ++g) {
        const auto& idx = by_critic[g];
        if (idx.empty()) continue;
        const ValueNorm& vn = b.value_norms[g];
        CriticBatch batch;
        batch.global = buf.global(Eigen::all, idx);
        for (int k : idx) {
          batch.old_values.push_back(vn.normalize(buf.value[k]));
          batch.returns.push_back(vn.normalize(buf.ret[k]));
        }
        CriticResult res = critic_loss(b.critics[g].net, batch, cfg.clip, &critic_ws[g]);
        clip_gradient_norm(res.grad, cfg.max_grad_norm);
        nn::adam_update(b.critics[g].opt, b.critics[g].net, res.grad);
        s.critic_loss += res.loss;
        ++s.critic_steps;
        ++critic_calls;
      }
    }
  }
  if (actor_calls > 0) {
    s.mean_ratio /= actor_calls;
    s.clip_fraction /= actor_calls;
    s.entropy /= actor_calls;
    s.actor_objective /= actor_calls;
    s.approx_kl /= actor_calls;
  }
  if (critic_calls > 0) s.critic_loss /= critic_calls;
  return s;
}

/// Refreshes each critic's value normaliser from the buffer's returns.
inline void update_value_norms(const RolloutBuffer& buf, PolicyBundle& b) {
  std::vector<std::vector<double>> targets(b.critics.size());
  for (int k = 0; k < buf.size(); ++k) targets[static_cast<std::size_t>(b.critic_of[buf.agent_of(k)])].push_back(buf.ret[k]);
  for (std::size_t g = 0; g < b.critics.size(); ++g) b.value_norms[g].update(targets[g], b.critics[g].net);
}

// ---------------------------------------------------------------------------
// Checkpoints

/// Writes every network plus manifest.json into `dir`.
inline void save_bundle(const std::filesystem::path& dir, const PolicyBundle& b, const EnvConfig& env, int iteration) {
  std::filesystem::create_directories(dir);
  Json manifest;
  manifest["format"] = "emv-policy-bundle";
  manifest["mode"] = std::string(to_string(b.mode));
  Json roles = Json::array();
  for (Role r : b.roles) roles.push_back(std::string(to_string(r)));
  manifest["roles"] = roles;
  manifest["actor_of"] = b.actor_of;
  manifest["critic_of"] = b.critic_of;
  manifest["env_config_hash"] = config_hash(env);
  manifest["iteration"] = iteration;
  Json actors = Json::array();
  for (std::size_t i = 0; i < b.actors.size(); ++i) {
    const std::string name = "actor_" + std::to_string(i) + ".bin";
    nn::save_checkpoint(dir / name, b.actors[i].net);
    actors.push_back(name);
  }
  Json critics = Json::array();
  for (std::size_t i = 0; i < b.critics.size(); ++i) {
    const std::string name = "critic_" + std::to_string(i) + ".bin";
    nn::save_checkpoint(dir / name, b.critics[i].net);
    const ValueNorm& vn = b.value_norms[i];
    critics.push_back(Json{{"file", name},
                           {"value_norm",
                            {{"enabled", vn.enabled},
                             {"beta", vn.beta},
                             {"running_mean", vn.running_mean},
                             {"running_sq", vn.running_sq},
                             {"debias", vn.debias}}}});
  }
  manifest["actors"] = actors;
  manifest["critics"] = critics;
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot write " + (dir / "manifest.json").string());
  os << manifest.dump(2) << '\n';
}

/// Loads a bundle written by save_bundle. Optimiser state starts fresh.
inline PolicyBundle load_bundle(const std::filesystem::path& dir, double actor_lr = 5e-4, double critic_lr = 5e-4) {
  const auto path = dir / "manifest.json";
  std::ifstream is(path);
  if (!is) throw std::runtime_error("checkpoint: missing " + path.string());
  Json m;
  try {
    m = Json::parse(is);
  } catch (const Json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  PolicyBundle b;
  b.mode = mode_from_string(m.at("mode").get<std::string>());
  for (const auto& r : m.at("roles")) b.roles.push_back(r.get<std::string>() == "EMV" ? Role::EMV : Role::AV);
  b.actor_of = m.at("actor_of").get<std::vector<int>>();
  b.critic_of = m.at("critic_of").get<std::vector<int>>();
  for (const auto& name : m.at("actors")) {
    auto net = nn::load_checkpoint(dir / name.get<std::string>());
    auto opt = nn::AdamState::for_params(net, actor_lr);
    b.actors.push_back({std::move(net), std::move(opt)});
  }
  for (const auto& c : m.at("critics")) {
    auto net = nn::load_checkpoint(dir / c.at("file").get<std::string>());
    auto opt = nn::AdamState::for_params(net, critic_lr);
    b.critics.push_back({std::move(net), std::move(opt)});
    const auto& j = c.at("value_norm");
    ValueNorm vn;
    vn.enabled = j.at("enabled").get<bool>();
    vn.beta = j.at("beta").get<double>();
    vn.running_mean = j.at("running_mean").get<double>();
    vn.running_sq = j.at("running_sq").get<double>();
    vn.debias = j.at("debias").get<double>();
    b.value_norms.push_back(vn);
  }
  const auto n = b.roles.size();
  if (b.actor_of.size() != n || b.critic_of.size() != n) throw std::runtime_error("checkpoint: routing tables malformed");
  for (std::size_t i = 0; i < n; ++i) {
    if (b.actor_of[i] < 0 || static_cast<std::size_t>(b.actor_of[i]) >= b.actors.size() || b.critic_of[i] < 0 ||
        static_cast<std::size_t>(b.critic_of[i]) >= b.critics.size()) {
      throw std::runtime_error("checkpoint: routing index out of range");
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Training loop

struct CurvePoint {
  int iteration = 0;
  EpisodeMetrics episode;
  UpdateStats update;
};

struct TrainResult {
  PolicyBundle bundle;
  std::vector<CurvePoint> curve;
  long long env_steps = 0;
  double seconds = 0.0;

  [[nodiscard]] double steps_per_second() const { return seconds > 0.0 ? static_cast<double>(env_steps) / seconds : 0.0; }
};

struct TrainHooks {
  std::function<void(const CurvePoint&)> on_iteration;
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints written
};

/// The environment exactly as training runs it: horizon set to the episode
/// length, competitive rewards following the training mode.
inline EnvConfig training_env(EnvConfig env, const TrainConfig& cfg) {
  env.horizon = cfg.steps_per_episode;
  env.competitive = cfg.mode == Mode::Competitive;
  return env;
}

/// Env seed used for training episode `episode` of a run.
inline std::uint64_t training_episode_seed(std::uint64_t seed, int episode) {
  return mix_seed(seed, 1000 + static_cast<std::uint64_t>(episode));
}

/// One iteration per episode: reset, collect, GAE, value-normaliser refresh,
/// PPO update.
inline TrainResult train(const EnvConfig& env_config, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  const EnvConfig ec = training_env(env_config, cfg);
  Environment env(ec);
  TrainResult result;
  result.bundle = make_bundle(ec, cfg);
  std::mt19937_64 sample_rng(mix_seed(cfg.seed, 2));
  std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 3));

  const auto start = std::chrono::steady_clock::now();
  for (int ep = 0; ep < cfg.episodes; ++ep) {
    env.reset(training_episode_seed(cfg.seed, ep));
    Rollout r = collect_rollout(env, result.bundle, cfg.steps_per_episode, sample_rng);
    compute_advantages(r.buffer, cfg.gamma, cfg.lambda);
    update_value_norms(r.buffer, result.bundle);
    CurvePoint point;
    point.iteration = ep;
    point.episode = r.metrics;
    point.update = ppo_update(r.buffer, result.bundle, cfg, shuffle_rng);
    result.env_steps += cfg.steps_per_episode;
    result.curve.push_back(point);
    if (hooks.on_iteration) hooks.on_iteration(point);
    if (!hooks.checkpoint_dir.empty() && cfg.checkpoint_every > 0 && (ep + 1) % cfg.checkpoint_every == 0 &&
        ep + 1 < cfg.episodes) {
      save_bundle(hooks.checkpoint_dir / ("iter_" + std::to_string(ep + 1)), result.bundle, ec, ep + 1);
    }
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!hooks.checkpoint_dir.empty()) save_bundle(hooks.checkpoint_dir / "final", result.bundle, ec, cfg.episodes);
  return result;
}

}  // namespace emv
