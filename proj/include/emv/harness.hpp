#pragma once

// Experiment runners: evaluation of MAPPO and the baselines on shared episode
// seeds, reward sweeps, agent-count scaling, cooperative vs competitive
// training, and file export.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "emv/baselines.hpp"
#include "emv/env.hpp"
#include "emv/episode.hpp"
#include "emv/experiment.hpp"
#include "emv/mappo.hpp"
#include "emv/metrics.hpp"
#include "emv/serialize.hpp"
#include "emv/version.hpp"

namespace emv {

// ---------------------------------------------------------------------------
// Policies and evaluation

using JointPolicy = std::function<std::vector<Action>(const Environment&, const Observations&)>;

inline JointPolicy gipps_policy(GippsParams p) {
  return [p](const Environment& env, const Observations&) {
    std::vector<Action> a;
    a.reserve(static_cast<std::size_t>(env.num_agents()));
    for (int i = 0; i < env.num_agents(); ++i) a.push_back(gipps_action(env, i, p));
    return a;
  };
}

inline JointPolicy mpc_policy(MpcParams p, GippsParams lane_rules) {
  return [p, lane_rules](const Environment& env, const Observations&) {
    std::vector<Action> a;
    a.reserve(static_cast<std::size_t>(env.num_agents()));
    for (int i = 0; i < env.num_agents(); ++i) a.push_back(mpc_action(env, i, p, lane_rules));
    return a;
  };
}

/// Greedy (argmax) actions from a trained bundle.
inline JointPolicy mappo_policy(std::shared_ptr<const PolicyBundle> bundle) {
  return [bundle = std::move(bundle)](const Environment&, const Observations& obs) {
    return to_actions(decide<std::mt19937_64>(*bundle, obs.local, nullptr).actions);
  };
}

/// Env seed of evaluation episode `episode`; shared by every method.
inline std::uint64_t eval_episode_seed(std::uint64_t seed, int episode) {
  return mix_seed(seed, 500000 + static_cast<std::uint64_t>(episode));
}

struct EvalRun {
  std::vector<EpisodeMetrics> episodes;
  long long env_steps = 0;
  double seconds = 0.0;

  [[nodiscard]] double steps_per_second() const { return seconds > 0.0 ? static_cast<double>(env_steps) / seconds : 0.0; }
};

/// Runs `episodes` full-horizon episodes. When `trace` is set, episode 0 is
/// written to it as newline-delimited records.
inline EvalRun evaluate(const EnvConfig& config, const JointPolicy& policy, std::uint64_t seed, int episodes,
                        std::ostream* trace = nullptr) {
  Environment env(config);
  EvalRun run;
  const auto start = std::chrono::steady_clock::now();
  for (int e = 0; e < episodes; ++e) {
    Observations obs = env.reset(eval_episode_seed(seed, e));
    EpisodeAccumulator acc;
    while (!env.done()) {
      const std::vector<Action> actions = policy(env, obs);
      StepOutcome out = env.step(actions);
      acc.record(env, out);
      if (trace && e == 0) write_trace(*trace, env.step_count(), env.agents(), actions, out);
      obs = std::move(out.obs);
      ++run.env_steps;
    }
    run.episodes.push_back(acc.finish());
  }
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

// ---------------------------------------------------------------------------
// Trained models

/// Memoises training runs by their full (environment, training) configuration
/// so experiments sharing a setting train it once.
class ModelCache {
 public:
  std::shared_ptr<const TrainResult> train(const EnvConfig& env, const TrainConfig& cfg, std::ostream* log = nullptr) {
    const std::string key = Json{{"env", training_env(env, cfg)}, {"train", cfg}}.dump();
    if (auto it = entries_.find(key); it != entries_.end()) return it->second;
    TrainHooks hooks;
    if (log) {
      hooks.on_iteration = [log, &cfg](const CurvePoint& p) {
        if ((p.iteration + 1) % 50 == 0 || p.iteration + 1 == cfg.episodes) {
          *log << "  seed " << cfg.seed << " " << to_string(cfg.mode) << " iteration " << p.iteration + 1 << '/'
               << cfg.episodes << "  reward " << format_number(p.episode.summed_reward) << "  collisions "
               << p.episode.collisions << "  emv " << format_number(p.episode.emv_speed) << " m/s\n";
        }
      };
    }
    auto result = std::make_shared<const TrainResult>(emv::train(env, cfg, hooks));
    ++trainings_;
    entries_.emplace(key, result);
    return result;
  }

  std::shared_ptr<const TrainResult> load(const std::filesystem::path& dir, const TrainConfig& cfg) {
    const std::string key = "load:" + std::filesystem::absolute(dir).lexically_normal().string();
    if (auto it = entries_.find(key); it != entries_.end()) return it->second;
    TrainResult r;
    r.bundle = load_bundle(dir, cfg.actor_lr, cfg.critic_lr);
    auto result = std::make_shared<const TrainResult>(std::move(r));
    entries_.emplace(key, result);
    return result;
  }

  [[nodiscard]] int trainings() const { return trainings_; }

 private:
  std::map<std::string, std::shared_ptr<const TrainResult>> entries_;
  int trainings_ = 0;
};

/// Bundle directory for one seed under a checkpoint root: seed_<n>/final,
/// seed_<n>, or the root itself.
inline std::filesystem::path resolve_checkpoint(const std::filesystem::path& root, std::uint64_t seed) {
  const std::string seed_dir = "seed_" + std::to_string(seed);
  for (const auto& dir : {root / seed_dir / "final", root / seed_dir, root}) {
    if (std::filesystem::exists(dir / "manifest.json")) return dir;
  }
  throw std::runtime_error("missing checkpoint for seed " + std::to_string(seed) + " under " + root.string());
}

struct TrainedRun {
  std::string variant;
  std::uint64_t seed = 0;
  EnvConfig env;  // as trained
  std::shared_ptr<const TrainResult> result;
  bool trained = false;  // false when loaded from a checkpoint
};

struct ExperimentResult {
  ResultTable table;
  std::vector<TrainedRun> runs;
  std::map<std::string, int> observation_size;  // by variant
  std::vector<std::string> errors;              // per-variant failures that did not abort the run
  std::chrono::system_clock::time_point started;
  std::chrono::system_clock::time_point finished;
};

struct RunOptions {
  std::ostream* log = nullptr;
  std::ostream* trace = nullptr;  // first evaluation episode of the first run
};

namespace detail {

inline TrainedRun obtain_model(const ExperimentConfig& cfg, const EnvConfig& env, TrainConfig train, std::uint64_t seed,
                               std::string variant, ModelCache& cache, std::ostream* log) {
  train.seed = seed;
  TrainedRun run{std::move(variant), seed, training_env(env, train), nullptr, false};
  if (!cfg.checkpoint.empty()) {
    run.result = cache.load(resolve_checkpoint(cfg.checkpoint, seed), train);
  } else if (cfg.train_inline) {
    if (log) *log << "training " << (run.variant.empty() ? "mappo" : run.variant) << " seed " << seed << '\n';
    run.result = cache.train(env, train, log);
    run.trained = true;
  } else {
    throw std::runtime_error("missing checkpoint: training is disabled and no checkpoint was given");
  }
  return run;
}

inline void append_eval(ExperimentResult& out, const ExperimentConfig& cfg, const EnvConfig& env, Method method,
                        const std::string& variant, std::uint64_t seed, const JointPolicy& policy,
                        const RunOptions& opt, double train_sps) {
  std::ostream* trace = out.table.episodes.empty() ? opt.trace : nullptr;
  const EvalRun run = evaluate(env, policy, seed, cfg.eval_episodes, trace);
  for (std::size_t e = 0; e < run.episodes.size(); ++e) {
    out.table.episodes.push_back(EpisodeRecord{std::string(to_string(cfg.scenario)), std::string(to_string(method)),
                                               variant, env.agents, seed, static_cast<int>(e), run.episodes[e]});
  }
  out.table.throughput.push_back(Throughput{std::string(to_string(method)) + (variant.empty() ? "" : ":" + variant),
                                            seed, train_sps, run.steps_per_second()});
}

inline void finish(ExperimentResult& out) {
  out.table.rows = aggregate(out.table.episodes);
  out.finished = std::chrono::system_clock::now();
}

inline ExperimentResult start(std::string name) {
  ExperimentResult r;
  r.table.name = std::move(name);
  r.started = std::chrono::system_clock::now();
  return r;
}

}  // namespace detail

/// Trains MAPPO for every seed; no evaluation.
inline ExperimentResult run_training(const ExperimentConfig& cfg, ModelCache& cache, const RunOptions& opt = {}) {
  cfg.validate();
  ExperimentResult out = detail::start("train");
  const EnvConfig env = cfg.resolved_env();
  out.observation_size[""] = env.observation_size();
  ExperimentConfig inline_cfg = cfg;
  inline_cfg.checkpoint.clear();
  inline_cfg.train_inline = true;
  for (auto seed : cfg.seeds) out.runs.push_back(detail::obtain_model(inline_cfg, env, cfg.train, seed, "", cache, opt.log));
  detail::finish(out);
  return out;
}

/// Evaluates the configured method only.
inline ExperimentResult run_evaluation(const ExperimentConfig& cfg, ModelCache& cache, const RunOptions& opt = {}) {
  cfg.validate();
  ExperimentResult out = detail::start("eval");
  const EnvConfig env = cfg.resolved_env();
  out.observation_size[""] = env.observation_size();
  for (auto seed : cfg.seeds) {
    switch (cfg.method) {
      case Method::Mappo: {
        TrainedRun run = detail::obtain_model(cfg, env, cfg.train, seed, "", cache, opt.log);
        const std::shared_ptr<const PolicyBundle> bundle(run.result, &run.result->bundle);
        detail::append_eval(out, cfg, run.env, Method::Mappo, "", seed, mappo_policy(bundle), opt,
                            run.result->steps_per_second());
        out.runs.push_back(std::move(run));
        break;
      }
      case Method::Gipps:
        detail::append_eval(out, cfg, env, Method::Gipps, "", seed, gipps_policy(cfg.gipps), opt, 0.0);
        break;
      case Method::Mpc:
        detail::append_eval(out, cfg, env, Method::Mpc, "", seed, mpc_policy(cfg.mpc, cfg.gipps), opt, 0.0);
        break;
    }
  }
  detail::finish(out);
  return out;
}

/// MAPPO, Gipps and MPC on identical evaluation episodes; one row per method.
inline ExperimentResult run_comparison(const ExperimentConfig& cfg, ModelCache& cache, const RunOptions& opt = {}) {
  cfg.validate();
  ExperimentResult out = detail::start("compare");
  for (Method m : {Method::Mappo, Method::Gipps, Method::Mpc}) {
    ExperimentConfig one = cfg;
    one.method = m;
    ExperimentResult part = run_evaluation(one, cache, opt);
    for (auto& r : part.table.episodes) out.table.episodes.push_back(std::move(r));
    for (auto& t : part.table.throughput) out.table.throughput.push_back(std::move(t));
    for (auto& r : part.runs) out.runs.push_back(std::move(r));
    out.observation_size = part.observation_size;
  }
  detail::finish(out);
  return out;
}

using RewardGrid = std::vector<std::pair<double, double>>;  // (w_risk, w_eff)

inline RewardGrid default_reward_grid() { return {{0.0, 1.0}, {0.5, 1.0}, {1.0, 1.0}, {1.0, 0.5}, {1.0, 0.0}}; }

inline std::string reward_variant(double w_risk, double w_eff) {
  return "w_risk=" + format_number(w_risk) + ",w_eff=" + format_number(w_eff);
}

/// Trains and evaluates MAPPO per (w_risk, w_eff); rows follow the grid order.
inline ExperimentResult run_reward_sweep(const ExperimentConfig& cfg, const RewardGrid& grid, ModelCache& cache,
                                         const RunOptions& opt = {}) {
  cfg.validate();
  if (grid.empty()) throw std::invalid_argument("sweep-reward: empty weight grid");
  ExperimentResult out = detail::start("sweep-reward");
  for (const auto& [w_risk, w_eff] : grid) {
    ExperimentConfig point = cfg;
    point.reward.w_risk = w_risk;
    point.reward.w_eff = w_eff;
    point.validate();
    const std::string variant = reward_variant(w_risk, w_eff);
    const EnvConfig env = point.resolved_env();
    out.observation_size[variant] = env.observation_size();
    for (auto seed : cfg.seeds) {
      TrainedRun run = detail::obtain_model(point, env, point.train, seed, variant, cache, opt.log);
      const std::shared_ptr<const PolicyBundle> bundle(run.result, &run.result->bundle);
      detail::append_eval(out, point, run.env, Method::Mappo, variant, seed, mappo_policy(bundle), opt,
                          run.result->steps_per_second());
      out.runs.push_back(std::move(run));
    }
  }
  detail::finish(out);
  return out;
}

inline std::string agents_variant(int n) { return "agents=" + std::to_string(n); }

/// Trains and evaluates MAPPO per agent count. A count the track cannot hold
/// is reported in `errors` and skipped.
inline ExperimentResult run_scalability(const ExperimentConfig& cfg, const std::vector<int>& counts, ModelCache& cache,
                                        const RunOptions& opt = {}) {
  if (counts.empty()) throw std::invalid_argument("scale: no agent counts given");
  ExperimentResult out = detail::start("scale");
  for (int n : counts) {
    const std::string variant = agents_variant(n);
    try {
      ExperimentConfig point = cfg;
      point.agents = n;
      point.validate();
      const EnvConfig env = point.resolved_env();
      if (n > env.capacity()) {
        throw ConfigError("env: " + std::to_string(n) + " agents exceed track capacity " +
                          std::to_string(env.capacity()));
      }
      out.observation_size[variant] = env.observation_size();
      for (auto seed : cfg.seeds) {
        TrainedRun run = detail::obtain_model(point, env, point.train, seed, variant, cache, opt.log);
        const std::shared_ptr<const PolicyBundle> bundle(run.result, &run.result->bundle);
        detail::append_eval(out, point, run.env, Method::Mappo, variant, seed, mappo_policy(bundle), opt,
                            run.result->steps_per_second());
        out.runs.push_back(std::move(run));
      }
    } catch (const std::exception& e) {
      out.errors.push_back(variant + ": " + e.what());
      if (opt.log) *opt.log << "skipping " << variant << ": " << e.what() << '\n';
    }
  }
  detail::finish(out);
  return out;
}

/// Cooperative and competitive training on matched seeds.
inline ExperimentResult run_competitive(const ExperimentConfig& cfg, ModelCache& cache, const RunOptions& opt = {}) {
  cfg.validate();
  if (cfg.scenario != Scenario::Road) throw std::invalid_argument("competitive: requires the road scenario");
  ExperimentResult out = detail::start("competitive");
  for (Mode mode : {Mode::Cooperative, Mode::Competitive}) {
    ExperimentConfig point = cfg;
    point.train.mode = mode;
    const std::string variant(to_string(mode));
    const EnvConfig env = point.resolved_env();
    out.observation_size[variant] = env.observation_size();
    for (auto seed : cfg.seeds) {
      TrainedRun run = detail::obtain_model(point, env, point.train, seed, variant, cache, opt.log);
      const std::shared_ptr<const PolicyBundle> bundle(run.result, &run.result->bundle);
      detail::append_eval(out, point, run.env, Method::Mappo, variant, seed, mappo_policy(bundle), opt,
                          run.result->steps_per_second());
      out.runs.push_back(std::move(run));
    }
  }
  detail::finish(out);
  return out;
}

// ---------------------------------------------------------------------------
// Export

/// Learning curves, one row per (run, iteration), followed per variant by the
/// mean over seeds (seed column "mean") where every seed has that iteration.
inline void write_curve_csv(std::ostream& os, const std::vector<TrainedRun>& runs) {
  os << "variant,seed,iteration,summed_reward,collisions,mean_risk,emv_risk,emv_speed,av_speed,entropy,"
        "clip_fraction,approx_kl,critic_loss\n";
  constexpr int kFields = 10;
  auto fields = [](const CurvePoint& p) {
    return std::array<double, kFields>{p.episode.summed_reward, static_cast<double>(p.episode.collisions),
                                       p.episode.mean_risk, p.episode.emv_risk, p.episode.emv_speed,
                                       p.episode.av_speed, p.update.entropy, p.update.clip_fraction,
                                       p.update.approx_kl, p.update.critic_loss};
  };
  std::vector<std::string> variants;
  for (const auto& r : runs) {
    if (r.result->curve.empty()) continue;
    if (std::find(variants.begin(), variants.end(), r.variant) == variants.end()) variants.push_back(r.variant);
  }
  for (const auto& v : variants) {
    std::vector<const TrainedRun*> members;
    for (const auto& r : runs) {
      if (r.variant == v && !r.result->curve.empty() &&
          std::none_of(members.begin(), members.end(), [&](const TrainedRun* m) { return m->seed == r.seed; })) {
        members.push_back(&r);
      }
    }
    std::size_t common = members.front()->result->curve.size();
    for (const auto* m : members) {
      common = std::min(common, m->result->curve.size());
      for (const auto& p : m->result->curve) {
        os << csv_field(v) << ',' << m->seed << ',' << p.iteration;
        for (double x : fields(p)) os << ',' << format_number(x);
        os << '\n';
      }
    }
    for (std::size_t i = 0; i < common; ++i) {
      std::array<double, kFields> sum{};
      for (const auto* m : members) {
        const auto f = fields(m->result->curve[i]);
        for (int k = 0; k < kFields; ++k) sum[k] += f[k];
      }
      os << csv_field(v) << ",mean," << members.front()->result->curve[i].iteration;
      for (double x : sum) os << ',' << format_number(x / static_cast<double>(members.size()));
      os << '\n';
    }
  }
}

inline std::string iso_utc(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline std::string path_component(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '/' || c == '\\' || c == ' ') c = '_';
  return s;
}

/// Checkpoint directory of a run relative to the export root.
inline std::filesystem::path run_checkpoint_dir(const TrainedRun& r) {
  std::filesystem::path p = "checkpoints";
  if (!r.variant.empty()) p /= path_component(r.variant);
  return p / ("seed_" + std::to_string(r.seed)) / "final";
}

/// Writes episodes.csv, summary.csv, curves.csv (when runs were trained),
/// checkpoints/, config.json, throughput.json and manifest.json. Everything
/// but the wall-clock files (throughput.json, manifest.json) is byte-stable
/// for identical inputs.
inline std::vector<std::filesystem::path> export_results(const ExperimentResult& result, const ExperimentConfig& cfg,
                                                         const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("export: cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> files;
  auto write = [&](const std::string& name, const std::function<void(std::ostream&)>& body) {
    const auto path = dir / name;
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("export: cannot write " + path.string());
    body(os);
    if (!os) throw std::runtime_error("export: write failed for " + path.string());
    files.push_back(name);
  };

  write("episodes.csv", [&](std::ostream& os) { write_episode_csv(os, result.table.episodes); });
  write("summary.csv", [&](std::ostream& os) { write_summary_csv(os, result.table.rows); });
  const bool any_curve =
      std::any_of(result.runs.begin(), result.runs.end(), [](const TrainedRun& r) { return !r.result->curve.empty(); });
  if (any_curve) write("curves.csv", [&](std::ostream& os) { write_curve_csv(os, result.runs); });
  for (const auto& r : result.runs) {
    if (!r.trained) continue;
    const auto rel = run_checkpoint_dir(r);
    save_bundle(dir / rel, r.result->bundle, r.env, static_cast<int>(r.result->curve.size()));
    files.push_back(rel);
  }
  write("config.json", [&](std::ostream& os) { os << Json(cfg).dump(2) << '\n'; });

  Json tp = Json::array();
  for (const auto& t : result.table.throughput) {
    tp.push_back(Json{{"run", t.variant},
                      {"seed", t.seed},
                      {"train_steps_per_second", t.train_steps_per_second},
                      {"eval_steps_per_second", t.eval_steps_per_second}});
  }
  write("throughput.json", [&](std::ostream& os) { os << tp.dump(2) << '\n'; });

  Json obs = Json::object();
  for (const auto& [v, n] : result.observation_size) obs[v.empty() ? "default" : v] = n;
  Json manifest{{"experiment", result.table.name},
                {"code_version", std::string(kVersion)},
                {"seeds", cfg.seeds},
                {"started_at", iso_utc(result.started)},
                {"finished_at", iso_utc(result.finished)},
                {"observation_size", obs},
                {"errors", result.errors}};
  Json listed = Json::array();
  for (const auto& f : files) listed.push_back(f.generic_string());
  manifest["files"] = listed;
  write("manifest.json", [&](std::ostream& os) { os << manifest.dump(2) << '\n'; });
  return files;
}

}  // namespace emv
