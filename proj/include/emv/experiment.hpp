#pragma once

// Experiment configuration: one structured JSON document with sections for the
// scenario, training, reward, risk and evaluation settings.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "emv/baselines.hpp"
#include "emv/env.hpp"
#include "emv/serialize.hpp"
#include "emv/train_config.hpp"

namespace emv {

enum class Scenario : std::uint8_t { Road, Highway };
enum class Method : std::uint8_t { Mappo, Gipps, Mpc };

inline std::string_view to_string(Scenario s) { return s == Scenario::Road ? "road" : "highway"; }

inline Scenario scenario_from_string(std::string_view s) {
  if (s == "road") return Scenario::Road;
  if (s == "highway") return Scenario::Highway;
  throw std::invalid_argument("unknown scenario '" + std::string(s) + "' (expected road|highway)");
}

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::Mappo: return "mappo";
    case Method::Gipps: return "gipps";
    case Method::Mpc: return "mpc";
  }
  return "?";
}

inline Method method_from_string(std::string_view s) {
  if (s == "mappo") return Method::Mappo;
  if (s == "gipps") return Method::Gipps;
  if (s == "mpc") return Method::Mpc;
  throw std::invalid_argument("unknown method '" + std::string(s) + "' (expected mappo|gipps|mpc)");
}

inline int lanes_for(Scenario s) { return s == Scenario::Road ? 2 : 4; }

struct ExperimentConfig {
  Scenario scenario = Scenario::Road;
  int agents = 10;
  Method method = Method::Mappo;
  TrainConfig train = [] {
    TrainConfig t;
    t.episodes = 300;
    return t;
  }();
  EnvConfig env;  // agent count, lanes and reward/risk come from the fields above
  RewardWeights reward;
  RiskParams risk;
  GippsParams gipps;
  MpcParams mpc;
  int eval_episodes = 10;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::filesystem::path output_dir = "runs";
  // Evaluate a saved bundle instead of training; one sub-directory per seed
  // (seed_<n>/final) or a single bundle directory.
  std::filesystem::path checkpoint;
  bool train_inline = true;

  void validate() const {
    if (agents < 1) throw std::invalid_argument("experiment: agents must be >= 1");
    if (eval_episodes < 1) throw std::invalid_argument("experiment: eval_episodes must be >= 1");
    if (seeds.empty()) throw std::invalid_argument("experiment: need at least one seed");
    train.validate();
    reward.validate();
    risk.validate();
    gipps.validate();
    mpc.validate();
    resolved_env().validate();
  }

  /// Environment config with the scenario's lane count and the experiment's
  /// agent count, reward and risk settings applied.
  [[nodiscard]] EnvConfig resolved_env() const {
    EnvConfig e = env;
    e.track.lanes = lanes_for(scenario);
    e.agents = agents;
    e.reward = reward;
    e.risk = risk;
    e.horizon = train.steps_per_episode;
    return e;
  }
};

inline void to_json(Json& j, const ExperimentConfig& c) {
  Json seeds = Json::array();
  for (auto s : c.seeds) seeds.push_back(s);
  EnvConfig env = c.env;
  env.track.lanes = lanes_for(c.scenario);
  env.agents = c.agents;
  j = Json{{"scenario", std::string(to_string(c.scenario))},
           {"agents", c.agents},
           {"method", std::string(to_string(c.method))},
           {"train", c.train},
           {"reward", c.reward},
           {"risk", c.risk},
           {"env", env},
           {"gipps", c.gipps},
           {"mpc", c.mpc},
           {"eval_episodes", c.eval_episodes},
           {"seeds", seeds},
           {"output_dir", c.output_dir.generic_string()},
           {"checkpoint", c.checkpoint.generic_string()},
           {"train_inline", c.train_inline}};
  // The env section mirrors reward and risk; drop the copies to keep one source.
  j["env"].erase("reward");
  j["env"].erase("risk");
}

inline void from_json(const Json& j, ExperimentConfig& c) {
  io::reject_unknown(j,
                     {"scenario", "agents", "method", "train", "reward", "risk", "env", "gipps", "mpc",
                      "eval_episodes", "seeds", "output_dir", "checkpoint", "train_inline"},
                     "experiment");
  if (auto it = j.find("scenario"); it != j.end()) c.scenario = scenario_from_string(it->get<std::string>());
  if (auto it = j.find("method"); it != j.end()) c.method = method_from_string(it->get<std::string>());
  io::read(j, "train", c.train, "experiment");
  io::read(j, "reward", c.reward, "experiment");
  io::read(j, "risk", c.risk, "experiment");
  if (auto it = j.find("env"); it != j.end()) {
    if (it->contains("reward") || it->contains("risk")) {
      throw std::invalid_argument("experiment.env: set reward and risk in their own top-level sections");
    }
    c.env = it->get<EnvConfig>();
    if (it->contains("agents")) c.agents = c.env.agents;
  }
  io::read(j, "agents", c.agents, "experiment");
  io::read(j, "gipps", c.gipps, "experiment");
  io::read(j, "mpc", c.mpc, "experiment");
  io::read(j, "eval_episodes", c.eval_episodes, "experiment");
  io::read(j, "seeds", c.seeds, "experiment");
  if (auto it = j.find("output_dir"); it != j.end()) c.output_dir = it->get<std::string>();
  if (auto it = j.find("checkpoint"); it != j.end()) c.checkpoint = it->get<std::string>();
  io::read(j, "train_inline", c.train_inline, "experiment");
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path.string());
  try {
    const Json j = Json::parse(is, nullptr, true, true);  // comments allowed
    ExperimentConfig c = j.get<ExperimentConfig>();
    c.validate();
    return c;
  } catch (const Json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

}  // namespace emv
