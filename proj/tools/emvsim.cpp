// emvsim: command-line driver for training, evaluation and the four studies.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "emv/harness.hpp"

namespace {

struct Overrides {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::string scenario;
  std::optional<int> agents;
  std::optional<int> episodes;
  std::optional<int> eval_episodes;
  std::string method;
  std::string checkpoint;
  bool no_train = false;
  std::string trace;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "Experiment config (JSON; comments allowed)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seeds, "Seed; repeat for several (replaces the config's list)");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--scenario", o.scenario, "road | highway");
  cmd->add_option("--agents", o.agents, "Number of vehicles including the EMV")->check(CLI::PositiveNumber);
  cmd->add_option("--episodes", o.episodes, "Training episodes")->check(CLI::PositiveNumber);
  cmd->add_option("--eval-episodes", o.eval_episodes, "Evaluation episodes per seed")->check(CLI::PositiveNumber);
  cmd->add_option("--method", o.method, "mappo | gipps | mpc (eval)");
  cmd->add_option("--checkpoint", o.checkpoint, "Evaluate saved bundles from this directory instead of training");
  cmd->add_flag("--no-train", o.no_train, "Fail instead of training when no checkpoint is given");
  cmd->add_option("--trace", o.trace, "Write the first evaluation episode as NDJSON to this file");
  cmd->add_flag("-q,--quiet", o.quiet, "No progress output");
}

emv::ExperimentConfig resolve(const Overrides& o) {
  emv::ExperimentConfig c = o.config.empty() ? emv::ExperimentConfig{} : emv::load_experiment(o.config);
  if (!o.seeds.empty()) c.seeds = o.seeds;
  if (!o.out.empty()) c.output_dir = o.out;
  if (!o.scenario.empty()) c.scenario = emv::scenario_from_string(o.scenario);
  if (o.agents) c.agents = *o.agents;
  if (o.episodes) c.train.episodes = *o.episodes;
  if (o.eval_episodes) c.eval_episodes = *o.eval_episodes;
  if (!o.method.empty()) c.method = emv::method_from_string(o.method);
  if (!o.checkpoint.empty()) c.checkpoint = o.checkpoint;
  if (o.no_train) c.train_inline = false;
  c.validate();
  return c;
}

emv::RewardGrid parse_grid(const std::string& text) {
  emv::RewardGrid grid;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("grid entry '" + item + "' is not w_risk:w_eff");
    grid.emplace_back(std::stod(item.substr(0, colon)), std::stod(item.substr(colon + 1)));
  }
  if (grid.empty()) throw std::invalid_argument("empty reward grid");
  return grid;
}

void print_rows(const emv::ResultTable& t) {
  std::cout << std::left << std::setw(8) << "method" << std::setw(22) << "variant" << std::right << std::setw(7)
            << "agents" << std::setw(18) << "reward" << std::setw(14) << "emv m/s" << std::setw(14) << "av m/s"
            << std::setw(14) << "collisions" << std::setw(16) << "risk" << std::setw(14) << "gap m" << '\n';
  auto cell = [](const emv::Summary& s, int prec) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << s.mean << "+-" << s.stddev;
    return os.str();
  };
  for (const auto& r : t.rows) {
    std::cout << std::left << std::setw(8) << r.method << std::setw(22) << (r.variant.empty() ? "-" : r.variant)
              << std::right << std::setw(7) << r.agents << std::setw(18) << cell(r.reward, 1) << std::setw(14)
              << cell(r.emv_speed, 2) << std::setw(14) << cell(r.av_speed, 2) << std::setw(14)
              << cell(r.collisions, 2) << std::setw(16) << cell(r.risk, 4) << std::setw(14)
              << cell(r.safety_distance, 1) << '\n';
  }
}

template <typename Run>
int execute(const Overrides& o, Run&& run) {
  const emv::ExperimentConfig cfg = resolve(o);
  emv::ModelCache cache;
  std::ofstream trace_file;
  emv::RunOptions opt;
  opt.log = o.quiet ? nullptr : &std::cerr;
  if (!o.trace.empty()) {
    trace_file.open(o.trace, std::ios::trunc);
    if (!trace_file) throw std::runtime_error("cannot write trace " + o.trace);
    opt.trace = &trace_file;
  }
  const emv::ExperimentResult result = run(cfg, cache, opt);
  emv::export_results(result, cfg, cfg.output_dir);
  if (!result.table.rows.empty()) print_rows(result.table);
  for (const auto& e : result.errors) std::cerr << "error: " << e << '\n';
  std::cerr << "results written to " << cfg.output_dir.string() << '\n';
  return result.errors.empty() ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Emergency-vehicle ring-road simulator: MAPPO training, baselines and experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(emv::kVersion));

  Overrides o;
  auto* train = app.add_subcommand("train", "Train MAPPO for each seed and write checkpoints and learning curves");
  auto* eval = app.add_subcommand("eval", "Evaluate one method (--method) on the evaluation episodes");
  auto* compare = app.add_subcommand("compare", "MAPPO vs Gipps vs MPC on identical episodes");
  auto* sweep = app.add_subcommand("sweep-reward", "Train and evaluate MAPPO over (w_risk, w_eff) pairs");
  auto* scale = app.add_subcommand("scale", "Train and evaluate MAPPO over agent counts");
  auto* competitive = app.add_subcommand("competitive", "Cooperative vs competitive training on matched seeds");
  auto* config = app.add_subcommand("config", "Print the resolved config as JSON");
  for (auto* cmd : {train, eval, compare, sweep, scale, competitive, config}) add_common(cmd, o);

  std::string grid_text;
  sweep->add_option("--grid", grid_text, "Comma-separated w_risk:w_eff pairs (default 0:1,0.5:1,1:1,1:0.5,1:0)");
  std::vector<int> counts = {10, 20};
  scale->add_option("--counts", counts, "Agent counts")->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    if (*config) {
      std::cout << emv::Json(resolve(o)).dump(2) << '\n';
      return 0;
    }
    if (*train) return execute(o, [](auto& c, auto& cache, auto& opt) { return emv::run_training(c, cache, opt); });
    if (*eval) return execute(o, [](auto& c, auto& cache, auto& opt) { return emv::run_evaluation(c, cache, opt); });
    if (*compare) return execute(o, [](auto& c, auto& cache, auto& opt) { return emv::run_comparison(c, cache, opt); });
    if (*sweep) {
      const emv::RewardGrid grid = grid_text.empty() ? emv::default_reward_grid() : parse_grid(grid_text);
      return execute(o, [&](auto& c, auto& cache, auto& opt) { return emv::run_reward_sweep(c, grid, cache, opt); });
    }
    if (*scale) {
      return execute(o, [&](auto& c, auto& cache, auto& opt) { return emv::run_scalability(c, counts, cache, opt); });
    }
    if (*competitive) {
      return execute(o, [](auto& c, auto& cache, auto& opt) { return emv::run_competitive(c, cache, opt); });
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
