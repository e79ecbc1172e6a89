#include <gtest/gtest.h>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "emv/harness.hpp"

namespace {

using namespace emv;
namespace fs = std::filesystem;

std::string read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("emv_harness_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (quoted) {
        if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          cell += '"';
          ++i;
        } else if (c == '"') {
          quoted = false;
        } else {
          cell += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        cells.push_back(cell);
        cell.clear();
      } else {
        cell += c;
      }
    }
    cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

double to_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  EXPECT_EQ(res.ec, std::errc()) << s;
  return v;
}

ExperimentConfig tiny(int seeds = 2) {
  ExperimentConfig c;
  c.agents = 4;
  c.train.episodes = 2;
  c.train.steps_per_episode = 40;
  c.train.ppo_epochs = 2;
  c.eval_episodes = 3;
  c.seeds.clear();
  for (int s = 1; s <= seeds; ++s) c.seeds.push_back(static_cast<std::uint64_t>(s));
  return c;
}

TEST(Export, EmptyRecordsGiveHeaderOnlyCsv) {
  std::ostringstream os;
  write_episode_csv(os, {});
  const std::string text = os.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1);
  std::ostringstream summary;
  write_summary_csv(summary, aggregate({}));
  EXPECT_EQ(parse_csv(summary.str()).size(), 1u);
}

TEST(Export, TwoSeedsTimesTenEpisodesGiveTwentyRows) {
  ExperimentConfig c = tiny();
  c.method = Method::Gipps;
  c.eval_episodes = 10;
  ModelCache cache;
  const auto result = run_evaluation(c, cache);
  std::ostringstream os;
  write_episode_csv(os, result.table.episodes);
  EXPECT_EQ(parse_csv(os.str()).size(), 21u);
  ASSERT_EQ(result.table.rows.size(), 1u);
  EXPECT_EQ(result.table.rows[0].episodes, 20);
}

TEST(Export, NumbersRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.125, -0.0}) {
    EXPECT_EQ(to_double(format_number(v)), v == 0.0 ? 0.0 : v);
  }
  EXPECT_EQ(format_number(-0.0), "0");
  EXPECT_EQ(csv_field("w_risk=1,w_eff=0"), "\"w_risk=1,w_eff=0\"");
}

TEST(Export, SummaryIsRecomputableFromEpisodes) {
  ExperimentConfig c = tiny();
  ModelCache cache;
  const auto result = run_comparison(c, cache);
  const fs::path dir = scratch_dir("recompute");
  export_results(result, c, dir);
  const auto episodes = parse_csv(read_bytes(dir / "episodes.csv"));
  const auto summary = parse_csv(read_bytes(dir / "summary.csv"));
  ASSERT_EQ(summary.size(), 4u);  // header + mappo, gipps, mpc
  const std::vector<std::pair<int, int>> columns{{6, 5}, {7, 7}, {8, 9}, {9, 11}, {10, 13}, {11, 15}, {12, 17}};
  for (std::size_t r = 1; r < summary.size(); ++r) {
    const auto& row = summary[r];
    std::vector<const std::vector<std::string>*> members;
    for (std::size_t e = 1; e < episodes.size(); ++e) {
      if (episodes[e][1] == row[1] && episodes[e][2] == row[2] && episodes[e][3] == row[3]) members.push_back(&episodes[e]);
    }
    ASSERT_EQ(std::to_string(members.size()), row[4]);
    for (const auto& [ep_col, sum_col] : columns) {
      double sum = 0.0;
      for (const auto* m : members) sum += to_double((*m)[ep_col]);
      const double mean = sum / static_cast<double>(members.size());
      double sq = 0.0;
      for (const auto* m : members) sq += (to_double((*m)[ep_col]) - mean) * (to_double((*m)[ep_col]) - mean);
      const double sd = std::sqrt(sq / static_cast<double>(members.size() - 1));
      EXPECT_EQ(to_double(row[sum_col]), mean) << row[1] << " column " << sum_col;
      EXPECT_EQ(to_double(row[sum_col + 1]), sd) << row[1] << " column " << sum_col + 1;
    }
  }
  fs::remove_all(dir);
}

TEST(Export, ReExportIsByteIdentical) {
  ExperimentConfig c = tiny();
  ModelCache cache;
  const auto result = run_comparison(c, cache);
  const fs::path a = scratch_dir("reexport_a");
  const fs::path b = scratch_dir("reexport_b");
  const auto files = export_results(result, c, a);
  export_results(result, c, b);
  int compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a);
    if (rel == "manifest.json" || rel == "throughput.json") continue;
    EXPECT_EQ(read_bytes(entry.path()), read_bytes(b / rel)) << rel;
    ++compared;
  }
  EXPECT_GE(compared, 4 + 2 * 4);  // csv files, config, two bundles of four files
  const Json manifest = Json::parse(read_bytes(a / "manifest.json"));
  EXPECT_EQ(manifest.at("experiment"), "compare");
  EXPECT_EQ(manifest.at("code_version"), std::string(kVersion));
  EXPECT_EQ(manifest.at("seeds").size(), 2u);
  EXPECT_TRUE(manifest.contains("started_at"));
  EXPECT_TRUE(fs::exists(a / "checkpoints" / "seed_1" / "final" / "manifest.json"));
  // Wall-clock numbers stay out of the CSV tables.
  EXPECT_EQ(read_bytes(a / "summary.csv").find("per_second"), std::string::npos);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Export, ZeroCollisionsGiveExactZeroCell) {
  std::vector<EpisodeRecord> records(3);
  for (auto& r : records) {
    r.method = "gipps";
    r.metrics.collisions = 0;
  }
  const auto rows = aggregate(records);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].collisions.mean, 0.0);
  EXPECT_EQ(rows[0].collisions.stddev, 0.0);
  std::ostringstream os;
  write_summary_csv(os, rows);
  EXPECT_EQ(parse_csv(os.str())[1][11], "0");
}

TEST(Runs, IdenticalInvocationsGiveIdenticalTables) {
  auto once = [] {
    ModelCache cache;
    const auto r = run_comparison(tiny(), cache);
    std::ostringstream os;
    write_episode_csv(os, r.table.episodes);
    write_summary_csv(os, r.table.rows);
    return os.str();
  };
  EXPECT_EQ(once(), once());
}

TEST(Runs, MethodsShareEvaluationEpisodes) {
  // Same seeds, same initial layouts: identical first-step observations for
  // every method, so differences come from the policies only.
  const ExperimentConfig c = tiny(1);
  Environment a(c.resolved_env());
  Environment b(c.resolved_env());
  const auto oa = a.reset(eval_episode_seed(1, 0));
  const auto ob = b.reset(eval_episode_seed(1, 0));
  EXPECT_EQ(oa.local, ob.local);
  EXPECT_NE(eval_episode_seed(1, 0), training_episode_seed(1, 0));
}

TEST(Runs, BaselinesNeverTrain) {
  ExperimentConfig c = tiny();
  ModelCache cache;
  for (Method m : {Method::Gipps, Method::Mpc}) {
    c.method = m;
    const auto r = run_evaluation(c, cache);
    EXPECT_TRUE(r.runs.empty());
    EXPECT_FALSE(r.table.episodes.empty());
  }
  EXPECT_EQ(cache.trainings(), 0);
}

TEST(Runs, MissingCheckpointWithTrainingDisabled) {
  ExperimentConfig c = tiny();
  c.train_inline = false;
  ModelCache cache;
  try {
    run_comparison(c, cache);
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("missing checkpoint"), std::string::npos);
  }
  c.checkpoint = scratch_dir("nowhere");
  EXPECT_THROW(run_comparison(c, cache), std::runtime_error);
}

TEST(Runs, SavedCheckpointsReproduceInlineEvaluation) {
  ExperimentConfig c = tiny();
  ModelCache cache;
  const auto trained = run_evaluation(c, cache);
  const fs::path dir = scratch_dir("ckpt_eval");
  export_results(trained, c, dir);
  ExperimentConfig again = c;
  again.checkpoint = dir / "checkpoints";
  again.train_inline = false;
  ModelCache fresh;
  const auto loaded = run_evaluation(again, fresh);
  EXPECT_EQ(fresh.trainings(), 0);
  ASSERT_EQ(loaded.table.episodes.size(), trained.table.episodes.size());
  for (std::size_t i = 0; i < loaded.table.episodes.size(); ++i) {
    EXPECT_EQ(loaded.table.episodes[i].metrics.summed_reward, trained.table.episodes[i].metrics.summed_reward);
    EXPECT_EQ(loaded.table.episodes[i].metrics.collisions, trained.table.episodes[i].metrics.collisions);
  }
  EXPECT_EQ(resolve_checkpoint(dir / "checkpoints", 2), dir / "checkpoints" / "seed_2" / "final");
  fs::remove_all(dir);
}

TEST(Runs, CacheSharesIdenticalTrainingSettings) {
  ExperimentConfig c = tiny();
  ModelCache cache;
  run_comparison(c, cache);
  EXPECT_EQ(cache.trainings(), 2);
  run_reward_sweep(c, {{c.reward.w_risk, c.reward.w_eff}}, cache);
  EXPECT_EQ(cache.trainings(), 2);
  run_reward_sweep(c, {{0.0, 1.0}}, cache);
  EXPECT_EQ(cache.trainings(), 4);
}

TEST(Runs, SingleGridPointGivesOneRow) {
  ModelCache cache;
  const auto r = run_reward_sweep(tiny(1), {{0.5, 1.0}}, cache);
  ASSERT_EQ(r.table.rows.size(), 1u);
  EXPECT_EQ(r.table.rows[0].variant, "w_risk=0.5,w_eff=1");
  EXPECT_EQ(default_reward_grid().size(), 5u);
}

TEST(Runs, CapacityErrorDoesNotAbortScaling) {
  ModelCache cache;
  const auto r = run_scalability(tiny(1), {3, 1000, 5}, cache);
  ASSERT_EQ(r.errors.size(), 1u);
  EXPECT_NE(r.errors[0].find("agents=1000"), std::string::npos);
  EXPECT_NE(r.errors[0].find("capacity"), std::string::npos);
  ASSERT_EQ(r.table.rows.size(), 2u);
  EXPECT_EQ(r.table.rows[0].agents, 3);
  EXPECT_EQ(r.table.rows[1].agents, 5);
  EXPECT_EQ(r.observation_size.at("agents=3"), r.observation_size.at("agents=5"));
}

TEST(Runs, CompetitiveNeedsRoadScenario) {
  ExperimentConfig c = tiny(1);
  c.scenario = Scenario::Highway;
  ModelCache cache;
  EXPECT_THROW(run_competitive(c, cache), std::invalid_argument);
}

TEST(Runs, CompetitiveProducesPairedRows) {
  ModelCache cache;
  const auto r = run_competitive(tiny(1), cache);
  ASSERT_EQ(r.table.rows.size(), 2u);
  EXPECT_EQ(r.table.rows[0].variant, "cooperative");
  EXPECT_EQ(r.table.rows[1].variant, "competitive");
  ASSERT_EQ(r.runs.size(), 2u);
  EXPECT_EQ(r.runs[1].result->bundle.actors.size(), 4u);
}

TEST(Curves, PerSeedRowsThenMean) {
  ModelCache cache;
  const auto r = run_training(tiny(), cache);
  std::ostringstream os;
  write_curve_csv(os, r.runs);
  const auto rows = parse_csv(os.str());
  ASSERT_EQ(rows.size(), 1u + 2 * 2 + 2);
  EXPECT_EQ(rows[1][1], "1");
  EXPECT_EQ(rows[3][1], "2");
  EXPECT_EQ(rows[5][1], "mean");
  const double mean = 0.5 * (to_double(rows[1][3]) + to_double(rows[3][3]));
  EXPECT_EQ(to_double(rows[5][3]), mean);
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
  ExperimentConfig c = tiny();
  c.scenario = Scenario::Highway;
  c.reward.w_risk = 0.5;
  c.train.mode = Mode::Competitive;
  const Json j = c;
  const ExperimentConfig back = j.get<ExperimentConfig>();
  EXPECT_EQ(Json(back).dump(), j.dump());
  EXPECT_EQ(back.resolved_env().track.lanes, 4);

  // A partial section overlays the experiment defaults.
  const auto partial = Json::parse(R"({"train": {"ppo_epochs": 3}, "env": {"horizon": 50}})").get<ExperimentConfig>();
  EXPECT_EQ(partial.train.episodes, ExperimentConfig{}.train.episodes);
  EXPECT_EQ(partial.train.ppo_epochs, 3);

  Json bad = j;
  bad["bogus"] = 1;
  EXPECT_THROW(bad.get<ExperimentConfig>(), std::invalid_argument);

  const fs::path dir = scratch_dir("config");
  fs::create_directories(dir);
  {
    std::ofstream os(dir / "c.json");
    os << "{\n  // comment\n  \"agents\": 6, \"seeds\": [4]\n}\n";
  }
  const ExperimentConfig loaded = load_experiment(dir / "c.json");
  EXPECT_EQ(loaded.agents, 6);
  EXPECT_EQ(loaded.seeds, std::vector<std::uint64_t>{4});
  {
    std::ofstream os(dir / "bad.json");
    os << "{\"eval_episodes\": 0}";
  }
  EXPECT_THROW(load_experiment(dir / "bad.json"), std::runtime_error);
  fs::remove_all(dir);
}

TEST(Trace, FirstEpisodeIsWritten) {
  ExperimentConfig c = tiny(1);
  c.method = Method::Gipps;
  ModelCache cache;
  std::ostringstream trace;
  RunOptions opt;
  opt.trace = &trace;
  run_evaluation(c, cache, opt);
  const std::string s = trace.str();
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), c.train.steps_per_episode * c.agents);
}

}  // namespace
