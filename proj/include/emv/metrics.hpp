#pragma once

// Per-episode records, mean / sample-deviation summaries and CSV output.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "emv/episode.hpp"

namespace emv {

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // sample deviation (n - 1); 0 for fewer than two values
};

inline Summary summarize(std::span<const double> xs) {
  Summary s;
  if (xs.empty()) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double sq = 0.0;
    for (double x : xs) sq += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(sq / static_cast<double>(xs.size() - 1));
  }
  return s;
}

/// One evaluated episode and the run it belongs to.
struct EpisodeRecord {
  std::string scenario;
  std::string method;
  std::string variant;  // e.g. "w_risk=0.5,w_eff=1" or "agents=20"
  int agents = 0;
  std::uint64_t seed = 0;
  int episode = 0;
  EpisodeMetrics metrics;
};

struct MetricsRow {
  std::string scenario;
  std::string method;
  std::string variant;
  int agents = 0;
  int episodes = 0;
  Summary reward;
  Summary emv_speed;
  Summary av_speed;
  Summary collisions;
  Summary risk;
  Summary emv_risk;
  Summary safety_distance;
};

/// Throughput is wall-clock and therefore kept apart from the reproducible
/// tables.
struct Throughput {
  std::string variant;
  std::uint64_t seed = 0;
  double train_steps_per_second = 0.0;
  double eval_steps_per_second = 0.0;
};

struct ResultTable {
  std::string name;
  std::vector<EpisodeRecord> episodes;
  std::vector<MetricsRow> rows;
  std::vector<Throughput> throughput;

  [[nodiscard]] const MetricsRow* find(std::string_view method, std::string_view variant = {}) const {
    for (const auto& r : rows)
      if (r.method == method && (variant.empty() || r.variant == variant)) return &r;
    return nullptr;
  }
};

/// Groups episode records by (scenario, method, variant, agents) in order of
/// first appearance and summarises each group.
inline std::vector<MetricsRow> aggregate(const std::vector<EpisodeRecord>& records) {
  std::vector<MetricsRow> rows;
  std::vector<std::vector<const EpisodeRecord*>> members;
  for (const auto& r : records) {
    std::size_t g = 0;
    while (g < rows.size() && !(rows[g].scenario == r.scenario && rows[g].method == r.method &&
                                rows[g].variant == r.variant && rows[g].agents == r.agents)) {
      ++g;
    }
    if (g == rows.size()) {
      MetricsRow row;
      row.scenario = r.scenario;
      row.method = r.method;
      row.variant = r.variant;
      row.agents = r.agents;
      rows.push_back(std::move(row));
      members.emplace_back();
    }
    members[g].push_back(&r);
  }
  for (std::size_t g = 0; g < rows.size(); ++g) {
    auto column = [&](auto field) {
      std::vector<double> xs;
      for (const auto* r : members[g]) xs.push_back(field(r->metrics));
      return summarize(xs);
    };
    MetricsRow& row = rows[g];
    row.episodes = static_cast<int>(members[g].size());
    row.reward = column([](const EpisodeMetrics& m) { return m.summed_reward; });
    row.emv_speed = column([](const EpisodeMetrics& m) { return m.emv_speed; });
    row.av_speed = column([](const EpisodeMetrics& m) { return m.av_speed; });
    row.collisions = column([](const EpisodeMetrics& m) { return static_cast<double>(m.collisions); });
    row.risk = column([](const EpisodeMetrics& m) { return m.mean_risk; });
    row.emv_risk = column([](const EpisodeMetrics& m) { return m.emv_risk; });
    row.safety_distance = column([](const EpisodeMetrics& m) { return m.safety_distance; });
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV

/// Shortest decimal form that reads back to the same double.
inline std::string format_number(double v) {
  if (v == 0.0) return "0";  // folds -0
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  if (res.ec != std::errc()) return "nan";
  return std::string(buf, res.ptr);
}

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

inline void write_episode_csv(std::ostream& os, const std::vector<EpisodeRecord>& records) {
  os << "scenario,method,variant,agents,seed,episode,summed_reward,emv_speed,av_speed,collisions,mean_risk,"
        "emv_risk,safety_distance,steps\n";
  for (const auto& r : records) {
    const auto& m = r.metrics;
    os << csv_field(r.scenario) << ',' << csv_field(r.method) << ',' << csv_field(r.variant) << ',' << r.agents << ','
       << r.seed << ',' << r.episode << ',' << format_number(m.summed_reward) << ',' << format_number(m.emv_speed)
       << ',' << format_number(m.av_speed) << ',' << m.collisions << ',' << format_number(m.mean_risk) << ','
       << format_number(m.emv_risk) << ',' << format_number(m.safety_distance) << ',' << m.steps << '\n';
  }
}

inline void write_summary_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
  os << "scenario,method,variant,agents,episodes,reward_mean,reward_std,emv_speed_mean,emv_speed_std,av_speed_mean,"
        "av_speed_std,collisions_mean,collisions_std,risk_mean,risk_std,emv_risk_mean,emv_risk_std,safety_distance_mean,"
        "safety_distance_std\n";
  for (const auto& r : rows) {
    os << csv_field(r.scenario) << ',' << csv_field(r.method) << ',' << csv_field(r.variant) << ',' << r.agents << ','
       << r.episodes;
    for (const Summary& s : {r.reward, r.emv_speed, r.av_speed, r.collisions, r.risk, r.emv_risk, r.safety_distance}) {
      os << ',' << format_number(s.mean) << ',' << format_number(s.stddev);
    }
    os << '\n';
  }
}

}  // namespace emv
