/*
 * Copyright 2026 The critsel Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "critsel/error.hpp"
#include "critsel/mask_emitter.hpp"
#include "critsel/maze.hpp"
#include "critsel/parallel.hpp"
#include "critsel/selector_baselines.hpp"
#include "critsel/toy_trainer.hpp"
#include "critsel/value_selector.hpp"

namespace critsel::toy {

inline constexpr std::array<std::string_view, 4> kAblationStrategies{"value", "noncritical", "random", "full"};

struct AblationConfig {
  std::vector<std::string> strategies{"value", "noncritical", "random", "full"};
  std::vector<double> ratios{0.3};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::uint64_t family_seed = 2026;
  std::size_t held_in = 40;
  std::size_t held_out = 20;
  ValueConfig value;
  double rollout_epsilon = 0.5;
  TrainConfig train;
  /// Draw a fresh maze family per seed (family seed mixed with the run
  /// seed) instead of sharing one family across seeds.
  bool family_per_seed = true;
  std::size_t jobs = 1;
};

struct AblationRow {
  std::string strategy;
  double ratio = 0.0;
  std::uint64_t seed = 0;
  double held_in_success = 0.0;
  double held_out_success = 0.0;
  double mean_return_in = 0.0;
  double mean_return_out = 0.0;
  double trained_fraction = 0.0;
};

struct AblationSummary {
  std::string strategy;
  double ratio = 0.0;
  std::size_t runs = 0;
  double held_in_mean = 0.0, held_in_std = 0.0;
  double held_out_mean = 0.0, held_out_std = 0.0;
  double trained_fraction = 0.0;
};

/// Published LLM-agent averages (success %, held-in / held-out) for context only.
struct ReferenceRow {
  std::string_view label;
  double held_in;
  double held_out;
};

inline constexpr std::array<ReferenceRow, 4> kReferenceRows{{
    {"critical 30%", 65.91, 38.36},
    {"full 100%", 60.52, 36.18},
    {"random 30%", 59.90, 38.04},
    {"noncritical 30%", 56.17, 29.88},
}};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::vector<AblationSummary> summary;

  const AblationSummary* find(std::string_view strategy, double ratio) const {
    for (const auto& s : summary) {
      if (s.strategy == strategy && std::abs(s.ratio - ratio) < 1e-12) return &s;
    }
    return nullptr;
  }

  std::string to_csv() const {
    std::ostringstream out;
    out << std::setprecision(17);
    out << "strategy,ratio,seed,held_in_success,held_out_success,mean_return_in,mean_return_out\n";
    for (const auto& r : rows) {
      out << r.strategy << ',' << r.ratio << ',' << r.seed << ',' << r.held_in_success << ',' << r.held_out_success
          << ',' << r.mean_return_in << ',' << r.mean_return_out << '\n';
    }
    return out.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows) {
      j["rows"].push_back({{"strategy", r.strategy},
                           {"ratio", r.ratio},
                           {"seed", r.seed},
                           {"held_in_success", r.held_in_success},
                           {"held_out_success", r.held_out_success},
                           {"mean_return_in", r.mean_return_in},
                           {"mean_return_out", r.mean_return_out},
                           {"trained_fraction", r.trained_fraction}});
    }
    j["summary"] = nlohmann::json::array();
    for (const auto& s : summary) {
      j["summary"].push_back({{"strategy", s.strategy},
                              {"ratio", s.ratio},
                              {"runs", s.runs},
                              {"held_in_mean", s.held_in_mean},
                              {"held_in_std", s.held_in_std},
                              {"held_out_mean", s.held_out_mean},
                              {"held_out_std", s.held_out_std},
                              {"trained_fraction", s.trained_fraction}});
    }
    j["reference"] = nlohmann::json::array();
    for (const auto& r : kReferenceRows) {
      j["reference"].push_back({{"label", r.label}, {"held_in", r.held_in}, {"held_out", r.held_out}});
    }
    return j;
  }

  /// Strategy | ratio | held-in avg | held-out avg, mean +- stddev in %.
  std::string to_text() const {
    std::ostringstream out;
    out << std::fixed << std::setprecision(2);
    out << "strategy     ratio  trained  held-in            held-out\n";
    for (const auto& s : summary) {
      out << std::left << std::setw(12) << s.strategy << ' ' << std::right << std::setw(5) << s.ratio << "  "
          << std::setw(7) << s.trained_fraction << "  " << std::setw(6) << 100 * s.held_in_mean << " +- "
          << std::setw(5) << 100 * s.held_in_std << "   " << std::setw(6) << 100 * s.held_out_mean << " +- "
          << std::setw(5) << 100 * s.held_out_std << '\n';
    }
    out << "reference (LLM agents, not comparable in scale):\n";
    for (const auto& r : kReferenceRows) {
      out << "  " << std::left << std::setw(16) << r.label << std::right << " held-in " << r.held_in << "  held-out "
          << r.held_out << '\n';
    }
    return out.str();
  }
};

struct ToyData {
  maze::Split split;
  std::vector<Trajectory> experts;  // one per held-in maze
};

inline std::string held_in_id(std::size_t i) {
  std::ostringstream s;
  s << "maze-in-" << std::setw(4) << std::setfill('0') << i;
  return s.str();
}

inline std::string held_out_id(std::size_t i) {
  std::ostringstream s;
  s << "maze-out-" << std::setw(4) << std::setfill('0') << i;
  return s.str();
}

inline ToyData make_toy_data(std::uint64_t family_seed, std::size_t held_in, std::size_t held_out) {
  ToyData d;
  d.split = maze::make_split(family_seed, held_in, held_out);
  for (std::size_t i = 0; i < d.split.held_in.size(); ++i) {
    d.experts.push_back(maze::expert_trajectory(d.split.held_in[i], held_in_id(i)));
  }
  return d;
}

inline std::uint64_t family_seed_for(std::uint64_t family_seed, std::uint64_t run_seed) {
  return mix_seed(family_seed, "family", {run_seed});
}

/// Value-gap selections for every expert trajectory under one seed.
inline std::vector<CriticalSelection> value_selections(const ToyData& data, const ValueConfig& cfg,
                                                       double rollout_epsilon, std::uint64_t seed, std::size_t jobs,
                                                       std::vector<ValueProfile>* profiles_out = nullptr) {
  std::vector<ValueProfile> profiles(data.experts.size());
  parallel_for(data.experts.size(), jobs, [&](std::size_t i) {
    const maze::MazeEnv env(data.split.held_in[i]);
    const maze::NoisyShortestPathPolicy policy(data.split.held_in[i], rollout_epsilon);
    profiles[i] = compute_value_profile(env, data.experts[i], policy, cfg, seed);
  });
  std::vector<CriticalSelection> out;
  for (std::size_t i = 0; i < profiles.size(); ++i) out.push_back(build_value_selection(data.experts[i], profiles[i]));
  if (profiles_out) *profiles_out = std::move(profiles);
  return out;
}

inline CriticalSelection full_selection(const Trajectory& t) {
  CriticalSelection s;
  s.trajectory_id = t.id;
  s.strategy = Strategy::Random;
  s.ratio = 1.0;
  s.cap = t.steps.size();
  for (std::size_t i = 0; i < t.steps.size(); ++i) s.indices.push_back(i);
  s.note = "full trajectory";
  return s;
}

/// Selections for one (strategy, ratio, seed) cell.
inline std::vector<CriticalSelection> ablation_selections(const ToyData& data, std::string_view strategy, double ratio,
                                                          std::uint64_t seed,
                                                          const std::vector<CriticalSelection>& value_sel) {
  std::vector<CriticalSelection> out;
  for (std::size_t i = 0; i < data.experts.size(); ++i) {
    const auto& t = data.experts[i];
    if (strategy == "value") {
      out.push_back(value_sel[i]);
    } else if (strategy == "noncritical") {
      // A fully critical trajectory has no complement; it contributes no loss.
      if (value_sel[i].indices.size() == t.steps.size()) {
        CriticalSelection empty = value_sel[i];
        empty.strategy = Strategy::Noncritical;
        empty.indices.clear();
        empty.categories.clear();
        empty.note = "no complement";
        out.push_back(std::move(empty));
      } else {
        out.push_back(select_noncritical(t, value_sel[i], seed));
      }
    } else if (strategy == "random") {
      out.push_back(select_random(t, ratio, seed));
    } else if (strategy == "full") {
      out.push_back(full_selection(t));
    } else {
      throw Error(ErrorClass::ConfigurationError, "ablation has no selection source for strategy '" +
                                                      std::string(strategy) + "'");
    }
  }
  return out;
}

inline AblationRow run_ablation_cell(const ToyData& data, std::string_view strategy, double ratio, std::uint64_t seed,
                                     const std::vector<CriticalSelection>& value_sel, const AblationConfig& cfg) {
  Dataset d;
  d.trajectories = data.experts;
  for (auto& s : ablation_selections(data, strategy, ratio, seed, value_sel)) d.selections[s.trajectory_id] = s;
  EmissionReport report;
  const auto samples = build_masked_samples(d, {}, &report, nullptr);

  TrainConfig tc = cfg.train;
  tc.seed = seed;
  const auto policy = train(samples, tc);
  const auto in = evaluate(policy, data.split.held_in, tc.eval_episodes, seed);
  const auto out = evaluate(policy, data.split.held_out, tc.eval_episodes, seed);

  AblationRow row;
  row.strategy = std::string(strategy);
  row.ratio = ratio;
  row.seed = seed;
  row.held_in_success = in.success_rate;
  row.held_out_success = out.success_rate;
  row.mean_return_in = in.mean_return;
  row.mean_return_out = out.mean_return;
  row.trained_fraction = report.realized_ratio();
  return row;
}

/// Trains and evaluates one policy per (strategy, ratio, seed). Rows are
/// ordered ratio-major, then seed, then strategy, independent of `jobs`.
inline AblationResult run_ablation(const AblationConfig& cfg) {
  for (const auto& s : cfg.strategies) {
    if (std::find(kAblationStrategies.begin(), kAblationStrategies.end(), s) == kAblationStrategies.end()) {
      throw Error(ErrorClass::ConfigurationError, "unsupported ablation strategy '" + s + "'");
    }
  }
  if (cfg.strategies.empty() || cfg.ratios.empty() || cfg.seeds.empty()) {
    throw Error(ErrorClass::ConfigurationError, "ablation needs at least one strategy, ratio and seed");
  }
  for (double r : cfg.ratios) selection_cap(r, 1);

  std::vector<ToyData> data(cfg.seeds.size());
  std::vector<std::vector<CriticalSelection>> value_sel(cfg.seeds.size());
  for (std::size_t k = 0; k < cfg.seeds.size(); ++k) {
    if (k == 0 || cfg.family_per_seed) {
      const std::uint64_t family = cfg.family_per_seed ? family_seed_for(cfg.family_seed, cfg.seeds[k]) : cfg.family_seed;
      data[k] = make_toy_data(family, cfg.held_in, cfg.held_out);
    } else {
      data[k] = data[0];
    }
    value_sel[k] = value_selections(data[k], cfg.value, cfg.rollout_epsilon, cfg.seeds[k], cfg.jobs);
  }

  struct Cell {
    std::size_t ratio, seed, strategy;
  };
  std::vector<Cell> cells;
  for (std::size_t r = 0; r < cfg.ratios.size(); ++r) {
    for (std::size_t k = 0; k < cfg.seeds.size(); ++k) {
      for (std::size_t s = 0; s < cfg.strategies.size(); ++s) cells.push_back({r, k, s});
    }
  }
  AblationResult result;
  result.rows.resize(cells.size());
  parallel_for(cells.size(), cfg.jobs, [&](std::size_t i) {
    const auto& c = cells[i];
    result.rows[i] = run_ablation_cell(data[c.seed], cfg.strategies[c.strategy], cfg.ratios[c.ratio], cfg.seeds[c.seed],
                                       value_sel[c.seed], cfg);
  });

  for (double ratio : cfg.ratios) {
    for (const auto& strategy : cfg.strategies) {
      AblationSummary s;
      s.strategy = strategy;
      s.ratio = ratio;
      std::vector<double> in, out;
      for (const auto& r : result.rows) {
        if (r.strategy != strategy || r.ratio != ratio) continue;
        in.push_back(r.held_in_success);
        out.push_back(r.held_out_success);
        s.trained_fraction += r.trained_fraction;
      }
      s.runs = in.size();
      auto mean_std = [](const std::vector<double>& v, double& mean, double& sd) {
        mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
      };
      mean_std(in, s.held_in_mean, s.held_in_std);
      mean_std(out, s.held_out_mean, s.held_out_std);
      s.trained_fraction /= static_cast<double>(s.runs);
      result.summary.push_back(s);
    }
  }
  return result;
}

}  // namespace critsel::toy
