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

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "critsel/error.hpp"
#include "critsel/ingest.hpp"
#include "critsel/io.hpp"
#include "critsel/trajectory.hpp"

namespace critsel {

struct MaskedTurn {
  std::string thought;
  std::string action;
  std::string observation;
  bool train = false;

  bool operator==(const MaskedTurn&) const = default;
};

/// One training record: the whole trajectory as context, with per-turn
/// flags saying which thought+action pairs carry loss.
struct MaskedSample {
  std::string trajectory_id;
  std::string system_context;
  std::string instruction;
  std::vector<MaskedTurn> turns;
  json metadata = json::object();

  std::size_t trained_turns() const {
    std::size_t n = 0;
    for (const auto& t : turns) n += t.train ? 1 : 0;
    return n;
  }
  bool operator==(const MaskedSample&) const = default;
};

inline constexpr std::string_view kReactFormat =
    "Respond in the following format.\nThought:\n<your reasoning about the current situation>\n"
    "Action:\n<the single action to take>";

/// Task preamble placed before the instruction. Holds the think/act
/// templates the trained turns follow.
inline std::string system_context_for(std::string_view environment) {
  std::string preamble;
  if (environment == "maze") {
    preamble =
        "You are an agent in a grid maze. Each turn you observe your position, the goal position and "
        "which directions are blocked. Available actions: up, down, left, right. Moving into a wall "
        "leaves you in place.";
  } else {
    preamble = "You are an agent interacting with an environment to complete a task. After each action "
               "the environment returns an observation.";
  }
  return preamble + "\n" + std::string(kReactFormat);
}

/// Fine-tuning defaults reported alongside emitted data. Informational only.
inline json informational_training_defaults() {
  return {{"optimizer", "adam"},     {"learning_rate", 2e-5}, {"scheduler", "cosine"}, {"epochs", 3},
          {"warmup_ratio", 0.03},    {"batch_size", 128},     {"max_length", 8192}};
}

struct EmitOptions {
  std::optional<std::string> selector_model;
};

inline MaskedSample make_masked_sample(const Trajectory& t, const CriticalSelection& s,
                                       const EmitOptions& opts = {}, const WarningSink& warn = warn_stderr) {
  const auto flags = apply_selection(t, s, warn);
  MaskedSample m;
  m.trajectory_id = t.id;
  m.system_context = system_context_for(t.environment);
  m.instruction = t.instruction;
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    const Step& st = t.steps[i];
    m.turns.push_back({st.thought, st.action, st.observation, flags[i]});
  }
  m.metadata = {{"environment", t.environment},
                {"strategy", std::string(to_string(s.strategy))},
                {"ratio", s.ratio},
                {"cap", s.cap}};
  if (s.seed) m.metadata["seed"] = *s.seed;
  if (opts.selector_model) m.metadata["selector_model"] = *opts.selector_model;
  m.metadata["informational_training_defaults"] = informational_training_defaults();
  if (m.trained_turns() == 0) m.metadata["degenerate"] = true;
  return m;
}

inline json masked_sample_to_json(const MaskedSample& m) {
  json turns = json::array();
  for (const auto& t : m.turns) {
    turns.push_back({{"thought", t.thought}, {"action", t.action}, {"observation", t.observation}, {"train", t.train}});
  }
  return {{"trajectory_id", m.trajectory_id},
          {"system_context", m.system_context},
          {"instruction", m.instruction},
          {"turns", std::move(turns)},
          {"metadata", m.metadata}};
}

inline MaskedSample masked_sample_from_json(const json& j) {
  MaskedSample m;
  m.trajectory_id = j.at("trajectory_id").get<std::string>();
  m.system_context = j.at("system_context").get<std::string>();
  m.instruction = j.at("instruction").get<std::string>();
  for (const auto& t : j.at("turns")) {
    m.turns.push_back({t.at("thought").get<std::string>(), t.at("action").get<std::string>(),
                       t.at("observation").get<std::string>(), t.at("train").get<bool>()});
  }
  if (j.contains("metadata")) m.metadata = j.at("metadata");
  return m;
}

inline std::vector<MaskedSample> load_masked_dataset(const std::filesystem::path& path) {
  std::vector<MaskedSample> out;
  for_each_jsonl(path, [&](const json& j, std::size_t) { out.push_back(masked_sample_from_json(j)); });
  return out;
}

struct EmissionReport {
  std::size_t samples = 0;
  std::size_t total_steps = 0;
  std::size_t trained_steps = 0;
  std::size_t degenerate_samples = 0;
  std::map<std::string, std::size_t> category_counts;

  double realized_ratio() const {
    return total_steps == 0 ? 0.0 : static_cast<double>(trained_steps) / static_cast<double>(total_steps);
  }

  json to_json() const {
    return {{"samples", samples},
            {"total_steps", total_steps},
            {"trained_steps", trained_steps},
            {"realized_ratio", realized_ratio()},
            {"degenerate_samples", degenerate_samples},
            {"category_counts", category_counts}};
  }
};

/// Masked samples for every trajectory of `d`, in dataset order.
inline std::vector<MaskedSample> build_masked_samples(const Dataset& d, const EmitOptions& opts = {},
                                                      EmissionReport* report = nullptr,
                                                      const WarningSink& warn = warn_stderr) {
  std::vector<MaskedSample> samples;
  EmissionReport r;
  for (const auto& t : d.trajectories) {
    auto it = d.selections.find(t.id);
    if (it == d.selections.end()) {
      throw Error(ErrorClass::MissingSelection, "no selection for trajectory '" + t.id + "'");
    }
    samples.push_back(make_masked_sample(t, it->second, opts, warn));
    ++r.samples;
    r.total_steps += t.steps.size();
    r.trained_steps += samples.back().trained_turns();
    if (samples.back().trained_turns() == 0) ++r.degenerate_samples;
    for (const auto& [idx, cat] : it->second.categories) ++r.category_counts[std::string(to_string(cat))];
  }
  if (report) *report = r;
  return samples;
}

inline std::string masked_samples_to_jsonl(const std::vector<MaskedSample>& samples) {
  std::string out;
  for (const auto& m : samples) out += masked_sample_to_json(m).dump() + "\n";
  return out;
}

inline EmissionReport emit_masked_dataset(const Dataset& d, const std::filesystem::path& out_path,
                                          const EmitOptions& opts = {}, const WarningSink& warn = warn_stderr) {
  EmissionReport report;
  const auto samples = build_masked_samples(d, opts, &report, warn);
  io::write_file_atomic(out_path, masked_samples_to_jsonl(samples));
  return report;
}

// Selection statistics

struct SelectionStats {
  std::size_t selections = 0;
  std::size_t selected_steps = 0;
  std::size_t total_steps = 0;  // 0 when no dataset was supplied
  std::map<std::string, double> per_trajectory_ratio;
  std::map<std::string, std::size_t> category_histogram;
  std::map<std::string, std::size_t> strategy_counts;
  std::size_t truncated_or_fallback = 0;

  double realized_ratio() const {
    return total_steps == 0 ? 0.0 : static_cast<double>(selected_steps) / static_cast<double>(total_steps);
  }

  json to_json() const {
    return {{"selections", selections},
            {"selected_steps", selected_steps},
            {"total_steps", total_steps},
            {"realized_ratio", realized_ratio()},
            {"per_trajectory_ratio", per_trajectory_ratio},
            {"category_histogram", category_histogram},
            {"strategy_counts", strategy_counts},
            {"annotated", truncated_or_fallback}};
  }

  std::string to_text() const {
    std::ostringstream out;
    out << "selections: " << selections << "\n"
        << "selected steps: " << selected_steps << "\n";
    if (total_steps > 0) out << "total steps: " << total_steps << "\nrealized ratio: " << realized_ratio() << "\n";
    out << "strategies:";
    if (strategy_counts.empty()) out << " none";
    for (const auto& [k, v] : strategy_counts) out << " " << k << "=" << v;
    out << "\ncategories:";
    if (category_histogram.empty()) out << " none";
    for (const auto& [k, v] : category_histogram) out << " " << k << "=" << v;
    out << "\n";
    return out.str();
  }
};

/// Realized ratios need trajectory lengths, so they are only filled in when
/// `dataset` is given.
inline SelectionStats dataset_stats(const std::vector<CriticalSelection>& selections,
                                    const Dataset* dataset = nullptr) {
  SelectionStats st;
  std::map<std::string, std::size_t> lengths;
  if (dataset) {
    for (const auto& t : dataset->trajectories) lengths[t.id] = t.steps.size();
  }
  for (const auto& s : selections) {
    ++st.selections;
    st.selected_steps += s.indices.size();
    ++st.strategy_counts[std::string(to_string(s.strategy))];
    for (const auto& [idx, cat] : s.categories) ++st.category_histogram[std::string(to_string(cat))];
    if (s.note && (s.note->find("truncated") != std::string::npos || s.note->find("fallback") != std::string::npos)) {
      ++st.truncated_or_fallback;
    }
    if (auto it = lengths.find(s.trajectory_id); it != lengths.end() && it->second > 0) {
      st.total_steps += it->second;
      st.per_trajectory_ratio[s.trajectory_id] =
          static_cast<double>(s.indices.size()) / static_cast<double>(it->second);
    }
  }
  return st;
}

}  // namespace critsel
