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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "critsel/error.hpp"

namespace critsel {

struct Step {
  std::size_t index = 0;
  std::string thought;
  std::string action;
  std::string observation;

  bool operator==(const Step&) const = default;
};

struct Trajectory {
  std::string id;
  std::string environment;
  std::string instruction;
  std::vector<Step> steps;
  std::optional<double> final_reward;

  std::size_t length() const noexcept { return steps.size(); }
  bool operator==(const Trajectory&) const = default;
};

enum class StepCategory { PlanCreation, CriticalObservation, CriticalAction, SelfCorrection };

constexpr std::string_view to_string(StepCategory c) {
  switch (c) {
    case StepCategory::PlanCreation: return "PlanCreation";
    case StepCategory::CriticalObservation: return "CriticalObservation";
    case StepCategory::CriticalAction: return "CriticalAction";
    case StepCategory::SelfCorrection: return "SelfCorrection";
  }
  return "";
}

inline std::optional<StepCategory> parse_category(std::string_view s) {
  for (auto c : {StepCategory::PlanCreation, StepCategory::CriticalObservation,
                 StepCategory::CriticalAction, StepCategory::SelfCorrection}) {
    if (to_string(c) == s) return c;
  }
  return std::nullopt;
}

enum class Strategy { Llm, Perplexity, Random, Value, Noncritical };

constexpr std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::Llm: return "llm";
    case Strategy::Perplexity: return "perplexity";
    case Strategy::Random: return "random";
    case Strategy::Value: return "value";
    case Strategy::Noncritical: return "noncritical";
  }
  return "";
}

inline std::optional<Strategy> parse_strategy(std::string_view s) {
  for (auto v : {Strategy::Llm, Strategy::Perplexity, Strategy::Random, Strategy::Value,
                 Strategy::Noncritical}) {
    if (to_string(v) == s) return v;
  }
  return std::nullopt;
}

/// The set of steps a strategy marked trainable for one trajectory, with
/// enough provenance to reproduce it.
struct CriticalSelection {
  std::string trajectory_id;
  std::vector<std::size_t> indices;  // strictly ascending
  std::map<std::size_t, StepCategory> categories;
  Strategy strategy = Strategy::Random;
  double ratio = 1.0;
  std::size_t cap = 1;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> plan_summary;
  std::optional<std::string> note;

  bool operator==(const CriticalSelection&) const = default;
};

struct Dataset {
  std::vector<Trajectory> trajectories;
  std::map<std::string, CriticalSelection> selections;
};

struct Violation {
  std::string field;
  std::optional<std::size_t> position;
  std::string message;
};

/// Checks Step and Trajectory invariants. An empty result means the
/// trajectory is valid.
inline std::vector<Violation> validate_trajectory(const Trajectory& t) {
  std::vector<Violation> report;
  if (t.id.empty()) report.push_back({"id", std::nullopt, "empty id"});
  if (t.steps.empty()) report.push_back({"steps", std::nullopt, "no steps"});
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    const Step& s = t.steps[i];
    if (s.index != i) {
      report.push_back({"index", i, "index gap at position " + std::to_string(i)});
    }
    if (s.action.empty()) {
      report.push_back({"action", i, "empty action at position " + std::to_string(i)});
    }
  }
  if (t.final_reward && !(*t.final_reward >= 0.0 && *t.final_reward <= 1.0)) {
    report.push_back({"final_reward", std::nullopt, "final_reward out of [0,1]"});
  }
  return report;
}

/// Upper bound on selected steps: floor(ratio * length), at least 1.
inline std::size_t selection_cap(double ratio, std::size_t length) {
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    throw Error(ErrorClass::InvalidRatio, "ratio must lie in (0,1], got " + std::to_string(ratio));
  }
  if (length == 0) throw Error(ErrorClass::EmptyTrajectory, "trajectory has no steps");
  // The epsilon absorbs representation error such as 0.29 * 100 = 28.999...
  const auto raw = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(length) + 1e-9));
  return std::clamp<std::size_t>(raw, 1, length);
}

/// First `upto` steps of the trajectory.
inline std::span<const Step> history_prefix(const Trajectory& t, std::size_t upto) {
  if (upto > t.steps.size()) {
    throw Error(ErrorClass::OutOfRange, "history prefix " + std::to_string(upto) +
                                            " exceeds trajectory length " +
                                            std::to_string(t.steps.size()));
  }
  return std::span<const Step>(t.steps.data(), upto);
}

/// Throws selection-mismatch unless `s` is a well-formed selection for `t`.
inline void check_selection(const Trajectory& t, const CriticalSelection& s) {
  if (s.trajectory_id != t.id) {
    throw Error(ErrorClass::SelectionMismatch,
                "selection for '" + s.trajectory_id + "' applied to trajectory '" + t.id + "'");
  }
  for (std::size_t k = 0; k < s.indices.size(); ++k) {
    if (s.indices[k] >= t.steps.size()) {
      throw Error(ErrorClass::SelectionMismatch,
                  "index " + std::to_string(s.indices[k]) + " out of range for '" + t.id +
                      "' with " + std::to_string(t.steps.size()) + " steps");
    }
    if (k > 0 && s.indices[k] <= s.indices[k - 1]) {
      throw Error(ErrorClass::SelectionMismatch,
                  "indices not strictly ascending in selection for '" + t.id + "'");
    }
  }
  for (const auto& [idx, cat] : s.categories) {
    if (!std::binary_search(s.indices.begin(), s.indices.end(), idx)) {
      throw Error(ErrorClass::SelectionMismatch,
                  "category given for unselected index " + std::to_string(idx));
    }
  }
}

using WarningSink = std::function<void(std::string_view)>;

inline void warn_stderr(std::string_view message) { std::cerr << "warning: " << message << '\n'; }

/// Per-step train flags. Flags cover thought and action; observations are
/// never trainable.
inline std::vector<bool> apply_selection(const Trajectory& t, const CriticalSelection& s,
                                         const WarningSink& warn = warn_stderr) {
  check_selection(t, s);
  std::vector<bool> flags(t.steps.size(), false);
  for (std::size_t i : s.indices) flags[i] = true;
  if (s.indices.empty() && warn) warn("empty selection for '" + t.id + "'; no step is trainable");
  return flags;
}

}  // namespace critsel
