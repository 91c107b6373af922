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
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "critsel/error.hpp"
#include "critsel/ingest.hpp"
#include "critsel/random.hpp"
#include "critsel/trajectory.hpp"

namespace critsel {

/// Token log-probabilities (natural log) of each step's thought+action
/// tokens, as scored by some reference model.
struct StepLogprobs {
  std::string trajectory_id;
  std::vector<std::vector<double>> per_step;
  /// Optional: number of leading tokens in each step that belong to the
  /// thought. Needed only for the thought-only and action-only modes.
  std::vector<std::size_t> thought_token_counts;
};

enum class PerplexityMode { Joint, ThoughtOnly, ActionOnly };

inline std::optional<PerplexityMode> parse_perplexity_mode(std::string_view s) {
  if (s == "joint") return PerplexityMode::Joint;
  if (s == "thought") return PerplexityMode::ThoughtOnly;
  if (s == "action") return PerplexityMode::ActionOnly;
  return std::nullopt;
}

/// exp(-mean(logprobs)).
inline double perplexity(std::span<const double> logprobs) {
  if (logprobs.empty()) throw Error(ErrorClass::EmptyStep, "step has no tokens");
  double sum = 0.0;
  for (double lp : logprobs) {
    if (!(lp <= 0.0)) {
      throw Error(ErrorClass::InvalidLogprob, "token log-probability must be <= 0, got " + std::to_string(lp));
    }
    sum += lp;
  }
  return std::exp(-sum / static_cast<double>(logprobs.size()));
}

inline std::span<const double> step_tokens(const StepLogprobs& lp, std::size_t step, PerplexityMode mode) {
  std::span<const double> all(lp.per_step[step]);
  if (mode == PerplexityMode::Joint) return all;
  if (lp.thought_token_counts.size() != lp.per_step.size()) {
    throw Error(ErrorClass::AlignmentError,
                "thought/action perplexity modes need thought_token_counts for '" + lp.trajectory_id + "'");
  }
  const std::size_t k = std::min(lp.thought_token_counts[step], all.size());
  return mode == PerplexityMode::ThoughtOnly ? all.first(k) : all.subspan(k);
}

inline std::vector<double> step_perplexities(const Trajectory& t, const StepLogprobs& lp,
                                             PerplexityMode mode = PerplexityMode::Joint) {
  if (lp.trajectory_id != t.id || lp.per_step.size() != t.steps.size()) {
    throw Error(ErrorClass::AlignmentError,
                "logprobs for '" + lp.trajectory_id + "' (" + std::to_string(lp.per_step.size()) +
                    " steps) do not align with trajectory '" + t.id + "' (" +
                    std::to_string(t.steps.size()) + " steps)");
  }
  std::vector<double> ppl(t.steps.size());
  for (std::size_t i = 0; i < ppl.size(); ++i) ppl[i] = perplexity(step_tokens(lp, i, mode));
  return ppl;
}

/// Ranks step indices by perplexity, highest first; ties go to the lower
/// index. Takes the first `count`, returned ascending.
inline std::vector<std::size_t> top_by_score(std::span<const double> scores, std::size_t count) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(std::min(count, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

inline CriticalSelection select_top_perplexity(const Trajectory& t, const StepLogprobs& lp, double ratio,
                                               PerplexityMode mode = PerplexityMode::Joint) {
  const std::size_t cap = selection_cap(ratio, t.steps.size());
  const auto ppl = step_perplexities(t, lp, mode);
  CriticalSelection s;
  s.trajectory_id = t.id;
  s.strategy = Strategy::Perplexity;
  s.ratio = ratio;
  s.cap = cap;
  s.indices = top_by_score(ppl, cap);
  return s;
}

/// Uniform sample of `count` distinct values from `pool` (partial
/// Fisher-Yates), returned ascending.
inline std::vector<std::size_t> sample_without_replacement(std::vector<std::size_t> pool, std::size_t count,
                                                           Rng& rng) {
  count = std::min(count, pool.size());
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

inline CriticalSelection select_random(const Trajectory& t, double ratio, std::uint64_t seed) {
  const std::size_t cap = selection_cap(ratio, t.steps.size());
  std::vector<std::size_t> pool(t.steps.size());
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  Rng rng(mix_seed(seed, t.id));

  CriticalSelection s;
  s.trajectory_id = t.id;
  s.strategy = Strategy::Random;
  s.ratio = ratio;
  s.cap = cap;
  s.seed = seed;
  s.indices = sample_without_replacement(std::move(pool), cap, rng);
  return s;
}

/// Equal-size (where possible) draw from the steps the critical selection
/// left out.
inline CriticalSelection select_noncritical(const Trajectory& t, const CriticalSelection& critical,
                                            std::uint64_t seed) {
  check_selection(t, critical);
  std::vector<std::size_t> complement;
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    if (!std::binary_search(critical.indices.begin(), critical.indices.end(), i)) complement.push_back(i);
  }
  if (complement.empty()) {
    throw Error(ErrorClass::NoComplement, "every step of '" + t.id + "' is critical; complement is empty");
  }
  const std::size_t count = std::min(critical.indices.size(), complement.size());
  // Salted so the stream differs from select_random under the same seed.
  Rng rng(mix_seed(seed, t.id, {0x6E6F6E63ULL}));

  CriticalSelection s;
  s.trajectory_id = t.id;
  s.strategy = Strategy::Noncritical;
  s.ratio = critical.ratio;
  s.cap = std::max<std::size_t>(count, 1);
  s.seed = seed;
  s.indices = sample_without_replacement(std::move(complement), count, rng);
  return s;
}

// Logprob sidecar: {"trajectory_id": str, "steps": [[float,...],...],
//                   "thought_token_counts": [int,...]?}

inline StepLogprobs logprobs_from_json(const json& j) {
  StepLogprobs lp;
  lp.trajectory_id = j.at("trajectory_id").get<std::string>();
  lp.per_step = j.at("steps").get<std::vector<std::vector<double>>>();
  if (j.contains("thought_token_counts")) {
    lp.thought_token_counts = j.at("thought_token_counts").get<std::vector<std::size_t>>();
  }
  return lp;
}

inline json logprobs_to_json(const StepLogprobs& lp) {
  json j = {{"trajectory_id", lp.trajectory_id}, {"steps", lp.per_step}};
  if (!lp.thought_token_counts.empty()) j["thought_token_counts"] = lp.thought_token_counts;
  return j;
}

inline std::map<std::string, StepLogprobs> load_logprobs(const std::filesystem::path& path) {
  std::map<std::string, StepLogprobs> out;
  for_each_jsonl(path, [&](const json& j, std::size_t line_no) {
    auto lp = logprobs_from_json(j);
    if (out.contains(lp.trajectory_id)) {
      throw Error(ErrorClass::DuplicateId, path.string() + ":" + std::to_string(line_no) +
                                               ": duplicate trajectory_id '" + lp.trajectory_id + "'");
    }
    out.emplace(lp.trajectory_id, std::move(lp));
  });
  return out;
}

}  // namespace critsel
