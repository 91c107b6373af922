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
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "critsel/error.hpp"
#include "critsel/mask_emitter.hpp"
#include "critsel/maze.hpp"
#include "critsel/parallel.hpp"
#include "critsel/random.hpp"

namespace critsel::toy {

using maze::Direction;

/// Per-action feature block for the maze family:
///   [0]      bias
///   [1..3]   sign of goal row offset (goal above, level, below)
///   [4..6]   sign of goal column offset (goal left, level, right)
///   [7..10]  blocked up/down/left/right
///   [11..15] previous action (none, up, down, left, right)
/// phi(x, a) places the block at slot a, so theta learns one weight set per
/// action. No feature identifies the absolute position.
inline constexpr std::size_t kBlock = 16;
inline constexpr std::size_t kActions = 4;
inline constexpr std::size_t kDim = kBlock * kActions;

using ContextFeatures = std::array<double, kBlock>;

inline ContextFeatures context_features(const maze::MazeView& view, std::optional<Direction> previous) {
  ContextFeatures f{};
  f[0] = 1.0;
  const int dr = view.goal.row - view.position.row;
  const int dc = view.goal.col - view.position.col;
  f[1 + (dr < 0 ? 0 : dr == 0 ? 1 : 2)] = 1.0;
  f[4 + (dc < 0 ? 0 : dc == 0 ? 1 : 2)] = 1.0;
  for (std::size_t d = 0; d < 4; ++d) f[7 + d] = view.blocked[d] ? 1.0 : 0.0;
  f[11 + (previous ? 1 + maze::to_index(*previous) : 0)] = 1.0;
  return f;
}

/// theta over kDim features; pi(a|x) = softmax_a(theta . phi(x, a)) over the
/// four moves, all of which are always legal.
struct LogLinearPolicy {
  std::vector<double> theta = std::vector<double>(kDim, 0.0);

  std::array<double, kActions> scores(const ContextFeatures& f) const {
    std::array<double, kActions> s{};
    for (std::size_t a = 0; a < kActions; ++a) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kBlock; ++k) acc += theta[a * kBlock + k] * f[k];
      s[a] = acc;
    }
    return s;
  }

  std::array<double, kActions> probabilities(const ContextFeatures& f) const {
    auto s = scores(f);
    const double m = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (auto& v : s) z += (v = std::exp(v - m));
    for (auto& v : s) v /= z;
    return s;
  }

  double log_probability(const ContextFeatures& f, std::size_t action) const {
    const auto s = scores(f);
    const double m = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (double v : s) z += std::exp(v - m);
    return s[action] - m - std::log(z);
  }
};

/// One turn ready for the objective: the context it was taken in, the
/// expert move, and whether it carries loss.
struct CompiledTurn {
  ContextFeatures features{};
  std::size_t action = 0;
  bool train = false;
};

/// Builds per-turn contexts. Turn t sees the instruction (t = 0) or the
/// observation after turn t-1, plus the previous action.
inline std::vector<CompiledTurn> compile_sample(const MaskedSample& m) {
  std::vector<CompiledTurn> out;
  std::optional<Direction> previous;
  for (std::size_t t = 0; t < m.turns.size(); ++t) {
    const std::string& context = t == 0 ? m.instruction : m.turns[t - 1].observation;
    const auto view = maze::parse_observation(context);
    if (!view) {
      throw Error(ErrorClass::VocabularyError,
                  "turn " + std::to_string(t) + " of '" + m.trajectory_id + "' has no maze observation in context");
    }
    const auto action = maze::parse_direction(m.turns[t].action);
    if (!action) {
      throw Error(ErrorClass::VocabularyError,
                  "unknown action '" + m.turns[t].action + "' in '" + m.trajectory_id + "'");
    }
    out.push_back({context_features(*view, previous), maze::to_index(*action), m.turns[t].train});
    previous = action;
  }
  return out;
}

inline std::vector<CompiledTurn> compile_samples(std::span<const MaskedSample> samples) {
  std::vector<CompiledTurn> out;
  for (const auto& m : samples) {
    auto c = compile_sample(m);
    out.insert(out.end(), c.begin(), c.end());
  }
  return out;
}

inline std::size_t trained_count(std::span<const CompiledTurn> turns) {
  return static_cast<std::size_t>(std::count_if(turns.begin(), turns.end(), [](const auto& t) { return t.train; }));
}

/// Sum of log pi(a_t | context_t) over turns flagged train.
inline double masked_log_likelihood(const LogLinearPolicy& policy, std::span<const CompiledTurn> turns) {
  double total = 0.0;
  for (const auto& t : turns) {
    if (t.train) total += policy.log_probability(t.features, t.action);
  }
  return total;
}

inline double masked_log_likelihood(const LogLinearPolicy& policy, std::span<const MaskedSample> samples,
                                    const WarningSink& warn = warn_stderr) {
  const auto turns = compile_samples(samples);
  if (trained_count(turns) == 0 && warn) warn("no trained turns; objective is an empty sum");
  return masked_log_likelihood(policy, turns);
}

/// Analytic gradient of the masked log-likelihood minus l2 * theta.
inline std::vector<double> gradient(const LogLinearPolicy& policy, std::span<const CompiledTurn> turns, double l2) {
  std::vector<double> g(kDim, 0.0);
  for (const auto& t : turns) {
    if (!t.train) continue;
    const auto p = policy.probabilities(t.features);
    for (std::size_t a = 0; a < kActions; ++a) {
      const double coeff = (a == t.action ? 1.0 : 0.0) - p[a];
      for (std::size_t k = 0; k < kBlock; ++k) g[a * kBlock + k] += coeff * t.features[k];
    }
  }
  for (std::size_t i = 0; i < kDim; ++i) g[i] -= l2 * policy.theta[i];
  return g;
}

inline std::vector<double> gradient(const LogLinearPolicy& policy, std::span<const MaskedSample> samples, double l2) {
  return gradient(policy, compile_samples(samples), l2);
}

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t epochs = 200;
  double l2 = 1e-4;
  std::uint64_t seed = 0;
  std::size_t eval_episodes = 200;
};

/// Regularized objective that train() ascends.
inline double training_objective(const LogLinearPolicy& policy, std::span<const CompiledTurn> turns, double l2) {
  double sq = 0.0;
  for (double v : policy.theta) sq += v * v;
  return masked_log_likelihood(policy, turns) - 0.5 * l2 * sq;
}

/// Full-batch gradient ascent on the summed objective from theta = 0.
/// Deterministic.
inline LogLinearPolicy train(std::span<const CompiledTurn> turns, const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0.0) || cfg.l2 < 0.0) {
    throw Error(ErrorClass::ConfigurationError, "learning_rate must be > 0 and l2 >= 0");
  }
  LogLinearPolicy policy;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto g = gradient(policy, turns, cfg.l2);
    for (std::size_t i = 0; i < kDim; ++i) policy.theta[i] += cfg.learning_rate * g[i];
  }
  return policy;
}

inline LogLinearPolicy train(std::span<const MaskedSample> samples, const TrainConfig& cfg) {
  return train(compile_samples(samples), cfg);
}

struct EvalResult {
  double success_rate = 0.0;
  double mean_return = 0.0;
};

/// Greedy rollouts (ties broken at random) on each spec; reports mean
/// success and mean undiscounted return over all episodes.
inline EvalResult evaluate(const LogLinearPolicy& policy, std::span<const maze::MazeSpec> specs, std::size_t episodes,
                           std::uint64_t seed, std::size_t jobs = 1) {
  if (specs.empty() || episodes == 0) return {};
  std::vector<EvalResult> per_spec(specs.size());
  parallel_for(specs.size(), jobs, [&](std::size_t i) {
    const maze::MazeEnv fresh(specs[i]);
    double successes = 0.0;
    double returns = 0.0;
    for (std::size_t e = 0; e < episodes; ++e) {
      Rng rng(mix_seed(seed, "evaluate", {i, e}));
      maze::MazeEnv env = fresh;
      std::string observation = env.reset();
      std::optional<Direction> previous;
      double ret = 0.0;
      while (!env.done()) {
        const auto view = maze::parse_observation(observation);
        const auto s = policy.scores(context_features(*view, previous));
        const double best = *std::max_element(s.begin(), s.end());
        std::array<std::size_t, kActions> ties{};
        std::size_t n_ties = 0;
        for (std::size_t a = 0; a < kActions; ++a) {
          if (s[a] == best) ties[n_ties++] = a;
        }
        const std::size_t a = n_ties == 1 ? ties[0] : ties[rng.below(n_ties)];
        const Direction d = maze::kDirections[a];
        const auto out = env.step(maze::to_string(d));
        ret += out.reward;
        observation = out.observation;
        previous = d;
      }
      successes += env.final_reward();
      returns += ret;
    }
    per_spec[i] = {successes / static_cast<double>(episodes), returns / static_cast<double>(episodes)};
  });
  EvalResult total;
  for (const auto& r : per_spec) {
    total.success_rate += r.success_rate;
    total.mean_return += r.mean_return;
  }
  total.success_rate /= static_cast<double>(specs.size());
  total.mean_return /= static_cast<double>(specs.size());
  return total;
}

inline nlohmann::json policy_to_json(const LogLinearPolicy& p) {
  return {{"family", "maze"}, {"dimension", kDim}, {"theta", p.theta}};
}

inline LogLinearPolicy policy_from_json(const nlohmann::json& j) {
  LogLinearPolicy p;
  p.theta = j.at("theta").get<std::vector<double>>();
  if (p.theta.size() != kDim) throw Error(ErrorClass::ConfigurationError, "policy dimension mismatch");
  for (double v : p.theta) {
    if (!std::isfinite(v)) throw Error(ErrorClass::ConfigurationError, "policy has non-finite weights");
  }
  return p;
}

}  // namespace critsel::toy
