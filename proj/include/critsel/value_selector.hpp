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
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "critsel/environment.hpp"
#include "critsel/error.hpp"
#include "critsel/ingest.hpp"
#include "critsel/parallel.hpp"
#include "critsel/random.hpp"
#include "critsel/trajectory.hpp"

namespace critsel {

// Exact oracle

struct ValueIterationOptions {
  double tolerance = 1e-10;
  std::size_t max_iterations = 10000;
};

/// Value iteration to a fixed point. With a policy, evaluates it; without
/// one, computes optimal values.
inline std::vector<double> exact_state_values(const TabularMdp& mdp, double gamma,
                                              const TabularPolicy* policy = nullptr,
                                              ValueIterationOptions opts = {}) {
  const std::size_t n = mdp.num_states();
  if (policy && policy->size() != n) {
    throw Error(ErrorClass::ConfigurationError, "policy does not cover every state");
  }
  std::vector<double> v(n, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    if (mdp.terminal_value[s]) v[s] = *mdp.terminal_value[s];
  }
  std::vector<double> next(n);
  for (std::size_t iter = 0; iter < opts.max_iterations; ++iter) {
    double residual = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      if (mdp.terminal_value[s]) {
        next[s] = *mdp.terminal_value[s];
        continue;
      }
      const auto& actions = mdp.transitions[s];
      double best = policy ? 0.0 : -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < actions.size(); ++a) {
        double q = 0.0;
        for (const auto& o : actions[a]) q += o.probability * (o.reward + gamma * v[o.next]);
        if (policy) {
          best += (*policy)[s][a] * q;
        } else {
          best = std::max(best, q);
        }
      }
      if (actions.empty()) best = 0.0;
      next[s] = best;
      residual = std::max(residual, std::abs(next[s] - v[s]));
    }
    v.swap(next);
    if (residual < opts.tolerance) break;
  }
  return v;
}

/// Environment-level entry point; environments without a tabular view are
/// rejected.
template <class E>
std::vector<double> exact_state_values(const E& env, double gamma, const TabularPolicy* policy = nullptr) {
  if constexpr (requires { { env.tabular_view() } -> std::convertible_to<TabularMdp>; }) {
    return exact_state_values(env.tabular_view(), gamma, policy);
  } else {
    throw Error(ErrorClass::UnsupportedEnvironment, "environment exposes no enumerable state space");
  }
}

// Monte Carlo step rewards

namespace detail {

inline std::string squash_whitespace(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(c));
  }
  return out;
}

}  // namespace detail

/// Re-executes expert actions 0..upto from reset, checking each recorded
/// observation (modulo whitespace).
template <RolloutEnvironment E>
E replay_to(const E& fresh, const Trajectory& t, std::size_t upto) {
  E env = fresh;
  env.reset();
  for (std::size_t k = 0; k <= upto; ++k) {
    const Step& s = t.steps[k];
    const StepOutcome out = env.step(s.action);
    if (detail::squash_whitespace(out.observation) != detail::squash_whitespace(s.observation)) {
      throw Error(ErrorClass::ReplayError, "replay of '" + t.id + "' diverged at step " + std::to_string(k));
    }
  }
  return env;
}

/// Mean final reward of n rollouts started right after expert action `step`.
/// The terminal step returns the trajectory's final reward without rollouts.
template <RolloutEnvironment E>
double estimate_step_reward(const E& fresh, const Trajectory& t, std::size_t step, const RolloutPolicy& policy,
                            std::size_t n, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorClass::InvalidN, "rollout count must be >= 1");
  if (step >= t.steps.size()) {
    throw Error(ErrorClass::OutOfRange, "step " + std::to_string(step) + " beyond trajectory '" + t.id + "'");
  }
  const bool terminal = step + 1 == t.steps.size();
  if (terminal && t.final_reward) return *t.final_reward;

  const E start = replay_to(fresh, t, step);
  if (terminal || start.done()) return start.final_reward();

  std::vector<Step> history(t.steps.begin(), t.steps.begin() + static_cast<std::ptrdiff_t>(step) + 1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    E env = start;
    std::vector<Step> h = history;
    Rng rng(mix_seed(seed, t.id, {step, i}));
    std::string observation = h.back().observation;
    while (!env.done()) {
      std::string action = policy.act({t.instruction, h, observation}, rng);
      StepOutcome out = env.step(action);
      h.push_back({h.size(), "", std::move(action), out.observation});
      observation = std::move(out.observation);
    }
    total += env.final_reward();
  }
  return total / static_cast<double>(n);
}

/// values[t] = sum_{k>=t} gamma^(k-t) r_hat[k], via the backward recursion.
inline std::vector<double> discounted_values(std::span<const double> r_hat, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw Error(ErrorClass::ConfigurationError, "gamma must lie in (0,1]");
  std::vector<double> values(r_hat.size());
  double next = 0.0;
  for (std::size_t k = r_hat.size(); k-- > 0;) {
    values[k] = r_hat[k] + gamma * next;
    next = values[k];
  }
  return values;
}

enum class GapMode { Absolute, SignedIncrease };

inline std::optional<GapMode> parse_gap_mode(std::string_view s) {
  if (s == "absolute") return GapMode::Absolute;
  if (s == "signed") return GapMode::SignedIncrease;
  return std::nullopt;
}

/// gaps[0] = 0; gaps[t] = |values[t] - values[t-1]| (or the signed increase).
inline std::vector<double> value_gaps(std::span<const double> values, GapMode mode = GapMode::Absolute) {
  std::vector<double> gaps(values.size(), 0.0);
  for (std::size_t t = 1; t < values.size(); ++t) {
    const double diff = values[t] - values[t - 1];
    gaps[t] = mode == GapMode::Absolute ? std::abs(diff) : diff;
  }
  return gaps;
}

/// Steps t >= 1 whose value moved by more than `threshold` from step t-1.
inline std::vector<std::size_t> flag_by_value_gap(std::span<const double> values, double threshold,
                                                  GapMode mode = GapMode::Absolute) {
  if (!(threshold > 0.0)) throw Error(ErrorClass::ConfigurationError, "threshold must be > 0");
  const auto gaps = value_gaps(values, mode);
  std::vector<std::size_t> flagged;
  for (std::size_t t = 1; t < gaps.size(); ++t) {
    if (gaps[t] > threshold) flagged.push_back(t);
  }
  return flagged;
}

struct ValueConfig {
  std::size_t rollouts = 5;
  double gamma = 0.99;
  double threshold = 0.1;
  GapMode gap_mode = GapMode::Absolute;
};

struct ValueProfile {
  std::string trajectory_id;
  std::vector<double> r_hat;
  std::vector<double> values;
  std::vector<double> gaps;
  std::vector<std::size_t> flagged;
  std::size_t rollouts = 5;
  double gamma = 0.99;
  double threshold = 0.1;
  std::uint64_t seed = 0;

  bool operator==(const ValueProfile&) const = default;
};

/// Per-step MC rewards, discounted values, gaps and flags for one
/// trajectory. Steps are estimated in parallel with per-(step, rollout)
/// streams, so the result does not depend on `jobs`.
template <RolloutEnvironment E>
ValueProfile compute_value_profile(const E& fresh, const Trajectory& t, const RolloutPolicy& policy,
                                   const ValueConfig& cfg, std::uint64_t seed, std::size_t jobs = 1) {
  ValueProfile p;
  p.trajectory_id = t.id;
  p.rollouts = cfg.rollouts;
  p.gamma = cfg.gamma;
  p.threshold = cfg.threshold;
  p.seed = seed;
  p.r_hat.resize(t.steps.size());
  parallel_for(t.steps.size(), jobs, [&](std::size_t k) {
    p.r_hat[k] = estimate_step_reward(fresh, t, k, policy, cfg.rollouts, seed);
  });
  p.values = discounted_values(p.r_hat, cfg.gamma);
  p.gaps = value_gaps(p.values, cfg.gap_mode);
  p.flagged = flag_by_value_gap(p.values, cfg.threshold, cfg.gap_mode);
  return p;
}

/// Value-gap selection: the flagged steps, uncapped. With nothing flagged,
/// falls back to the single largest-gap step.
inline CriticalSelection build_value_selection(const Trajectory& t, const ValueProfile& profile) {
  if (profile.trajectory_id != t.id || profile.gaps.size() != t.steps.size()) {
    throw Error(ErrorClass::SelectionMismatch, "value profile '" + profile.trajectory_id +
                                                   "' does not match trajectory '" + t.id + "'");
  }
  CriticalSelection s;
  s.trajectory_id = t.id;
  s.strategy = Strategy::Value;
  s.seed = profile.seed;
  s.indices = profile.flagged;
  if (s.indices.empty()) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < profile.gaps.size(); ++k) {
      if (profile.gaps[k] > profile.gaps[best] || best == 0) best = k;
    }
    s.indices = {best};
    s.note = "fallback: no gap exceeded threshold " + std::to_string(profile.threshold) + "; chose largest gap";
  }
  s.cap = s.indices.size();
  s.ratio = static_cast<double>(s.indices.size()) / static_cast<double>(t.steps.size());
  return s;
}

inline json profile_to_json(const ValueProfile& p) {
  return {{"trajectory_id", p.trajectory_id}, {"r_hat", p.r_hat},         {"values", p.values},
          {"gaps", p.gaps},                   {"flagged", p.flagged},     {"N", p.rollouts},
          {"gamma", p.gamma},                 {"threshold", p.threshold}, {"seed", p.seed}};
}

inline ValueProfile profile_from_json(const json& j) {
  ValueProfile p;
  p.trajectory_id = j.at("trajectory_id").get<std::string>();
  p.r_hat = j.at("r_hat").get<std::vector<double>>();
  p.values = j.at("values").get<std::vector<double>>();
  p.gaps = j.at("gaps").get<std::vector<double>>();
  p.flagged = j.at("flagged").get<std::vector<std::size_t>>();
  p.rollouts = j.at("N").get<std::size_t>();
  p.gamma = j.at("gamma").get<double>();
  p.threshold = j.at("threshold").get<double>();
  p.seed = j.value("seed", std::uint64_t{0});
  return p;
}

inline std::vector<ValueProfile> load_profiles(const std::filesystem::path& path) {
  std::vector<ValueProfile> out;
  for_each_jsonl(path, [&](const json& j, std::size_t) { out.push_back(profile_from_json(j)); });
  return out;
}

inline void write_profiles(const std::vector<ValueProfile>& profiles, const std::filesystem::path& path) {
  std::string out;
  for (const auto& p : profiles) out += profile_to_json(p).dump() + "\n";
  io::write_file_atomic(path, out);
}

}  // namespace critsel
