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

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "critsel/ablation.hpp"
#include "critsel/error.hpp"
#include "critsel/io.hpp"
#include "critsel/selector_baselines.hpp"
#include "critsel/selector_llm.hpp"
#include "critsel/toy_trainer.hpp"
#include "critsel/value_selector.hpp"

namespace critsel {

/// Every tunable of the pipeline. Unknown keys in a config file are
/// rejected; absent keys keep these defaults.
struct RunConfig {
  double ratio = 0.3;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  PerplexityMode perplexity_mode = PerplexityMode::Joint;
  ValueConfig value;
  double rollout_epsilon = 0.5;
  EndpointConfig endpoint{.base_url = ""};
  SelectorPromptConfig prompt;
  std::string cache_dir = ".critsel-cache";
  std::uint64_t family_seed = 2026;
  std::size_t held_in = 40;
  std::size_t held_out = 20;
  toy::TrainConfig train;
  std::vector<std::string> ablation_strategies{"value", "noncritical", "random", "full"};
  std::vector<double> ablation_ratios{0.3};
  std::vector<std::uint64_t> ablation_seeds{0, 1, 2, 3, 4};
  bool family_per_seed = true;

  toy::AblationConfig ablation() const {
    toy::AblationConfig a;
    a.strategies = ablation_strategies;
    a.ratios = ablation_ratios;
    a.seeds = ablation_seeds;
    a.family_seed = family_seed;
    a.held_in = held_in;
    a.held_out = held_out;
    a.value = value;
    a.rollout_epsilon = rollout_epsilon;
    a.train = train;
    a.family_per_seed = family_per_seed;
    a.jobs = jobs;
    return a;
  }
};

namespace detail {

inline void reject_unknown_keys(const json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!j.is_object()) {
    throw Error(ErrorClass::ConfigurationError, std::string(where) + " must be a JSON object");
  }
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == key;
    if (!ok) {
      throw Error(ErrorClass::ConfigurationError,
                  "unknown config key '" + (where.empty() ? key : std::string(where) + "." + key) + "'");
    }
  }
}

template <class T>
void read_if(const json& j, const std::string& key, T& out) {
  if (j.contains(key)) out = j.at(key).template get<T>();
}

}  // namespace detail

inline std::string_view to_string(PerplexityMode m) {
  switch (m) {
    case PerplexityMode::Joint: return "joint";
    case PerplexityMode::ThoughtOnly: return "thought";
    case PerplexityMode::ActionOnly: return "action";
  }
  return "joint";
}

inline std::string_view to_string(GapMode m) { return m == GapMode::Absolute ? "absolute" : "signed"; }

/// Serializes the resolved configuration. `jobs` is left out: it never
/// changes results, and snapshots must match across worker counts.
inline json config_to_json(const RunConfig& c) {
  return {
      {"ratio", c.ratio},
      {"seed", c.seed},
      {"perplexity_mode", std::string(to_string(c.perplexity_mode))},
      {"value",
       {{"N", c.value.rollouts},
        {"gamma", c.value.gamma},
        {"threshold", c.value.threshold},
        {"gap_mode", std::string(to_string(c.value.gap_mode))},
        {"rollout_epsilon", c.rollout_epsilon}}},
      {"endpoint",
       {{"base_url", c.endpoint.base_url},
        {"model_name", c.endpoint.model_name},
        {"api_key_env_var", c.endpoint.api_key_env_var},
        {"max_retries", c.endpoint.max_retries},
        {"timeout_ms", c.endpoint.timeout.count()},
        {"temperature", c.endpoint.temperature},
        {"retry_backoff_ms", c.endpoint.retry_backoff.count()},
        {"max_in_flight", c.endpoint.max_in_flight}}},
      {"prompt", {{"observation_truncation", c.prompt.observation_truncation}}},
      {"cache_dir", c.cache_dir},
      {"toy", {{"family_seed", c.family_seed}, {"held_in", c.held_in}, {"held_out", c.held_out}}},
      {"train",
       {{"learning_rate", c.train.learning_rate},
        {"epochs", c.train.epochs},
        {"l2", c.train.l2},
        {"seed", c.train.seed},
        {"eval_episodes", c.train.eval_episodes}}},
      {"ablation",
       {{"strategies", c.ablation_strategies},
        {"ratios", c.ablation_ratios},
        {"seeds", c.ablation_seeds},
        {"family_per_seed", c.family_per_seed}}},
  };
}

inline void validate_config(const RunConfig& c) {
  auto fail = [](const std::string& m) { throw Error(ErrorClass::ConfigurationError, m); };
  if (!(c.ratio > 0.0 && c.ratio <= 1.0)) fail("ratio must lie in (0,1]");
  if (c.value.rollouts < 1) fail("value.N must be >= 1");
  if (!(c.value.gamma > 0.0 && c.value.gamma <= 1.0)) fail("value.gamma must lie in (0,1]");
  if (!(c.value.threshold > 0.0)) fail("value.threshold must be > 0");
  if (!(c.rollout_epsilon >= 0.0 && c.rollout_epsilon <= 1.0)) fail("value.rollout_epsilon must lie in [0,1]");
  if (!(c.train.learning_rate > 0.0)) fail("train.learning_rate must be > 0");
  if (c.train.l2 < 0.0) fail("train.l2 must be >= 0");
  if (c.train.epochs < 1 || c.train.eval_episodes < 1) fail("train.epochs and train.eval_episodes must be >= 1");
  if (c.held_in < 1 || c.held_out < 1) fail("toy.held_in and toy.held_out must be >= 1");
  if (c.jobs < 1) fail("jobs must be >= 1");
  c.endpoint.validate();
}

inline RunConfig config_from_json(const json& j) {
  using detail::read_if;
  RunConfig c;
  try {
    detail::reject_unknown_keys(j, {"ratio", "seed", "jobs", "perplexity_mode", "value", "endpoint", "prompt",
                                    "cache_dir", "toy", "train", "ablation"},
                                "");
    read_if(j, "ratio", c.ratio);
    read_if(j, "seed", c.seed);
    read_if(j, "jobs", c.jobs);
    if (j.contains("perplexity_mode")) {
      const auto m = parse_perplexity_mode(j.at("perplexity_mode").get<std::string>());
      if (!m) throw Error(ErrorClass::ConfigurationError, "perplexity_mode must be joint, thought or action");
      c.perplexity_mode = *m;
    }
    if (j.contains("value")) {
      const auto& v = j.at("value");
      detail::reject_unknown_keys(v, {"N", "gamma", "threshold", "gap_mode", "rollout_epsilon"}, "value");
      read_if(v, "N", c.value.rollouts);
      read_if(v, "gamma", c.value.gamma);
      read_if(v, "threshold", c.value.threshold);
      read_if(v, "rollout_epsilon", c.rollout_epsilon);
      if (v.contains("gap_mode")) {
        const auto m = parse_gap_mode(v.at("gap_mode").get<std::string>());
        if (!m) throw Error(ErrorClass::ConfigurationError, "value.gap_mode must be absolute or signed");
        c.value.gap_mode = *m;
      }
    }
    if (j.contains("endpoint")) {
      const auto& e = j.at("endpoint");
      detail::reject_unknown_keys(e, {"base_url", "model_name", "api_key_env_var", "max_retries", "timeout_ms",
                                      "temperature", "retry_backoff_ms", "max_in_flight"},
                                  "endpoint");
      read_if(e, "base_url", c.endpoint.base_url);
      read_if(e, "model_name", c.endpoint.model_name);
      read_if(e, "api_key_env_var", c.endpoint.api_key_env_var);
      read_if(e, "max_retries", c.endpoint.max_retries);
      read_if(e, "temperature", c.endpoint.temperature);
      read_if(e, "max_in_flight", c.endpoint.max_in_flight);
      if (e.contains("timeout_ms")) c.endpoint.timeout = std::chrono::milliseconds(e.at("timeout_ms").get<long long>());
      if (e.contains("retry_backoff_ms")) {
        c.endpoint.retry_backoff = std::chrono::milliseconds(e.at("retry_backoff_ms").get<long long>());
      }
    }
    if (j.contains("prompt")) {
      const auto& p = j.at("prompt");
      detail::reject_unknown_keys(p, {"observation_truncation"}, "prompt");
      read_if(p, "observation_truncation", c.prompt.observation_truncation);
    }
    read_if(j, "cache_dir", c.cache_dir);
    if (j.contains("toy")) {
      const auto& t = j.at("toy");
      detail::reject_unknown_keys(t, {"family_seed", "held_in", "held_out"}, "toy");
      read_if(t, "family_seed", c.family_seed);
      read_if(t, "held_in", c.held_in);
      read_if(t, "held_out", c.held_out);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      detail::reject_unknown_keys(t, {"learning_rate", "epochs", "l2", "seed", "eval_episodes"}, "train");
      read_if(t, "learning_rate", c.train.learning_rate);
      read_if(t, "epochs", c.train.epochs);
      read_if(t, "l2", c.train.l2);
      read_if(t, "seed", c.train.seed);
      read_if(t, "eval_episodes", c.train.eval_episodes);
    }
    if (j.contains("ablation")) {
      const auto& a = j.at("ablation");
      detail::reject_unknown_keys(a, {"strategies", "ratios", "seeds", "family_per_seed"}, "ablation");
      read_if(a, "strategies", c.ablation_strategies);
      read_if(a, "ratios", c.ablation_ratios);
      read_if(a, "seeds", c.ablation_seeds);
      read_if(a, "family_per_seed", c.family_per_seed);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorClass::ConfigurationError, std::string("config: ") + e.what());
  }
  validate_config(c);
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorClass::ConfigurationError, path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace critsel
