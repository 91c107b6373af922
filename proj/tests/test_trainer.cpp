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

#include <cmath>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "critsel/ablation.hpp"
#include "critsel/mask_emitter.hpp"
#include "critsel/toy_trainer.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace critsel::toy {
namespace {

using testing_support::class_of;

const auto kQuiet = [](std::string_view) {};

/// Expert samples on generated mazes with each turn trained with
/// probability `p`.
std::vector<MaskedSample> random_samples(Rng& rng, std::size_t n, double p) {
  const auto split = maze::make_split(rng.next(), n, 1);
  std::vector<MaskedSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto t = maze::expert_trajectory(split.held_in[i], "s" + std::to_string(i));
    CriticalSelection s = full_selection(t);
    s.indices.clear();
    for (std::size_t k = 0; k < t.length(); ++k) {
      if (rng.uniform() < p) s.indices.push_back(k);
    }
    out.push_back(make_masked_sample(t, s, {}, kQuiet));
  }
  return out;
}

std::vector<MaskedSample> with_flags(std::vector<MaskedSample> samples, bool complement) {
  for (auto& m : samples) {
    for (auto& t : m.turns) t.train = complement ? !t.train : true;
  }
  return samples;
}

LogLinearPolicy random_policy(Rng& rng, double scale) {
  LogLinearPolicy p;
  for (double& v : p.theta) v = scale * (2.0 * rng.uniform() - 1.0);
  return p;
}

TEST(Objective, UniformPolicySingleTurn) {
  Rng rng(1);
  auto samples = random_samples(rng, 1, 0.0);
  samples[0].turns[0].train = true;
  EXPECT_NEAR(masked_log_likelihood(LogLinearPolicy{}, samples, kQuiet), std::log(0.25), 1e-12);
}

TEST(Objective, EmptySelectionWarnsAndIsZero) {
  Rng rng(1);
  const auto samples = random_samples(rng, 2, 0.0);
  int warnings = 0;
  EXPECT_EQ(masked_log_likelihood(random_policy(rng, 1.0), samples, [&](std::string_view) { ++warnings; }), 0.0);
  EXPECT_EQ(warnings, 1);
}

TEST(Gradient, UniformPolicyIdentity) {
  Rng rng(2);
  auto samples = random_samples(rng, 1, 0.0);
  samples[0].turns[0].train = true;
  const auto turns = compile_samples(samples);
  const auto g = gradient(LogLinearPolicy{}, turns, 0.0);
  const auto& x = turns[0];
  for (std::size_t a = 0; a < kActions; ++a) {
    for (std::size_t k = 0; k < kBlock; ++k) {
      const double want = a == x.action ? 0.75 * x.features[k] : -0.25 * x.features[k];
      EXPECT_NEAR(g[a * kBlock + k], want, 1e-15);
    }
  }
}

TEST(Gradient, MatchesFiniteDifferences) {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto turns = compile_samples(random_samples(rng, 3, 0.5));
    const auto policy = random_policy(rng, 1.0);
    const double l2 = trial % 2 ? 1e-3 : 0.0;
    const auto g = gradient(policy, turns, l2);
    const auto num = oracle::numeric_gradient(
        [&](const std::vector<double>& th) { return training_objective(LogLinearPolicy{th}, turns, l2); },
        policy.theta, 1e-5);
    for (std::size_t i = 0; i < kDim; ++i) EXPECT_NEAR(g[i], num[i], 1e-6 * std::max(1.0, std::abs(num[i])));
  }
}

TEST(Objective, SelectionPlusComplementIsFull) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto sel = random_samples(rng, 4, 0.3);
    const auto policy = random_policy(rng, 2.0);
    const double a = masked_log_likelihood(policy, sel, kQuiet);
    const double b = masked_log_likelihood(policy, with_flags(sel, true), kQuiet);
    const double full = masked_log_likelihood(policy, with_flags(sel, false), kQuiet);
    EXPECT_NEAR(a + b, full, 1e-9);
  }
}

TEST(Objective, UntrainedTurnsCarryNoLoss) {
  Rng rng(5);
  auto samples = random_samples(rng, 1, 1.0);
  auto& last = samples[0].turns.back();
  last.train = false;
  const auto policy = random_policy(rng, 1.0);
  const double before = masked_log_likelihood(policy, samples, kQuiet);
  last.action = last.action == "up" ? "down" : "up";
  EXPECT_EQ(masked_log_likelihood(policy, samples, kQuiet), before);
}

TEST(Compile, VocabularyErrors) {
  Rng rng(6);
  auto samples = random_samples(rng, 1, 1.0);
  samples[0].turns[0].action = "teleport";
  EXPECT_EQ(class_of([&] { compile_samples(samples); }), ErrorClass::VocabularyError);
  samples = random_samples(rng, 1, 1.0);
  samples[0].instruction = "no observation here";
  EXPECT_EQ(class_of([&] { compile_samples(samples); }), ErrorClass::VocabularyError);
}

TEST(Train, DeterministicAndImproves) {
  Rng rng(7);
  const auto samples = random_samples(rng, 20, 1.0);
  const auto turns = compile_samples(samples);
  TrainConfig cfg;
  const auto a = train(turns, cfg);
  const auto b = train(turns, cfg);
  EXPECT_EQ(a.theta, b.theta);
  EXPECT_GT(training_objective(a, turns, cfg.l2), training_objective(LogLinearPolicy{}, turns, cfg.l2));
  EXPECT_EQ(policy_from_json(policy_to_json(a)).theta, a.theta);
}

TEST(Evaluate, TrainedBeatsUntrainedOnHeldIn) {
  const auto data = make_toy_data(2026, 40, 20);
  Dataset d;
  d.trajectories = data.experts;
  for (const auto& t : d.trajectories) d.selections[t.id] = full_selection(t);
  const auto policy = train(build_masked_samples(d, {}, nullptr, kQuiet), TrainConfig{});
  const auto trained = evaluate(policy, data.split.held_in, 50, 1);
  const auto untrained = evaluate(LogLinearPolicy{}, data.split.held_in, 50, 1);
  EXPECT_GT(trained.success_rate, untrained.success_rate);
  EXPECT_GT(trained.mean_return, untrained.mean_return);

  maze::MazeSpec near;
  near.width = 4;
  near.height = 4;
  near.start = {1, 1};
  near.goal = {1, 2};
  const std::vector<maze::MazeSpec> one{near};
  const auto r = evaluate(policy, one, 20, 3);
  EXPECT_EQ(r.success_rate, 1.0);
  EXPECT_LE(r.mean_return, 0.0);
  EXPECT_GT(r.mean_return, -14.0);
}

TEST(Evaluate, IndependentOfJobs) {
  const auto split = maze::make_split(8, 12, 1);
  Rng rng(9);
  const auto policy = random_policy(rng, 0.5);
  const auto a = evaluate(policy, split.held_in, 30, 4, 1);
  const auto b = evaluate(policy, split.held_in, 30, 4, 8);
  EXPECT_EQ(a.success_rate, b.success_rate);
  EXPECT_EQ(a.mean_return, b.mean_return);
}

TEST(Ablation, SelectionsPerStrategy) {
  const auto data = make_toy_data(3, 8, 2);
  ValueConfig vc;
  const auto value = value_selections(data, vc, 0.5, 0, 2);
  for (const auto& s : value) {
    if (!s.note) EXPECT_GE(s.indices.front(), 1u);
  }
  const auto nc = ablation_selections(data, "noncritical", 0.3, 0, value);
  for (std::size_t i = 0; i < nc.size(); ++i) {
    for (auto k : nc[i].indices) {
      EXPECT_FALSE(std::binary_search(value[i].indices.begin(), value[i].indices.end(), k));
    }
  }
  const auto full = ablation_selections(data, "full", 0.3, 0, value);
  for (std::size_t i = 0; i < full.size(); ++i) EXPECT_EQ(full[i].indices.size(), data.experts[i].length());
  EXPECT_EQ(class_of([&] { ablation_selections(data, "perplexity", 0.3, 0, value); }),
            ErrorClass::ConfigurationError);
}

TEST(Ablation, SmallRunIsReproducible) {
  AblationConfig cfg;
  cfg.seeds = {0, 1};
  cfg.held_in = 8;
  cfg.held_out = 4;
  cfg.train.eval_episodes = 10;
  cfg.jobs = 1;
  const auto a = run_ablation(cfg);
  cfg.jobs = 8;
  const auto b = run_ablation(cfg);
  EXPECT_EQ(a.to_csv(), b.to_csv());
  EXPECT_EQ(a.rows.size(), 8u);
  EXPECT_EQ(a.summary.size(), 4u);
  EXPECT_NE(a.to_text().find("65.91"), std::string::npos);
  EXPECT_EQ(a.to_csv().substr(0, a.to_csv().find('\n')),
            "strategy,ratio,seed,held_in_success,held_out_success,mean_return_in,mean_return_out");
}

}  // namespace
}  // namespace critsel::toy
