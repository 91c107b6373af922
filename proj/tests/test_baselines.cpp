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
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "critsel/selector_baselines.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace critsel {
namespace {

using testing_support::class_of;
using testing_support::TempDir;

Trajectory trajectory(std::size_t steps, std::string id = "t") {
  Rng rng(5);
  return oracle::random_trajectory(rng, steps, std::move(id));
}

/// One token per step whose perplexity is exactly exp(-log(p)).
StepLogprobs with_perplexities(const Trajectory& t, const std::vector<double>& ppl) {
  StepLogprobs lp;
  lp.trajectory_id = t.id;
  for (double p : ppl) lp.per_step.push_back({-std::log(p)});
  return lp;
}

TEST(Perplexity, Examples) {
  const std::vector<double> half{std::log(0.5), std::log(0.5)};
  EXPECT_NEAR(perplexity(half), 2.0, 1e-12);
  const std::vector<double> certain{0.0};
  EXPECT_EQ(perplexity(certain), 1.0);
  const std::vector<double> mixed{-1.0, -2.0, -3.0};
  EXPECT_NEAR(perplexity(mixed), std::exp(2.0), 1e-12);
  EXPECT_NEAR(perplexity(mixed), 7.389056, 1e-6);
}

TEST(Perplexity, Errors) {
  EXPECT_EQ(class_of([] { perplexity(std::vector<double>{}); }), ErrorClass::EmptyStep);
  EXPECT_EQ(class_of([] { perplexity(std::vector<double>{-0.1, 0.2}); }), ErrorClass::InvalidLogprob);
  EXPECT_EQ(class_of([] { perplexity(std::vector<double>{std::nan("")}); }), ErrorClass::InvalidLogprob);
}

TEST(Perplexity, MatchesProductFormAndIsAtLeastOne) {
  Rng rng(123);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> lp(1 + rng.below(40));
    for (double& x : lp) x = -5.0 * rng.uniform();
    const double p = perplexity(lp);
    ASSERT_GE(p, 1.0);
    ASSERT_NEAR(p, oracle::perplexity_direct(lp), 1e-9 * p);
  }
}

TEST(TopPerplexity, TieGoesToLowerIndex) {
  const auto t = trajectory(5);
  const auto s = select_top_perplexity(t, with_perplexities(t, {5.0, 1.2, 9.1, 9.1, 2.0}), 0.3);
  EXPECT_EQ(s.cap, 1u);
  EXPECT_EQ(s.indices, std::vector<std::size_t>{2});
  EXPECT_EQ(s.strategy, Strategy::Perplexity);
}

TEST(TopPerplexity, Examples) {
  const auto t = trajectory(10);
  const auto lp = with_perplexities(t, {3, 2, 1, 4, 5, 6, 7, 8, 9, 10});
  EXPECT_EQ(select_top_perplexity(t, lp, 0.3).indices, (std::vector<std::size_t>{7, 8, 9}));
  std::vector<std::size_t> all(10);
  std::iota(all.begin(), all.end(), std::size_t{0});
  EXPECT_EQ(select_top_perplexity(t, lp, 1.0).indices, all);
}

TEST(TopPerplexity, AgreesWithExhaustiveRanking) {
  Rng rng(77);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t len = 1 + rng.below(8);
    const auto t = trajectory(len);
    StepLogprobs lp;
    lp.trajectory_id = t.id;
    for (std::size_t i = 0; i < len; ++i) {
      std::vector<double> toks(1 + rng.below(6));
      for (double& x : toks) x = -3.0 * rng.uniform();
      lp.per_step.push_back(toks);
    }
    const double ratio = 0.05 + 0.95 * rng.uniform();
    const auto s = select_top_perplexity(t, lp, ratio);
    std::vector<double> ppl;
    for (const auto& toks : lp.per_step) ppl.push_back(oracle::perplexity_direct(toks));
    ASSERT_EQ(s.indices, oracle::best_subset(ppl, selection_cap(ratio, len)));
  }
}

TEST(TopPerplexity, AlignmentErrors) {
  const auto t = trajectory(3);
  auto lp = with_perplexities(t, {1, 2});
  EXPECT_EQ(class_of([&] { select_top_perplexity(t, lp, 0.3); }), ErrorClass::AlignmentError);
  lp = with_perplexities(t, {1, 2, 3});
  lp.trajectory_id = "other";
  EXPECT_EQ(class_of([&] { select_top_perplexity(t, lp, 0.3); }), ErrorClass::AlignmentError);
  lp.trajectory_id = t.id;
  EXPECT_EQ(class_of([&] { select_top_perplexity(t, lp, 0.3, PerplexityMode::ThoughtOnly); }),
            ErrorClass::AlignmentError);
}

TEST(TopPerplexity, SplitModes) {
  const auto t = trajectory(2);
  StepLogprobs lp;
  lp.trajectory_id = t.id;
  lp.per_step = {{-3.0, -3.0, -0.1}, {-0.1, -0.1, -2.0}};
  lp.thought_token_counts = {2, 2};
  EXPECT_EQ(select_top_perplexity(t, lp, 0.5, PerplexityMode::ThoughtOnly).indices, std::vector<std::size_t>{0});
  EXPECT_EQ(select_top_perplexity(t, lp, 0.5, PerplexityMode::ActionOnly).indices, std::vector<std::size_t>{1});
}

TEST(Random, DeterministicAndFullAtRatioOne) {
  const auto t = trajectory(20);
  EXPECT_EQ(select_random(t, 0.3, 7), select_random(t, 0.3, 7));
  EXPECT_EQ(select_random(t, 0.3, 7).indices.size(), 6u);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    EXPECT_EQ(select_random(t, 1.0, seed).indices.size(), 20u);
  }
}

TEST(Random, InclusionFrequencyIsUniform) {
  const auto t = trajectory(10);
  std::vector<int> counts(10, 0);
  const int draws = 10000;
  for (int s = 0; s < draws; ++s) {
    for (auto i : select_random(t, 0.3, static_cast<std::uint64_t>(s)).indices) ++counts[i];
  }
  for (int c : counts) EXPECT_NEAR(static_cast<double>(c) / draws, 0.3, 0.02);
}

TEST(Noncritical, Examples) {
  const auto t10 = trajectory(10);
  CriticalSelection crit;
  crit.trajectory_id = t10.id;
  crit.indices = {1, 4, 7};
  crit.ratio = 0.3;
  const auto s = select_noncritical(t10, crit, 3);
  EXPECT_EQ(s.indices.size(), 3u);
  for (auto i : s.indices) EXPECT_FALSE(i == 1 || i == 4 || i == 7);
  EXPECT_EQ(s.strategy, Strategy::Noncritical);

  const auto t4 = trajectory(4);
  crit.trajectory_id = t4.id;
  crit.indices = {0, 1, 2};
  EXPECT_EQ(select_noncritical(t4, crit, 3).indices, std::vector<std::size_t>{3});

  const auto t2 = trajectory(2);
  crit.trajectory_id = t2.id;
  crit.indices = {0, 1};
  EXPECT_EQ(class_of([&] { select_noncritical(t2, crit, 3); }), ErrorClass::NoComplement);
}

TEST(Noncritical, DisjointAndCountParityProperty) {
  Rng rng(31);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t len = 2 + rng.below(25);
    const auto t = trajectory(len);
    const auto crit = select_random(t, 0.05 + 0.9 * rng.uniform(), rng.next());
    if (crit.indices.size() == len) continue;
    const auto s = select_noncritical(t, crit, rng.next());
    const std::set<std::size_t> c(crit.indices.begin(), crit.indices.end());
    ASSERT_EQ(s.indices.size(), std::min(crit.indices.size(), len - crit.indices.size()));
    for (auto i : s.indices) ASSERT_FALSE(c.contains(i));
    ASSERT_TRUE(std::is_sorted(s.indices.begin(), s.indices.end()));
  }
}

TEST(Logprobs, FileRoundTrip) {
  TempDir dir;
  StepLogprobs lp;
  lp.trajectory_id = "a";
  lp.per_step = {{-0.5, -0.25}, {-1.0}};
  lp.thought_token_counts = {1, 0};
  critsel::io::write_file_atomic(dir / "lp.jsonl", logprobs_to_json(lp).dump() + "\n");
  const auto loaded = load_logprobs(dir / "lp.jsonl");
  ASSERT_EQ(loaded.size(), 1u);
  EXPECT_EQ(loaded.at("a").per_step, lp.per_step);
  EXPECT_EQ(loaded.at("a").thought_token_counts, lp.thought_token_counts);
}

}  // namespace
}  // namespace critsel
