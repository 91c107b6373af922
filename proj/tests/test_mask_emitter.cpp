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

#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "critsel/mask_emitter.hpp"
#include "critsel/selector_baselines.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace critsel {
namespace {

using testing_support::class_of;
using testing_support::message_of;
using testing_support::TempDir;

Dataset dataset(std::size_t n, std::size_t steps) {
  Rng rng(12);
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    d.trajectories.push_back(oracle::random_trajectory(rng, steps, "t" + std::to_string(i)));
  }
  return d;
}

const auto kQuiet = [](std::string_view) {};

TEST(Emit, RealizedRatioOfThirtyPercent) {
  Dataset d = dataset(10, 10);
  for (const auto& t : d.trajectories) d.selections[t.id] = select_random(t, 0.3, 1);
  EmissionReport report;
  const auto samples = build_masked_samples(d, {}, &report, kQuiet);
  EXPECT_EQ(samples.size(), 10u);
  EXPECT_EQ(report.total_steps, 100u);
  EXPECT_EQ(report.trained_steps, 30u);
  EXPECT_NEAR(report.realized_ratio(), 0.30, 1e-12);
  EXPECT_EQ(report.degenerate_samples, 0u);
}

TEST(Emit, FullSelectionTrainsEveryTurn) {
  Dataset d = dataset(1, 6);
  const auto& t = d.trajectories[0];
  d.selections[t.id] = select_random(t, 1.0, 0);
  const auto m = build_masked_samples(d, {}, nullptr, kQuiet).at(0);
  for (const auto& turn : m.turns) EXPECT_TRUE(turn.train);
  EXPECT_EQ(m.turns.size(), t.length());
}

TEST(Emit, KeepsWholeTrajectoryAsContext) {
  Dataset d = dataset(1, 5);
  const auto& t = d.trajectories[0];
  CriticalSelection s;
  s.trajectory_id = t.id;
  s.indices = {1, 3};
  s.categories = {{1, StepCategory::CriticalAction}};
  d.selections[t.id] = s;
  EmissionReport report;
  const auto m = build_masked_samples(d, {}, &report, kQuiet).at(0);
  ASSERT_EQ(m.turns.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(m.turns[i].thought, t.steps[i].thought);
    EXPECT_EQ(m.turns[i].action, t.steps[i].action);
    EXPECT_EQ(m.turns[i].observation, t.steps[i].observation);
    EXPECT_EQ(m.turns[i].train, i == 1 || i == 3);
  }
  EXPECT_EQ(m.instruction, t.instruction);
  EXPECT_NE(m.system_context.find("Thought:"), std::string::npos);
  EXPECT_EQ(report.category_counts.at("CriticalAction"), 1u);
}

TEST(Emit, MissingSelectionNamesTrajectory) {
  Dataset d = dataset(3, 4);
  d.selections["t0"] = select_random(d.trajectories[0], 0.3, 1);
  d.selections["t2"] = select_random(d.trajectories[2], 0.3, 1);
  EXPECT_EQ(class_of([&] { build_masked_samples(d, {}, nullptr, kQuiet); }), ErrorClass::MissingSelection);
  EXPECT_NE(message_of([&] { build_masked_samples(d, {}, nullptr, kQuiet); }).find("'t1'"), std::string::npos);
}

TEST(Emit, EmptySelectionIsDegenerateWithWarning) {
  Dataset d = dataset(1, 3);
  CriticalSelection s;
  s.trajectory_id = "t0";
  d.selections["t0"] = s;
  int warnings = 0;
  EmissionReport report;
  const auto m = build_masked_samples(d, {}, &report, [&](std::string_view) { ++warnings; }).at(0);
  EXPECT_EQ(warnings, 1);
  EXPECT_EQ(report.degenerate_samples, 1u);
  EXPECT_TRUE(m.metadata.at("degenerate").get<bool>());
}

TEST(Emit, FileRoundTripAndMetadata) {
  TempDir dir;
  Dataset d = dataset(4, 7);
  for (const auto& t : d.trajectories) d.selections[t.id] = select_random(t, 0.3, 5);
  EmitOptions opts;
  opts.selector_model = "gpt-4o";
  emit_masked_dataset(d, dir / "m.jsonl", opts, kQuiet);
  const auto loaded = load_masked_dataset(dir / "m.jsonl");
  EXPECT_EQ(loaded, build_masked_samples(d, opts, nullptr, kQuiet));
  const auto& md = loaded[0].metadata;
  EXPECT_EQ(md.at("strategy"), "random");
  EXPECT_EQ(md.at("seed"), 5);
  EXPECT_EQ(md.at("selector_model"), "gpt-4o");
  EXPECT_EQ(md.at("cap"), 2);
  EXPECT_TRUE(md.contains("informational_training_defaults"));
}

TEST(Emit, TrainFlagsMatchSelectionProperty) {
  Rng rng(44);
  for (int trial = 0; trial < 300; ++trial) {
    Dataset d;
    d.trajectories.push_back(oracle::random_trajectory(rng, 1 + rng.below(20), "x"));
    const auto& t = d.trajectories[0];
    d.selections["x"] = select_random(t, 0.05 + 0.95 * rng.uniform(), rng.next());
    const auto m = build_masked_samples(d, {}, nullptr, kQuiet).at(0);
    std::vector<std::size_t> trained;
    for (std::size_t i = 0; i < m.turns.size(); ++i) {
      if (m.turns[i].train) trained.push_back(i);
    }
    ASSERT_EQ(trained, d.selections["x"].indices);
  }
}

TEST(Stats, CountsAndRatios) {
  Dataset d = dataset(2, 10);
  std::vector<CriticalSelection> sel;
  for (const auto& t : d.trajectories) sel.push_back(select_random(t, 0.3, 2));
  sel[0].categories[sel[0].indices[0]] = StepCategory::PlanCreation;
  sel[1].note = "fallback: nothing flagged";
  const auto st = dataset_stats(sel, &d);
  EXPECT_EQ(st.selections, 2u);
  EXPECT_EQ(st.selected_steps, 6u);
  EXPECT_NEAR(st.realized_ratio(), 0.3, 1e-12);
  EXPECT_EQ(st.category_histogram.at("PlanCreation"), 1u);
  EXPECT_EQ(st.strategy_counts.at("random"), 2u);
  EXPECT_EQ(st.truncated_or_fallback, 1u);
  EXPECT_EQ(dataset_stats(sel).total_steps, 0u);
  EXPECT_NE(st.to_text().find("realized ratio: 0.3"), std::string::npos);
}

}  // namespace
}  // namespace critsel
