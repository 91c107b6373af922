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

#include <concepts>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "critsel/random.hpp"
#include "critsel/trajectory.hpp"

namespace critsel {

struct StepOutcome {
  std::string observation;
  double reward = 0.0;
  bool done = false;
};

/// A resettable, copyable environment. Copies are independent, so a copy
/// taken mid-episode can be rolled forward without touching the original.
template <class E>
concept RolloutEnvironment = std::copy_constructible<E> && requires(E e, const E ce, std::string_view a) {
  { e.reset() } -> std::convertible_to<std::string>;
  { e.step(a) } -> std::same_as<StepOutcome>;
  { ce.done() } -> std::convertible_to<bool>;
  { ce.final_reward() } -> std::convertible_to<double>;
};

struct RolloutContext {
  std::string_view instruction;
  std::span<const Step> history;
  std::string_view observation;
};

/// Chooses the next action during a rollout. Must return a legal action
/// (or one the environment treats as a no-op).
class RolloutPolicy {
 public:
  virtual ~RolloutPolicy() = default;
  virtual std::string act(const RolloutContext& ctx, Rng& rng) const = 0;
};

/// Finite MDP with tabular transitions. A state with a terminal value is
/// absorbing and worth exactly that value.
struct TabularMdp {
  struct Outcome {
    std::size_t next = 0;
    double probability = 1.0;
    double reward = 0.0;
  };

  std::size_t num_actions = 0;
  std::vector<std::vector<std::vector<Outcome>>> transitions;  // [state][action]
  std::vector<std::optional<double>> terminal_value;

  std::size_t num_states() const noexcept { return transitions.size(); }
};

/// [state][action] action probabilities.
using TabularPolicy = std::vector<std::vector<double>>;

}  // namespace critsel
