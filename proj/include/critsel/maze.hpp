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
#include <charconv>
#include <compare>
#include <cstdint>
#include <cstdlib>
#include <deque>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "critsel/environment.hpp"
#include "critsel/error.hpp"
#include "critsel/random.hpp"
#include "critsel/trajectory.hpp"

namespace critsel::maze {

using nlohmann::json;

struct Cell {
  int row = 0;
  int col = 0;
  auto operator<=>(const Cell&) const = default;
};

enum class Direction { Up, Down, Left, Right };

/// Fixed order; also the tie-break order for shortest paths.
inline constexpr std::array<Direction, 4> kDirections{Direction::Up, Direction::Down, Direction::Left,
                                                      Direction::Right};

constexpr std::string_view to_string(Direction d) {
  switch (d) {
    case Direction::Up: return "up";
    case Direction::Down: return "down";
    case Direction::Left: return "left";
    case Direction::Right: return "right";
  }
  return "";
}

constexpr std::size_t to_index(Direction d) { return static_cast<std::size_t>(d); }

inline std::optional<Direction> parse_direction(std::string_view s) {
  for (auto d : kDirections) {
    if (to_string(d) == s) return d;
  }
  return std::nullopt;
}

constexpr Cell neighbor(Cell c, Direction d) {
  switch (d) {
    case Direction::Up: return {c.row - 1, c.col};
    case Direction::Down: return {c.row + 1, c.col};
    case Direction::Left: return {c.row, c.col - 1};
    case Direction::Right: return {c.row, c.col + 1};
  }
  return c;
}

using Wall = std::pair<Cell, Cell>;  // stored with first < second

inline Wall make_wall(Cell a, Cell b) { return a < b ? Wall{a, b} : Wall{b, a}; }

struct MazeSpec {
  int width = 1;
  int height = 1;
  std::set<Wall> walls;
  Cell start;
  Cell goal;
  int max_rounds = 15;
  std::uint64_t seed = 0;

  bool in_bounds(Cell c) const { return c.row >= 0 && c.row < height && c.col >= 0 && c.col < width; }
  std::size_t cell_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  std::size_t cell_id(Cell c) const { return static_cast<std::size_t>(c.row * width + c.col); }
  Cell cell_at(std::size_t id) const { return {static_cast<int>(id) / width, static_cast<int>(id) % width}; }

  bool blocked(Cell c, Direction d) const {
    const Cell n = neighbor(c, d);
    return !in_bounds(n) || walls.contains(make_wall(c, n));
  }

  bool operator==(const MazeSpec&) const = default;
};

/// BFS distance (in moves) from every cell to the goal; -1 if unreachable.
inline std::vector<int> distances_to_goal(const MazeSpec& spec) {
  std::vector<int> dist(spec.cell_count(), -1);
  std::deque<Cell> queue{spec.goal};
  dist[spec.cell_id(spec.goal)] = 0;
  while (!queue.empty()) {
    const Cell c = queue.front();
    queue.pop_front();
    for (auto d : kDirections) {
      if (spec.blocked(c, d)) continue;
      const Cell n = neighbor(c, d);
      if (dist[spec.cell_id(n)] >= 0) continue;
      dist[spec.cell_id(n)] = dist[spec.cell_id(c)] + 1;
      queue.push_back(n);
    }
  }
  return dist;
}

inline bool goal_reachable(const MazeSpec& spec) {
  return spec.in_bounds(spec.start) && spec.in_bounds(spec.goal) &&
         distances_to_goal(spec)[spec.cell_id(spec.start)] >= 0;
}

inline void validate_spec(const MazeSpec& spec) {
  auto fail = [](const std::string& m) { throw Error(ErrorClass::GenerationError, "invalid maze: " + m); };
  if (spec.width < 1 || spec.height < 1) fail("dimensions must be positive");
  if (!spec.in_bounds(spec.start) || !spec.in_bounds(spec.goal)) fail("start or goal out of bounds");
  if (spec.start == spec.goal) fail("start equals goal");
  if (spec.max_rounds < 1) fail("max_rounds must be >= 1");
  for (const auto& [a, b] : spec.walls) {
    const int manhattan = std::abs(a.row - b.row) + std::abs(a.col - b.col);
    if (!spec.in_bounds(a) || !spec.in_bounds(b) || manhattan != 1) fail("wall between non-adjacent cells");
  }
  if (!goal_reachable(spec)) fail("goal unreachable from start");
}

/// Direction the shortest-path expert takes from `c`: the first of
/// up, down, left, right that reduces the distance to the goal.
inline std::optional<Direction> shortest_path_action(const MazeSpec& spec, const std::vector<int>& dist, Cell c) {
  const int here = dist[spec.cell_id(c)];
  if (here <= 0) return std::nullopt;
  for (auto d : kDirections) {
    if (!spec.blocked(c, d) && dist[spec.cell_id(neighbor(c, d))] == here - 1) return d;
  }
  return std::nullopt;
}

inline std::string format_cell(Cell c) { return "(" + std::to_string(c.row) + "," + std::to_string(c.col) + ")"; }

/// Text observation: position, goal, and blocked directions at the current
/// cell.
inline std::string render_observation(const MazeSpec& spec, Cell pos) {
  std::string blocked;
  for (auto d : kDirections) {
    if (!spec.blocked(pos, d)) continue;
    if (!blocked.empty()) blocked += ", ";
    blocked += to_string(d);
  }
  std::string out = "You are at " + format_cell(pos) + ". The goal is at " + format_cell(spec.goal) +
                    ". Blocked directions: " + (blocked.empty() ? "none" : blocked) + ".";
  if (pos == spec.goal) out += " You reached the goal.";
  return out;
}

/// What an agent can read off an observation.
struct MazeView {
  Cell position;
  Cell goal;
  std::array<bool, 4> blocked{};
};

namespace detail {

inline bool parse_int(std::string_view& s, int& out) {
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  if (res.ec != std::errc()) return false;
  s.remove_prefix(static_cast<std::size_t>(res.ptr - s.data()));
  return true;
}

inline bool consume(std::string_view& s, std::string_view lit) {
  if (!s.starts_with(lit)) return false;
  s.remove_prefix(lit.size());
  return true;
}

inline bool parse_cell(std::string_view& s, Cell& c) {
  return consume(s, "(") && parse_int(s, c.row) && consume(s, ",") && parse_int(s, c.col) && consume(s, ")");
}

}  // namespace detail

/// Parses the first observation found in `text` (instructions embed one).
inline std::optional<MazeView> parse_observation(std::string_view text) {
  const std::size_t at = text.find("You are at ");
  if (at == std::string_view::npos) return std::nullopt;
  std::string_view s = text.substr(at + 11);
  MazeView v;
  if (!detail::parse_cell(s, v.position) || !detail::consume(s, ". The goal is at ") ||
      !detail::parse_cell(s, v.goal) || !detail::consume(s, ". Blocked directions: ")) {
    return std::nullopt;
  }
  const std::size_t end = s.find('.');
  if (end == std::string_view::npos) return std::nullopt;
  std::string_view list = s.substr(0, end);
  if (list == "none") return v;
  while (!list.empty()) {
    const std::size_t comma = list.find(", ");
    const auto d = parse_direction(list.substr(0, comma));
    if (!d) return std::nullopt;
    v.blocked[to_index(*d)] = true;
    if (comma == std::string_view::npos) break;
    list.remove_prefix(comma + 2);
  }
  return v;
}

/// Single-owner maze instance. Reward is -1 per move until the goal; the
/// move that reaches the goal earns 0. Moves into walls or the boundary
/// leave the agent in place and still cost a round.
class MazeEnv {
 public:
  explicit MazeEnv(MazeSpec spec) : spec_(std::make_shared<const MazeSpec>(std::move(spec))) {
    reset();
  }

  std::string reset() {
    position_ = spec_->start;
    rounds_ = 0;
    done_ = false;
    return observation();
  }

  StepOutcome step(std::string_view action) {
    if (done_) return {observation(), 0.0, true};
    ++rounds_;
    if (const auto d = parse_direction(action); d && !spec_->blocked(position_, *d)) {
      position_ = neighbor(position_, *d);
    }
    const bool reached = position_ == spec_->goal;
    done_ = reached || rounds_ >= spec_->max_rounds;
    return {observation(), reached ? 0.0 : -1.0, done_};
  }

  std::string observation() const { return render_observation(*spec_, position_); }
  bool done() const { return done_; }
  /// Reached-goal indicator in {0, 1}.
  double final_reward() const { return position_ == spec_->goal ? 1.0 : 0.0; }
  Cell position() const { return position_; }
  int rounds() const { return rounds_; }
  const MazeSpec& spec() const { return *spec_; }

  /// Round-capped view: states are (cell, rounds used); V is the
  /// probability of reaching the goal before the cap when gamma = 1.
  TabularMdp tabular_view() const;

 private:
  std::shared_ptr<const MazeSpec> spec_;
  Cell position_;
  int rounds_ = 0;
  bool done_ = false;
};

static_assert(RolloutEnvironment<MazeEnv>);

inline std::size_t round_capped_state(const MazeSpec& spec, Cell c, int rounds) {
  return static_cast<std::size_t>(rounds) * spec.cell_count() + spec.cell_id(c);
}

inline TabularMdp round_capped_mdp(const MazeSpec& spec) {
  TabularMdp mdp;
  mdp.num_actions = 4;
  const std::size_t layers = static_cast<std::size_t>(spec.max_rounds) + 1;
  const std::size_t n = layers * spec.cell_count();
  mdp.transitions.resize(n);
  mdp.terminal_value.resize(n);
  for (int r = 0; r <= spec.max_rounds; ++r) {
    for (std::size_t id = 0; id < spec.cell_count(); ++id) {
      const Cell c = spec.cell_at(id);
      const std::size_t s = round_capped_state(spec, c, r);
      if (c == spec.goal) {
        mdp.terminal_value[s] = 1.0;
        continue;
      }
      if (r == spec.max_rounds) {
        mdp.terminal_value[s] = 0.0;
        continue;
      }
      auto& actions = mdp.transitions[s];
      actions.resize(4);
      for (auto d : kDirections) {
        const Cell next = spec.blocked(c, d) ? c : neighbor(c, d);
        actions[to_index(d)] = {{round_capped_state(spec, next, r + 1), 1.0, 0.0}};
      }
    }
  }
  return mdp;
}

/// Uncapped view over cells: goal is terminal with value 1, moves earn 0.
/// Under gamma < 1 and the optimal policy, V(c) = gamma^distance(c).
inline TabularMdp cell_mdp(const MazeSpec& spec) {
  TabularMdp mdp;
  mdp.num_actions = 4;
  mdp.transitions.resize(spec.cell_count());
  mdp.terminal_value.resize(spec.cell_count());
  for (std::size_t id = 0; id < spec.cell_count(); ++id) {
    const Cell c = spec.cell_at(id);
    if (c == spec.goal) {
      mdp.terminal_value[id] = 1.0;
      continue;
    }
    mdp.transitions[id].resize(4);
    for (auto d : kDirections) {
      const Cell next = spec.blocked(c, d) ? c : neighbor(c, d);
      mdp.transitions[id][to_index(d)] = {{spec.cell_id(next), 1.0, 0.0}};
    }
  }
  return mdp;
}

inline TabularMdp MazeEnv::tabular_view() const { return round_capped_mdp(*spec_); }

/// Rollout policy: follows the shortest path with probability 1 - epsilon,
/// otherwise moves uniformly at random. Markov in the agent's cell.
class NoisyShortestPathPolicy final : public RolloutPolicy {
 public:
  NoisyShortestPathPolicy(MazeSpec spec, double epsilon)
      : spec_(std::move(spec)), epsilon_(epsilon), dist_(distances_to_goal(spec_)) {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
      throw Error(ErrorClass::ConfigurationError, "rollout epsilon must lie in [0,1]");
    }
  }

  std::array<double, 4> distribution(Cell c) const {
    std::array<double, 4> p{};
    p.fill(epsilon_ / 4.0);
    if (const auto best = shortest_path_action(spec_, dist_, c)) {
      p[to_index(*best)] += 1.0 - epsilon_;
    } else {
      p.fill(0.25);
    }
    return p;
  }

  std::string act(const RolloutContext& ctx, Rng& rng) const override {
    const auto view = parse_observation(ctx.observation);
    if (!view) throw Error(ErrorClass::ParseError, "rollout policy cannot read observation");
    const auto p = distribution(view->position);
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t a = 0; a < 4; ++a) {
      acc += p[a];
      if (u < acc) return std::string(to_string(kDirections[a]));
    }
    return std::string(to_string(kDirections[3]));
  }

  /// The same policy over round_capped_mdp states.
  TabularPolicy tabular(const TabularMdp& mdp) const {
    TabularPolicy pi(mdp.num_states(), std::vector<double>(4, 0.25));
    for (std::size_t s = 0; s < mdp.num_states(); ++s) {
      const auto p = distribution(spec_.cell_at(s % spec_.cell_count()));
      pi[s].assign(p.begin(), p.end());
    }
    return pi;
  }

  double epsilon() const { return epsilon_; }

 private:
  MazeSpec spec_;
  double epsilon_;
  std::vector<int> dist_;
};

inline std::string instruction_text(const MazeSpec& spec) {
  return "You are in a " + std::to_string(spec.height) + "x" + std::to_string(spec.width) +
         " maze. Reach the goal within " + std::to_string(spec.max_rounds) +
         " moves using the actions up, down, left and right. " + render_observation(spec, spec.start);
}

/// Shortest-path demonstration in ReAct form with final reward 1.
inline Trajectory expert_trajectory(const MazeSpec& spec, std::string id) {
  const auto dist = distances_to_goal(spec);
  if (!spec.in_bounds(spec.start) || dist[spec.cell_id(spec.start)] < 0) {
    throw Error(ErrorClass::GenerationError, "goal unreachable for '" + id + "'");
  }
  Trajectory t;
  t.id = std::move(id);
  t.environment = "maze";
  t.instruction = instruction_text(spec);
  t.final_reward = 1.0;

  MazeEnv env(spec);
  Cell pos = spec.start;
  while (pos != spec.goal) {
    const Direction d = *shortest_path_action(spec, dist, pos);
    Step s;
    s.index = t.steps.size();
    s.thought = "I am at " + format_cell(pos) + "; the goal is at " + format_cell(spec.goal) + "; I will move " +
                std::string(to_string(d));
    s.action = std::string(to_string(d));
    s.observation = env.step(s.action).observation;
    pos = env.position();
    t.steps.push_back(std::move(s));
  }
  return t;
}

/// Steps of a demonstration taken from a cell with at least two open exits
/// other than the one just arrived through. Diagnostic only.
inline std::vector<std::size_t> pivotal_steps(const MazeSpec& spec, const Trajectory& t) {
  std::vector<std::size_t> out;
  Cell pos = spec.start;
  std::optional<Cell> previous;
  for (const Step& s : t.steps) {
    int exits = 0;
    for (auto d : kDirections) {
      if (!spec.blocked(pos, d) && (!previous || neighbor(pos, d) != *previous)) ++exits;
    }
    if (exits >= 2) out.push_back(s.index);
    const auto d = parse_direction(s.action);
    if (!d) break;
    previous = pos;
    if (!spec.blocked(pos, *d)) pos = neighbor(pos, *d);
  }
  return out;
}

/// Generator parameters for one split.
struct FamilyParams {
  int width = 5;
  int height = 5;
  double wall_density = 0.25;
  int min_distance = 3;
  int max_rounds = 15;
};

inline FamilyParams held_in_params() { return {5, 5, 0.25, 3, 15}; }
inline FamilyParams held_out_params() { return {6, 6, 0.35, 4, 15}; }

/// Random solvable maze: each interior edge is walled with probability
/// wall_density; start and goal are distinct cells whose shortest path is
/// between min_distance and max_rounds moves.
inline MazeSpec random_maze(const FamilyParams& p, Rng& rng) {
  for (;;) {
    MazeSpec spec;
    spec.width = p.width;
    spec.height = p.height;
    spec.max_rounds = p.max_rounds;
    spec.seed = rng.next();
    for (int r = 0; r < p.height; ++r) {
      for (int c = 0; c < p.width; ++c) {
        if (c + 1 < p.width && rng.uniform() < p.wall_density) spec.walls.insert(make_wall({r, c}, {r, c + 1}));
        if (r + 1 < p.height && rng.uniform() < p.wall_density) spec.walls.insert(make_wall({r, c}, {r + 1, c}));
      }
    }
    const auto n = spec.cell_count();
    spec.goal = spec.cell_at(static_cast<std::size_t>(rng.below(n)));
    spec.start = spec.cell_at(static_cast<std::size_t>(rng.below(n)));
    if (spec.start == spec.goal) continue;
    const int d = distances_to_goal(spec)[spec.cell_id(spec.start)];
    if (d < p.min_distance || d > p.max_rounds) continue;
    return spec;
  }
}

struct Split {
  std::vector<MazeSpec> held_in;
  std::vector<MazeSpec> held_out;
};

/// Deterministic held-in / held-out task families. Held-out mazes are larger
/// and denser, and no (walls, start, goal) triple appears in both.
inline Split make_split(std::uint64_t family_seed, std::size_t n_held_in, std::size_t n_held_out,
                        const FamilyParams& in_params = held_in_params(),
                        const FamilyParams& out_params = held_out_params()) {
  if (n_held_in < 1 || n_held_out < 1) {
    throw Error(ErrorClass::ConfigurationError, "split sizes must be >= 1");
  }
  using Key = std::tuple<int, int, std::set<Wall>, Cell, Cell>;
  std::set<Key> seen;
  auto fill = [&](std::vector<MazeSpec>& out, std::size_t n, const FamilyParams& p, std::string_view tag) {
    Rng rng(mix_seed(family_seed, tag));
    while (out.size() < n) {
      MazeSpec spec = random_maze(p, rng);
      if (!seen.insert(Key{spec.width, spec.height, spec.walls, spec.start, spec.goal}).second) continue;
      out.push_back(std::move(spec));
    }
  };
  Split split;
  fill(split.held_in, n_held_in, in_params, "held-in");
  fill(split.held_out, n_held_out, out_params, "held-out");
  return split;
}

// MazeSpec file format

inline json cell_to_json(Cell c) { return json::array({c.row, c.col}); }
inline Cell cell_from_json(const json& j) { return {j.at(0).get<int>(), j.at(1).get<int>()}; }

inline json spec_to_json(const MazeSpec& spec) {
  json walls = json::array();
  for (const auto& [a, b] : spec.walls) walls.push_back(json::array({cell_to_json(a), cell_to_json(b)}));
  return {{"width", spec.width},
          {"height", spec.height},
          {"walls", std::move(walls)},
          {"start", cell_to_json(spec.start)},
          {"goal", cell_to_json(spec.goal)},
          {"max_rounds", spec.max_rounds},
          {"seed", spec.seed}};
}

inline MazeSpec spec_from_json(const json& j) {
  MazeSpec spec;
  spec.width = j.at("width").get<int>();
  spec.height = j.at("height").get<int>();
  for (const auto& w : j.at("walls")) spec.walls.insert(make_wall(cell_from_json(w.at(0)), cell_from_json(w.at(1))));
  spec.start = cell_from_json(j.at("start"));
  spec.goal = cell_from_json(j.at("goal"));
  spec.max_rounds = j.value("max_rounds", 15);
  spec.seed = j.value("seed", std::uint64_t{0});
  validate_spec(spec);
  return spec;
}

}  // namespace critsel::maze
