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
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "critsel/ablation.hpp"
#include "critsel/config.hpp"
#include "critsel/error.hpp"
#include "critsel/http_transport.hpp"
#include "critsel/ingest.hpp"
#include "critsel/io.hpp"
#include "critsel/mask_emitter.hpp"
#include "critsel/maze.hpp"
#include "critsel/parallel.hpp"
#include "critsel/selector_baselines.hpp"
#include "critsel/selector_llm.hpp"
#include "critsel/toy_trainer.hpp"
#include "critsel/value_selector.hpp"

namespace critsel::cli {

namespace fs = std::filesystem;

struct Streams {
  std::ostream* out = &std::cout;
  std::ostream* err = &std::cerr;
  std::function<std::unique_ptr<ChatTransport>()> transport = [] { return std::make_unique<HttpTransport>(); };
};

namespace detail {

/// Raw flag values. Optionals stay empty unless given on the command line.
struct Flags {
  std::string config_path;
  std::optional<std::size_t> jobs;

  std::string in, out, selections, dataset, logprobs, profiles, critical, mazes, masked, policy, toy_dir;
  std::string strategy, env;
  std::optional<double> ratio, gamma, threshold, epsilon, lr, l2;
  std::optional<std::uint64_t> seed, family_seed;
  std::optional<std::size_t> n, held_in, held_out, epochs, episodes, truncation;
  std::optional<std::string> endpoint, model, cache_dir, gap_mode, perplexity_mode, selector_model;
};

inline RunConfig resolve(const Flags& f) {
  RunConfig c = f.config_path.empty() ? RunConfig{} : load_config(f.config_path);
  if (f.jobs) c.jobs = *f.jobs;
  if (f.ratio) c.ratio = *f.ratio;
  if (f.seed) c.seed = *f.seed;
  if (f.n) c.value.rollouts = *f.n;
  if (f.gamma) c.value.gamma = *f.gamma;
  if (f.threshold) c.value.threshold = *f.threshold;
  if (f.epsilon) c.rollout_epsilon = *f.epsilon;
  if (f.gap_mode) {
    const auto m = parse_gap_mode(*f.gap_mode);
    if (!m) throw Error(ErrorClass::UsageError, "--gap-mode must be absolute or signed");
    c.value.gap_mode = *m;
  }
  if (f.perplexity_mode) {
    const auto m = parse_perplexity_mode(*f.perplexity_mode);
    if (!m) throw Error(ErrorClass::UsageError, "--perplexity-mode must be joint, thought or action");
    c.perplexity_mode = *m;
  }
  if (f.endpoint) c.endpoint.base_url = *f.endpoint;
  if (f.model) c.endpoint.model_name = *f.model;
  if (f.cache_dir) c.cache_dir = *f.cache_dir;
  if (f.truncation) c.prompt.observation_truncation = *f.truncation;
  if (f.family_seed) c.family_seed = *f.family_seed;
  if (f.held_in) c.held_in = *f.held_in;
  if (f.held_out) c.held_out = *f.held_out;
  if (f.lr) c.train.learning_rate = *f.lr;
  if (f.l2) c.train.l2 = *f.l2;
  if (f.epochs) c.train.epochs = *f.epochs;
  if (f.episodes) c.train.eval_episodes = *f.episodes;
  if (f.seed) c.train.seed = *f.seed;
  c.prompt.ratio = c.ratio;
  validate_config(c);
  return c;
}

inline void require(const std::string& value, std::string_view flag, std::string_view context) {
  if (value.empty()) {
    throw Error(ErrorClass::UsageError, std::string(context) + " requires " + std::string(flag));
  }
}

inline std::string snapshot(const RunConfig& c, std::string_view command) {
  json j = config_to_json(c);
  j["command"] = std::string(command);
  return j.dump(2) + "\n";
}

inline void write_snapshot_beside(const fs::path& out_file, const RunConfig& c, std::string_view command) {
  io::write_file_atomic(fs::path(out_file.string() + ".config.json"), snapshot(c, command));
}

inline void write_snapshot_in(const fs::path& dir, const RunConfig& c, std::string_view command) {
  io::write_file_atomic(dir / "resolved-config.json", snapshot(c, command));
}

inline maze::MazeSpec load_maze(const fs::path& dir, const std::string& id) {
  const fs::path p = dir / (id + ".json");
  try {
    return maze::spec_from_json(json::parse(io::read_file(p)));
  } catch (const json::exception& e) {
    throw Error(ErrorClass::ParseError, p.string() + ": " + e.what());
  }
}

inline std::vector<std::string> ids_of(const Dataset& d) {
  std::vector<std::string> ids;
  for (const auto& t : d.trajectories) ids.push_back(t.id);
  return ids;
}

// Subcommands

inline void cmd_ingest(const Flags& f, const RunConfig& c, Streams&) {
  const Dataset d = load_dataset(f.in);
  io::write_file_atomic(f.out, dataset_to_jsonl(d));
  write_snapshot_beside(f.out, c, "ingest");
}

inline void cmd_select(const Flags& f, const RunConfig& c, Streams& s) {
  const auto strategy = parse_strategy(f.strategy);
  if (!strategy) {
    throw Error(ErrorClass::UsageError,
                "unknown strategy '" + f.strategy + "'; expected llm, perplexity, random, value or noncritical");
  }
  const std::string ctx = "--strategy " + f.strategy;
  switch (*strategy) {
    case Strategy::Perplexity: require(f.logprobs, "--logprobs", ctx); break;
    case Strategy::Value: require(f.profiles, "--profiles", ctx); break;
    case Strategy::Noncritical: require(f.critical, "--critical", ctx); break;
    case Strategy::Llm: require(c.endpoint.base_url, "--endpoint", ctx); break;
    case Strategy::Random: break;
  }

  const Dataset d = load_dataset(f.in);
  const auto& ts = d.trajectories;
  std::vector<CriticalSelection> out(ts.size());
  switch (*strategy) {
    case Strategy::Random:
      parallel_for(ts.size(), c.jobs, [&](std::size_t i) { out[i] = select_random(ts[i], c.ratio, c.seed); });
      break;
    case Strategy::Perplexity: {
      const auto lps = load_logprobs(f.logprobs);
      parallel_for(ts.size(), c.jobs, [&](std::size_t i) {
        auto it = lps.find(ts[i].id);
        if (it == lps.end()) throw Error(ErrorClass::AlignmentError, "no logprobs for trajectory '" + ts[i].id + "'");
        out[i] = select_top_perplexity(ts[i], it->second, c.ratio, c.perplexity_mode);
      });
      break;
    }
    case Strategy::Value: {
      std::map<std::string, ValueProfile> profiles;
      for (auto& p : load_profiles(f.profiles)) profiles.emplace(p.trajectory_id, std::move(p));
      for (std::size_t i = 0; i < ts.size(); ++i) {
        auto it = profiles.find(ts[i].id);
        if (it == profiles.end()) {
          throw Error(ErrorClass::MissingSelection, "no value profile for trajectory '" + ts[i].id + "'");
        }
        out[i] = build_value_selection(ts[i], it->second);
      }
      break;
    }
    case Strategy::Noncritical: {
      std::map<std::string, CriticalSelection> critical;
      for (auto& sel : load_selections(f.critical)) critical.emplace(sel.trajectory_id, std::move(sel));
      parallel_for(ts.size(), c.jobs, [&](std::size_t i) {
        auto it = critical.find(ts[i].id);
        if (it == critical.end()) {
          throw Error(ErrorClass::MissingSelection, "no critical selection for trajectory '" + ts[i].id + "'");
        }
        out[i] = select_noncritical(ts[i], it->second, c.seed);
      });
      break;
    }
    case Strategy::Llm: {
      ResponseCache cache(c.cache_dir);
      auto transport = s.transport();
      out = select_all_with_llm(ts, c.prompt, c.endpoint, &cache, *transport);
      break;
    }
  }
  write_selections(out, f.out);
  write_snapshot_beside(f.out, c, "select");
}

inline void cmd_value_profile(const Flags& f, const RunConfig& c, Streams&) {
  if (f.env != "maze") {
    throw Error(ErrorClass::UnsupportedEnvironment,
                "environment '" + f.env + "' has no simulator; value profiling supports 'maze'");
  }
  const fs::path mazes = f.mazes.empty() ? fs::path(f.in).parent_path() / "mazes" : fs::path(f.mazes);
  const Dataset d = load_dataset(f.in);
  std::vector<ValueProfile> profiles(d.trajectories.size());
  parallel_for(d.trajectories.size(), c.jobs, [&](std::size_t i) {
    const auto& t = d.trajectories[i];
    const auto spec = load_maze(mazes, t.id);
    const maze::MazeEnv env(spec);
    const maze::NoisyShortestPathPolicy policy(spec, c.rollout_epsilon);
    profiles[i] = compute_value_profile(env, t, policy, c.value, c.seed);
  });
  write_profiles(profiles, f.out);
  write_snapshot_beside(f.out, c, "value-profile");
}

inline void cmd_emit(const Flags& f, const RunConfig& c, Streams& s) {
  Dataset d = load_dataset(f.in);
  attach_selections(d, load_selections(f.selections));
  EmitOptions opts;
  if (f.selector_model) opts.selector_model = *f.selector_model;
  const auto report = emit_masked_dataset(d, f.out, opts, [&](std::string_view m) { *s.err << "warning: " << m << '\n'; });
  write_snapshot_beside(f.out, c, "emit");
  *s.out << report.to_json().dump() << '\n';
}

inline void cmd_gen_toy(const Flags& f, const RunConfig& c, Streams& s) {
  const fs::path dir = f.out;
  const auto data = toy::make_toy_data(c.family_seed, c.held_in, c.held_out);
  json split = {{"held_in", json::array()}, {"held_out", json::array()}};
  Dataset in_set, out_set;
  std::string pivotal;
  for (std::size_t i = 0; i < data.split.held_in.size(); ++i) {
    const auto id = toy::held_in_id(i);
    io::write_file_atomic(dir / "mazes" / (id + ".json"), maze::spec_to_json(data.split.held_in[i]).dump(2) + "\n");
    split["held_in"].push_back(id);
    in_set.trajectories.push_back(data.experts[i]);
    pivotal += json{{"trajectory_id", id}, {"pivotal", maze::pivotal_steps(data.split.held_in[i], data.experts[i])}}
                   .dump() +
               "\n";
  }
  for (std::size_t i = 0; i < data.split.held_out.size(); ++i) {
    const auto id = toy::held_out_id(i);
    io::write_file_atomic(dir / "mazes" / (id + ".json"), maze::spec_to_json(data.split.held_out[i]).dump(2) + "\n");
    split["held_out"].push_back(id);
    out_set.trajectories.push_back(maze::expert_trajectory(data.split.held_out[i], id));
  }
  io::write_file_atomic(dir / "split.json", split.dump(2) + "\n");
  io::write_file_atomic(dir / "held_in.jsonl", dataset_to_jsonl(in_set));
  io::write_file_atomic(dir / "held_out.jsonl", dataset_to_jsonl(out_set));
  io::write_file_atomic(dir / "pivotal.jsonl", pivotal);
  write_snapshot_in(dir, c, "gen-toy");
  *s.out << "wrote " << c.held_in << " held-in and " << c.held_out << " held-out mazes to " << dir.string() << '\n';
}

inline void cmd_train_toy(const Flags& f, const RunConfig& c, Streams& s) {
  require(f.masked, "--masked", "train-toy");
  const auto samples = load_masked_dataset(f.masked);
  const auto turns = toy::compile_samples(samples);
  const auto policy = toy::train(turns, c.train);
  const fs::path dir = f.out;
  io::write_file_atomic(dir / "policy.json", toy::policy_to_json(policy).dump(2) + "\n");
  const json summary = {{"samples", samples.size()},
                        {"turns", turns.size()},
                        {"trained_turns", toy::trained_count(turns)},
                        {"objective", toy::training_objective(policy, turns, c.train.l2)}};
  io::write_file_atomic(dir / "training.json", summary.dump(2) + "\n");
  write_snapshot_in(dir, c, "train-toy");
  *s.out << summary.dump() << '\n';
}

inline void cmd_eval_toy(const Flags& f, const RunConfig& c, Streams& s) {
  require(f.policy, "--policy", "eval-toy");
  require(f.toy_dir, "--toy-dir", "eval-toy");
  toy::LogLinearPolicy policy;
  json split;
  try {
    policy = toy::policy_from_json(json::parse(io::read_file(f.policy)));
    split = json::parse(io::read_file(fs::path(f.toy_dir) / "split.json"));
  } catch (const json::exception& e) {
    throw Error(ErrorClass::ParseError, e.what());
  }
  auto load_all = [&](const json& ids) {
    std::vector<maze::MazeSpec> specs;
    for (const auto& id : ids) specs.push_back(load_maze(fs::path(f.toy_dir) / "mazes", id.get<std::string>()));
    return specs;
  };
  const auto in = toy::evaluate(policy, load_all(split.at("held_in")), c.train.eval_episodes, c.seed, c.jobs);
  const auto out = toy::evaluate(policy, load_all(split.at("held_out")), c.train.eval_episodes, c.seed, c.jobs);
  const json result = {{"held_in_success", in.success_rate},
                       {"held_out_success", out.success_rate},
                       {"mean_return_in", in.mean_return},
                       {"mean_return_out", out.mean_return},
                       {"episodes", c.train.eval_episodes}};
  const fs::path dir = f.out;
  io::write_file_atomic(dir / "eval.json", result.dump(2) + "\n");
  write_snapshot_in(dir, c, "eval-toy");
  *s.out << result.dump() << '\n';
}

inline void cmd_ablate(const Flags& f, const RunConfig& c, Streams& s) {
  const auto result = toy::run_ablation(c.ablation());
  const fs::path dir = f.out;
  io::write_file_atomic(dir / "results.csv", result.to_csv());
  io::write_file_atomic(dir / "results.json", result.to_json().dump(2) + "\n");
  io::write_file_atomic(dir / "summary.txt", result.to_text());
  write_snapshot_in(dir, c, "ablate");
  *s.out << result.to_text();
}

inline void cmd_report(const Flags& f, const RunConfig& c, Streams& s) {
  const auto selections = load_selections(f.selections);
  std::optional<Dataset> d;
  if (!f.dataset.empty()) d = load_dataset(f.dataset);
  const auto stats = dataset_stats(selections, d ? &*d : nullptr);
  io::write_file_atomic(f.out, stats.to_json().dump(2) + "\n");
  write_snapshot_beside(f.out, c, "report");
  *s.out << stats.to_text();
}

inline std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

}  // namespace detail

/// Entry point behind the `critsel` binary. Returns the process exit code:
/// 0 on success, 2 for usage errors, 1 for every other failure. Failures
/// print exactly one `error: <class>: <message>` line.
inline int run(const std::vector<std::string>& args, Streams streams = {}) {
  using detail::Flags;
  Flags f;
  CLI::App app{"Critical-step selection and loss-masked dataset tooling", "critsel"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--config", f.config_path, "JSON run config; flags override it")->check(CLI::ExistingFile);
  app.add_option("--jobs", f.jobs, "worker threads for trajectory-parallel stages")->check(CLI::PositiveNumber);

  using Handler = void (*)(const Flags&, const RunConfig&, Streams&);
  std::map<CLI::App*, std::pair<std::string, Handler>> handlers;
  auto sub = [&](const std::string& name, const std::string& help, Handler h) {
    auto* s = app.add_subcommand(name, help);
    handlers[s] = {name, h};
    return s;
  };

  auto* ingest = sub("ingest", "validate and normalize a chat-format trajectory file", detail::cmd_ingest);
  ingest->add_option("--in", f.in)->required();
  ingest->add_option("--out", f.out)->required();

  auto* select = sub("select", "select critical steps", detail::cmd_select);
  select->add_option("--strategy", f.strategy, "llm, perplexity, random, value or noncritical")->required();
  select->add_option("--ratio", f.ratio);
  select->add_option("--seed", f.seed);
  select->add_option("--logprobs", f.logprobs, "per-token logprob sidecar (perplexity)");
  select->add_option("--perplexity-mode", f.perplexity_mode, "joint, thought or action");
  select->add_option("--profiles", f.profiles, "value profiles from value-profile (value)");
  select->add_option("--critical", f.critical, "critical selections to complement (noncritical)");
  select->add_option("--endpoint", f.endpoint, "chat completions base URL (llm)");
  select->add_option("--model", f.model);
  select->add_option("--cache-dir", f.cache_dir);
  select->add_option("--observation-truncation", f.truncation);
  select->add_option("--in", f.in)->required();
  select->add_option("--out", f.out)->required();

  auto* profile = sub("value-profile", "Monte Carlo step values and gap flags", detail::cmd_value_profile);
  profile->add_option("--env", f.env)->required();
  profile->add_option("--N", f.n);
  profile->add_option("--gamma", f.gamma);
  profile->add_option("--threshold", f.threshold);
  profile->add_option("--gap-mode", f.gap_mode, "absolute or signed");
  profile->add_option("--epsilon", f.epsilon, "rollout policy noise");
  profile->add_option("--seed", f.seed);
  profile->add_option("--mazes", f.mazes, "directory of maze specs (default: <in dir>/mazes)");
  profile->add_option("--in", f.in)->required();
  profile->add_option("--out", f.out)->required();

  auto* emit = sub("emit", "write the loss-masked training dataset", detail::cmd_emit);
  emit->add_option("--in", f.in)->required();
  emit->add_option("--selections", f.selections)->required();
  emit->add_option("--selector-model", f.selector_model);
  emit->add_option("--out", f.out)->required();

  auto* gen = sub("gen-toy", "generate maze families and expert trajectories", detail::cmd_gen_toy);
  gen->add_option("--family-seed", f.family_seed);
  gen->add_option("--held-in", f.held_in);
  gen->add_option("--held-out", f.held_out);
  gen->add_option("--out", f.out)->required();

  auto* train = sub("train-toy", "train the toy policy on a masked dataset", detail::cmd_train_toy);
  train->add_option("--masked", f.masked);
  train->add_option("--lr", f.lr);
  train->add_option("--l2", f.l2);
  train->add_option("--epochs", f.epochs);
  train->add_option("--out", f.out)->required();

  auto* eval = sub("eval-toy", "evaluate a toy policy on held-in and held-out mazes", detail::cmd_eval_toy);
  eval->add_option("--policy", f.policy);
  eval->add_option("--toy-dir", f.toy_dir, "gen-toy output directory");
  eval->add_option("--episodes", f.episodes);
  eval->add_option("--seed", f.seed);
  eval->add_option("--out", f.out)->required();

  auto* ablate = sub("ablate", "run the strategy ablation on the maze family", detail::cmd_ablate);
  ablate->add_option("--family-seed", f.family_seed);
  ablate->add_option("--held-in", f.held_in);
  ablate->add_option("--held-out", f.held_out);
  ablate->add_option("--out", f.out)->required();

  auto* report = sub("report", "selection statistics", detail::cmd_report);
  report->add_option("--selections", f.selections)->required();
  report->add_option("--dataset", f.dataset);
  report->add_option("--out", f.out)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    *streams.out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    *streams.out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    *streams.err << "error: " << to_string(ErrorClass::UsageError) << ": " << detail::one_line(e.what()) << '\n';
    return 2;
  }

  try {
    for (auto* s : app.get_subcommands()) {
      const auto& [name, handler] = handlers.at(s);
      const RunConfig config = detail::resolve(f);
      handler(f, config, streams);
    }
  } catch (const Error& e) {
    *streams.err << "error: " << e.class_name() << ": " << detail::one_line(e.what()) << '\n';
    return e.error_class() == ErrorClass::UsageError ? 2 : 1;
  } catch (const std::exception& e) {
    *streams.err << "error: " << to_string(ErrorClass::IoError) << ": " << detail::one_line(e.what()) << '\n';
    return 1;
  }
  return 0;
}

}  // namespace critsel::cli
