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
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "critsel/error.hpp"
#include "critsel/io.hpp"
#include "critsel/trajectory.hpp"

namespace critsel {

using nlohmann::json;

namespace detail {

inline std::string trim(std::string_view s) {
  const auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return std::string(s);
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

/// Position of `label` (lowercase, ending in ':') at the start of a line of
/// `lowered`, or npos.
inline std::size_t find_line_label(const std::string& lowered, std::string_view label,
                                   std::size_t from = 0) {
  for (std::size_t pos = lowered.find(label, from); pos != std::string::npos;
       pos = lowered.find(label, pos + 1)) {
    if (pos == 0 || lowered[pos - 1] == '\n') return pos;
  }
  return std::string::npos;
}

/// Offset just past a label's colon, skipping one optional space.
inline std::size_t after_label(std::string_view content, std::size_t pos, std::size_t label_len) {
  std::size_t p = pos + label_len;
  if (p < content.size() && content[p] == ' ') ++p;
  return p;
}

}  // namespace detail

struct ReactParts {
  std::string thought;
  std::string action;
};

/// Splits an assistant message of the form "Thought:\n...\nAction:\n...".
/// Without an Action label the whole message is the action.
inline ReactParts parse_react_message(std::string_view content) {
  const std::string lowered = detail::lower(content);
  constexpr std::string_view kThought = "thought:";
  constexpr std::string_view kAction = "action:";

  ReactParts parts;
  const std::size_t action_pos = detail::find_line_label(lowered, kAction);
  if (action_pos == std::string::npos) {
    parts.action = detail::trim(content);
  } else {
    parts.action = detail::trim(content.substr(detail::after_label(content, action_pos, kAction.size())));
    const std::size_t thought_pos = detail::find_line_label(lowered, kThought);
    if (thought_pos != std::string::npos && thought_pos < action_pos) {
      const std::size_t start = detail::after_label(content, thought_pos, kThought.size());
      parts.thought = detail::trim(content.substr(start, action_pos - start));
    }
  }
  if (parts.action.empty()) {
    throw Error(ErrorClass::MalformedStep, "message has an empty action");
  }
  return parts;
}

/// Inverse of parse_react_message for trimmed parts.
inline std::string render_react_message(const Step& s) {
  if (s.thought.empty()) return "Action:\n" + s.action;
  return "Thought:\n" + s.thought + "\nAction:\n" + s.action;
}

enum class Role { Human, Assistant };

struct ChatMessage {
  Role role = Role::Human;
  std::string content;
};

struct ChatRecord {
  std::string id;
  std::string environment;
  std::vector<ChatMessage> conversations;
  std::optional<double> reward;
};

/// First human message is the instruction; every following
/// (assistant, human) pair is one step.
inline Trajectory chat_to_trajectory(const ChatRecord& r) {
  if (r.conversations.empty() || r.conversations.front().role != Role::Human) {
    throw Error(ErrorClass::MalformedRecord, "record '" + r.id + "' must start with a human message");
  }
  for (std::size_t i = 1; i < r.conversations.size(); ++i) {
    if (r.conversations[i].role == r.conversations[i - 1].role) {
      throw Error(ErrorClass::MalformedRecord,
                  "record '" + r.id + "' has two consecutive " +
                      (r.conversations[i].role == Role::Human ? "human" : "assistant") +
                      " messages at position " + std::to_string(i));
    }
  }

  Trajectory t;
  t.id = r.id;
  t.environment = r.environment;
  t.instruction = r.conversations.front().content;
  t.final_reward = r.reward;
  for (std::size_t i = 1; i < r.conversations.size(); i += 2) {
    ReactParts parts;
    try {
      parts = parse_react_message(r.conversations[i].content);
    } catch (const Error& e) {
      throw Error(ErrorClass::MalformedRecord,
                  "record '" + r.id + "' message " + std::to_string(i) + ": " + e.what());
    }
    Step s;
    s.index = t.steps.size();
    s.thought = std::move(parts.thought);
    s.action = std::move(parts.action);
    if (i + 1 < r.conversations.size()) s.observation = r.conversations[i + 1].content;
    t.steps.push_back(std::move(s));
  }
  if (t.steps.empty()) {
    throw Error(ErrorClass::MalformedRecord, "record '" + r.id + "' has no assistant turns");
  }
  const auto violations = validate_trajectory(t);
  if (!violations.empty()) {
    throw Error(ErrorClass::MalformedRecord, "record '" + r.id + "': " + violations.front().message);
  }
  return t;
}

inline ChatRecord trajectory_to_chat(const Trajectory& t) {
  ChatRecord r;
  r.id = t.id;
  r.environment = t.environment;
  r.reward = t.final_reward;
  r.conversations.push_back({Role::Human, t.instruction});
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    const Step& s = t.steps[i];
    r.conversations.push_back({Role::Assistant, render_react_message(s)});
    const bool last = i + 1 == t.steps.size();
    if (!last || !s.observation.empty()) r.conversations.push_back({Role::Human, s.observation});
  }
  return r;
}

inline json record_to_json(const ChatRecord& r) {
  json conv = json::array();
  for (const auto& m : r.conversations) {
    conv.push_back({{"role", m.role == Role::Human ? "human" : "assistant"}, {"content", m.content}});
  }
  json j = {{"id", r.id}, {"environment", r.environment}, {"conversations", std::move(conv)}};
  if (r.reward) j["reward"] = *r.reward;
  return j;
}

inline ChatRecord record_from_json(const json& j) {
  ChatRecord r;
  r.id = j.at("id").get<std::string>();
  if (j.contains("environment")) r.environment = j.at("environment").get<std::string>();
  for (const auto& m : j.at("conversations")) {
    const auto role = m.at("role").get<std::string>();
    if (role != "human" && role != "assistant") {
      throw Error(ErrorClass::MalformedRecord, "unknown role '" + role + "'");
    }
    r.conversations.push_back({role == "human" ? Role::Human : Role::Assistant,
                               m.at("content").get<std::string>()});
  }
  if (j.contains("reward") && !j.at("reward").is_null()) r.reward = j.at("reward").get<double>();
  return r;
}

/// Calls fn(json, line_number) for every non-blank line of a JSON Lines file.
/// Parse failures become parse-error naming the 1-based line.
template <class Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn) {
  const auto lines = io::read_lines(path);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    if (detail::trim(lines[n]).empty()) continue;
    const std::size_t line_no = n + 1;
    json j;
    try {
      j = json::parse(lines[n]);
    } catch (const json::exception& e) {
      throw Error(ErrorClass::ParseError,
                  path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      fn(j, line_no);
    } catch (const json::exception& e) {
      throw Error(ErrorClass::ParseError,
                  path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      if (e.error_class() == ErrorClass::DuplicateId) throw;
      throw Error(e.error_class(), path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  Dataset d;
  std::set<std::string> seen;
  for_each_jsonl(path, [&](const json& j, std::size_t line_no) {
    Trajectory t = chat_to_trajectory(record_from_json(j));
    if (!seen.insert(t.id).second) {
      throw Error(ErrorClass::DuplicateId, path.string() + ":" + std::to_string(line_no) +
                                               ": duplicate id '" + t.id + "' on line " +
                                               std::to_string(line_no));
    }
    d.trajectories.push_back(std::move(t));
  });
  return d;
}

inline std::string dataset_to_jsonl(const Dataset& d) {
  std::string out;
  for (const auto& t : d.trajectories) {
    out += record_to_json(trajectory_to_chat(t)).dump();
    out += '\n';
  }
  return out;
}

inline void write_dataset(const Dataset& d, const std::filesystem::path& path) {
  io::write_file_atomic(path, dataset_to_jsonl(d));
}

// Selection files

inline json selection_to_json(const CriticalSelection& s) {
  json j = {{"trajectory_id", s.trajectory_id},
            {"strategy", std::string(to_string(s.strategy))},
            {"ratio", s.ratio},
            {"cap", s.cap}};
  if (s.seed) j["seed"] = *s.seed;
  j["indices"] = s.indices;
  if (!s.categories.empty()) {
    json cats = json::object();
    for (const auto& [idx, cat] : s.categories) cats[std::to_string(idx)] = std::string(to_string(cat));
    j["categories"] = std::move(cats);
  }
  if (s.plan_summary) j["plan_summary"] = *s.plan_summary;
  if (s.note) j["note"] = *s.note;
  return j;
}

inline CriticalSelection selection_from_json(const json& j) {
  CriticalSelection s;
  s.trajectory_id = j.at("trajectory_id").get<std::string>();
  const auto strategy = j.at("strategy").get<std::string>();
  const auto parsed = parse_strategy(strategy);
  if (!parsed) throw Error(ErrorClass::ParseError, "unknown strategy '" + strategy + "'");
  s.strategy = *parsed;
  s.ratio = j.at("ratio").get<double>();
  s.cap = j.at("cap").get<std::size_t>();
  if (j.contains("seed") && !j.at("seed").is_null()) s.seed = j.at("seed").get<std::uint64_t>();
  s.indices = j.at("indices").get<std::vector<std::size_t>>();
  if (j.contains("categories")) {
    for (const auto& [key, value] : j.at("categories").items()) {
      const auto cat = parse_category(value.get<std::string>());
      if (!cat) throw Error(ErrorClass::ParseError, "unknown category '" + value.get<std::string>() + "'");
      s.categories[std::stoul(key)] = *cat;
    }
  }
  if (j.contains("plan_summary")) s.plan_summary = j.at("plan_summary").get<std::string>();
  if (j.contains("note")) s.note = j.at("note").get<std::string>();
  return s;
}

inline std::vector<CriticalSelection> load_selections(const std::filesystem::path& path) {
  std::vector<CriticalSelection> out;
  std::set<std::string> seen;
  for_each_jsonl(path, [&](const json& j, std::size_t line_no) {
    auto s = selection_from_json(j);
    if (!seen.insert(s.trajectory_id).second) {
      throw Error(ErrorClass::DuplicateId, path.string() + ":" + std::to_string(line_no) +
                                               ": duplicate trajectory_id '" + s.trajectory_id + "'");
    }
    out.push_back(std::move(s));
  });
  return out;
}

inline std::string selections_to_jsonl(const std::vector<CriticalSelection>& selections) {
  std::string out;
  for (const auto& s : selections) {
    out += selection_to_json(s).dump();
    out += '\n';
  }
  return out;
}

inline void write_selections(const std::vector<CriticalSelection>& selections,
                             const std::filesystem::path& path) {
  io::write_file_atomic(path, selections_to_jsonl(selections));
}

/// Attaches selections to a dataset, checking each against its trajectory.
inline void attach_selections(Dataset& d, const std::vector<CriticalSelection>& selections) {
  std::map<std::string, const Trajectory*> by_id;
  for (const auto& t : d.trajectories) by_id[t.id] = &t;
  for (const auto& s : selections) {
    auto it = by_id.find(s.trajectory_id);
    if (it == by_id.end()) {
      throw Error(ErrorClass::SelectionMismatch, "selection for unknown trajectory '" + s.trajectory_id + "'");
    }
    check_selection(*it->second, s);
    d.selections[s.trajectory_id] = s;
  }
}

}  // namespace critsel
