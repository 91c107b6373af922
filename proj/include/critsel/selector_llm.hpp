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
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "critsel/error.hpp"
#include "critsel/ingest.hpp"
#include "critsel/io.hpp"
#include "critsel/parallel.hpp"
#include "critsel/trajectory.hpp"

namespace critsel {

struct CategoryDefinition {
  StepCategory category;
  std::string_view name;
  std::string_view definition;
};

inline constexpr std::array<CategoryDefinition, 4> kCategoryDefinitions{{
    {StepCategory::PlanCreation, "Plan Creation",
     "Steps where the LLM agent formulates sub-goals by analyzing previous observations and considering "
     "the final objective, breaking down the larger goal into manageable tasks that guide the agent's "
     "actions towards the overall outcome."},
    {StepCategory::CriticalObservation, "Critical Observation",
     "Steps where the LLM agent identifies and analyzes key information from the environment, which help "
     "agent understand the objective or state and refine its strategy and decision-making towards more "
     "effective outcomes."},
    {StepCategory::CriticalAction, "Critical Action",
     "Steps where the LLM agent takes decisive and impactful actions based on prior observations, "
     "significantly advancing the process toward the final objectives. These actions are crucial in "
     "shaping the direction of the agent's strategy and are often pivotal moments that determine progress "
     "or failure, ensuring that the agent remains on track to achieve the desired outcome."},
    {StepCategory::SelfCorrection, "Self Correction",
     "Steps where the LLM agent carefully recalls and assesses its previous actions or decisions, "
     "especially after encountering failure or suboptimal outcomes. During this process, the agent "
     "reflects on what went wrong, identifies areas for improvement, and adjusts its approach to enhance "
     "future performance, which helps the agent refine its decision-making and better align with the "
     "overall objective."},
}};

inline constexpr std::string_view kPlanMarker = "The high-level plan is:";
inline constexpr std::string_view kStepsMarker = "The critical steps are:";
inline constexpr std::string_view kReasonMarker = "Reason:";

struct SelectorPromptConfig {
  double ratio = 0.3;
  /// Observations longer than this many bytes are cut and marked; 0 keeps
  /// them whole.
  std::size_t observation_truncation = 2000;
};

/// Renders the critical-step identification prompt for one trajectory.
/// Steps are labelled conversation[1..T].
inline std::string build_prompt(const Trajectory& t, const SelectorPromptConfig& cfg) {
  const std::size_t cap = selection_cap(cfg.ratio, t.steps.size());
  const std::string cap_text = std::to_string(cap);

  std::ostringstream out;
  out << "A critical step is defined as a key action or decision that, if performed correctly, "
         "significantly increases the likelihood of successfully completing the task. It represents a "
         "turning point in the process that influences the outcome of subsequent actions. More "
         "specifically, critical steps include:\n";
  for (const auto& def : kCategoryDefinitions) out << "- " << def.name << ": " << def.definition << '\n';
  out << "\nTask Description:\nYour task is:\n"
         "1. Induce a high-level plan or strategy based on the expert conversation, summarizing the key "
         "steps needed to successfully complete the task.\n"
         "2. Based on this high-level plan, identify the most critical action steps in the expert "
         "conversation. A maximum of "
      << cap_text
      << " steps may be chosen from the conversation, ensuring the number of selected steps does not exceed "
      << cap_text
      << ".\n"
         "3. Provide a detailed explanation for choosing these critical steps, specifying which category "
         "(e.g., key observation, planning, recall, pivotal action) they belong to and why mastering these "
         "steps ensures the success of the task.\n"
         "\nAnswer Format:\n"
         "1. "
      << kPlanMarker
      << " [Summarize the strategy and key steps for task completion]\n"
         "2. "
      << kStepsMarker
      << " conversation[...]\n"
         "3. "
      << kReasonMarker
      << " [Explain why these steps are critical, including which category they fall into (key "
         "observation, planning, recall, pivotal action) and how they enable the player to avoid mistakes "
         "in subsequent steps]\n"
         "\nExpert conversation:\nTask instruction:\n"
      << t.instruction << '\n';

  for (const Step& s : t.steps) {
    out << "\nconversation[" << s.index + 1 << "]:\n";
    if (!s.thought.empty()) out << "Thought: " << s.thought << '\n';
    out << "Action: " << s.action << '\n';
    std::string_view obs = s.observation;
    if (cfg.observation_truncation > 0 && obs.size() > cfg.observation_truncation) {
      out << "Observation: " << obs.substr(0, cfg.observation_truncation) << " [truncated]\n";
    } else {
      out << "Observation: " << (obs.empty() ? std::string_view("(none)") : obs) << '\n';
    }
  }
  return out.str();
}

struct SelectorResponse {
  std::string raw;
  std::string plan_summary;
  std::vector<std::size_t> indices;  // ascending, 0-based
  std::vector<std::size_t> listed;   // 0-based, in the order the model listed them
  std::map<std::size_t, StepCategory> categories;
  std::vector<long long> dropped;  // 1-based labels outside 1..T
  bool truncated = false;
};

namespace detail {

struct IndexRef {
  std::size_t begin;  // offset of the reference in the searched text
  std::size_t end;
  std::vector<long long> labels;  // 1-based as written
};

/// Parses "3", "2-4" and comma/semicolon/"and" separated lists thereof.
inline std::vector<long long> parse_label_list(std::string_view body) {
  static const std::regex item_re(R"(^\s*(\d+)\s*(?:-\s*(\d+))?\s*$)");
  std::vector<long long> labels;
  std::string text(body);
  for (std::size_t p = text.find(" and "); p != std::string::npos; p = text.find(" and ")) text.replace(p, 5, ",");
  std::replace(text.begin(), text.end(), ';', ',');
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    std::smatch m;
    if (!std::regex_match(item, m, item_re)) continue;
    const long long a = std::stoll(m[1].str());
    if (m[2].matched) {
      long long b = std::stoll(m[2].str());
      const long long lo = std::min(a, b);
      const long long hi = std::max(a, b);
      if (hi - lo > 10000) continue;
      for (long long k = lo; k <= hi; ++k) labels.push_back(k);
    } else {
      labels.push_back(a);
    }
  }
  return labels;
}

inline std::vector<IndexRef> find_conversation_refs(const std::string& lowered) {
  static const std::regex ref_re(R"(conversation\s*\[([^\]]*)\])");
  std::vector<IndexRef> refs;
  for (auto it = std::sregex_iterator(lowered.begin(), lowered.end(), ref_re); it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    refs.push_back({static_cast<std::size_t>(m.position(0)),
                    static_cast<std::size_t>(m.position(0) + m.length(0)), parse_label_list(m[1].str())});
  }
  return refs;
}

/// Maps en/em dashes to '-' and drops markdown emphasis.
inline std::string normalize_response(std::string_view raw) {
  std::string s(raw);
  for (std::string_view dash : {"\xE2\x80\x93", "\xE2\x80\x94"}) {
    for (std::size_t p = s.find(dash); p != std::string::npos; p = s.find(dash)) s.replace(p, dash.size(), "-");
  }
  s.erase(std::remove(s.begin(), s.end(), '*'), s.end());
  return s;
}

/// Trims and removes a dangling list enumerator ("2." or "-") at the end.
inline std::string clean_segment(std::string_view seg) {
  std::string s = trim(seg);
  static const std::regex tail_re(R"((\n|^)\s*(\d+\.|-)\s*$)");
  s = std::regex_replace(s, tail_re, "");
  return trim(s);
}

struct CategoryKeyword {
  std::string_view text;
  StepCategory category;
};

inline constexpr std::array<CategoryKeyword, 9> kCategoryKeywords{{
    {"plan creation", StepCategory::PlanCreation},
    {"planning", StepCategory::PlanCreation},
    {"critical observation", StepCategory::CriticalObservation},
    {"key observation", StepCategory::CriticalObservation},
    {"critical action", StepCategory::CriticalAction},
    {"pivotal action", StepCategory::CriticalAction},
    {"self correction", StepCategory::SelfCorrection},
    {"self-correction", StepCategory::SelfCorrection},
    {"recall", StepCategory::SelfCorrection},
}};

}  // namespace detail

/// Extracts plan, step indices and categories from a selector answer.
/// Labels in the answer are 1-based; the result is 0-based.
inline SelectorResponse parse_response(std::string_view raw, std::size_t length) {
  SelectorResponse resp;
  resp.raw = std::string(raw);
  // Segments are cut from `plain`; markers are searched in its lowercase
  // twin, which has identical offsets.
  const std::string plain = detail::normalize_response(raw);
  const std::string text = detail::lower(plain);

  const std::string steps_marker = detail::lower(kStepsMarker);
  const std::size_t steps_pos = text.find(steps_marker);
  if (steps_pos == std::string::npos) {
    throw Error(ErrorClass::UnparseableResponse, "response has no '" + std::string(kStepsMarker) + "' marker");
  }
  const std::size_t steps_begin = steps_pos + steps_marker.size();
  const std::string reason_marker = detail::lower(kReasonMarker);
  const std::size_t reason_pos = text.find(reason_marker, steps_begin);
  const std::size_t steps_end = reason_pos == std::string::npos ? text.size() : reason_pos;

  const std::string plan_marker = detail::lower(kPlanMarker);
  const std::size_t plan_pos = text.find(plan_marker);
  if (plan_pos != std::string::npos && plan_pos < steps_pos) {
    const std::size_t b = plan_pos + plan_marker.size();
    resp.plan_summary = detail::clean_segment(std::string_view(plain).substr(b, steps_pos - b));
  }

  const std::string steps_text = text.substr(steps_begin, steps_end - steps_begin);
  auto refs = detail::find_conversation_refs(steps_text);
  std::vector<long long> labels;
  for (const auto& r : refs) labels.insert(labels.end(), r.labels.begin(), r.labels.end());
  if (refs.empty()) {
    // Bare list such as "3, 7, 9-10" on the first line.
    const std::string first_line = steps_text.substr(0, steps_text.find('\n', steps_text.find_first_not_of(" \t\n")));
    labels = detail::parse_label_list(detail::trim(first_line));
  }

  std::set<std::size_t> seen;
  for (long long label : labels) {
    if (label < 1 || static_cast<unsigned long long>(label) > length) {
      resp.dropped.push_back(label);
      continue;
    }
    const auto idx = static_cast<std::size_t>(label - 1);
    if (seen.insert(idx).second) resp.listed.push_back(idx);
  }
  if (resp.listed.empty()) {
    throw Error(ErrorClass::UnparseableResponse, "response lists no valid step index");
  }
  resp.indices.assign(seen.begin(), seen.end());

  if (reason_pos != std::string::npos) {
    const std::string reason_text = text.substr(reason_pos + reason_marker.size());
    struct Hit {
      std::size_t begin, end;
      StepCategory category;
    };
    std::vector<Hit> hits;
    for (const auto& kw : detail::kCategoryKeywords) {
      for (std::size_t p = reason_text.find(kw.text); p != std::string::npos; p = reason_text.find(kw.text, p + 1)) {
        hits.push_back({p, p + kw.text.size(), kw.category});
      }
    }
    if (!hits.empty()) {
      for (const auto& ref : detail::find_conversation_refs(reason_text)) {
        std::size_t best = std::string::npos;
        const Hit* best_hit = nullptr;
        for (const auto& h : hits) {
          const std::size_t dist = h.begin >= ref.end ? h.begin - ref.end
                                   : ref.begin >= h.end ? ref.begin - h.end
                                                        : 0;
          // On equal distance prefer the keyword that follows the reference.
          if (dist < best || (dist == best && best_hit && best_hit->begin < ref.begin && h.begin >= ref.end)) {
            best = dist;
            best_hit = &h;
          }
        }
        for (long long label : ref.labels) {
          if (label < 1 || static_cast<unsigned long long>(label) > length) continue;
          const auto idx = static_cast<std::size_t>(label - 1);
          if (seen.contains(idx) && !resp.categories.contains(idx)) resp.categories[idx] = best_hit->category;
        }
      }
    }
  }
  return resp;
}

/// Keeps the first `cap` indices in listing order when the model chose too
/// many.
inline SelectorResponse enforce_cap(SelectorResponse resp, std::size_t cap) {
  if (resp.listed.size() <= cap) return resp;
  resp.listed.resize(cap);
  resp.indices = resp.listed;
  std::sort(resp.indices.begin(), resp.indices.end());
  std::erase_if(resp.categories, [&](const auto& kv) {
    return !std::binary_search(resp.indices.begin(), resp.indices.end(), kv.first);
  });
  resp.truncated = true;
  return resp;
}

// Endpoint plumbing

struct EndpointConfig {
  std::string base_url;
  std::string model_name = "gpt-4o";
  std::string api_key_env_var = "CRITSEL_API_KEY";
  int max_retries = 3;
  std::chrono::milliseconds timeout{60000};
  double temperature = 0.0;
  std::chrono::milliseconds retry_backoff{500};
  std::size_t max_in_flight = 4;

  void validate() const {
    if (max_retries < 0) throw Error(ErrorClass::ConfigurationError, "max_retries must be >= 0");
    if (timeout.count() <= 0) throw Error(ErrorClass::ConfigurationError, "timeout must be positive");
    if (max_in_flight == 0) throw Error(ErrorClass::ConfigurationError, "max_in_flight must be >= 1");
  }

  std::string completions_url() const {
    constexpr std::string_view suffix = "/chat/completions";
    std::string url = base_url;
    if (url.size() >= suffix.size() && url.compare(url.size() - suffix.size(), suffix.size(), suffix) == 0) return url;
    while (!url.empty() && url.back() == '/') url.pop_back();
    return url + std::string(suffix);
  }
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

using HttpHeaders = std::vector<std::pair<std::string, std::string>>;

/// Sends one POST. Implementations throw Error(TransportError) when no
/// response was received; any received status is returned as-is.
class ChatTransport {
 public:
  virtual ~ChatTransport() = default;
  virtual HttpResponse post(const std::string& url, const std::string& body, const HttpHeaders& headers,
                            std::chrono::milliseconds timeout) = 0;
};

inline std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorClass::IoError, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

inline std::string cache_key(std::string_view prompt, std::string_view model_name) {
  std::string material;
  material.reserve(prompt.size() + model_name.size() + 1);
  material.append(model_name).push_back('\n');
  material.append(prompt);
  return sha256_hex(material);
}

/// Raw selector answers keyed by content hash, one JSON file per key.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  std::optional<std::string> get(const std::string& key) const {
    const auto path = dir_ / (key + ".json");
    std::lock_guard lock(mutex_);
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) return std::nullopt;
    try {
      return json::parse(io::read_file(path)).at("response").get<std::string>();
    } catch (const json::exception&) {
      return std::nullopt;
    }
  }

  void put(const std::string& key, std::string_view model_name, const std::string& response) {
    const json entry = {{"key", key}, {"model", model_name}, {"response", response}};
    std::lock_guard lock(mutex_);
    io::write_file_atomic(dir_ / (key + ".json"), entry.dump(2) + "\n");
  }

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  mutable std::mutex mutex_;
};

inline std::string chat_request_body(const EndpointConfig& cfg, const std::string& prompt) {
  const json body = {{"model", cfg.model_name},
                     {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
                     {"temperature", cfg.temperature}};
  return body.dump();
}

inline std::string extract_completion(const std::string& body) {
  try {
    return json::parse(body).at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorClass::UnparseableResponse, std::string("malformed completion payload: ") + e.what());
  }
}

inline CriticalSelection selection_from_response(const Trajectory& t, const SelectorPromptConfig& prompt_cfg,
                                                 const EndpointConfig& endpoint_cfg, const SelectorResponse& resp) {
  CriticalSelection s;
  s.trajectory_id = t.id;
  s.strategy = Strategy::Llm;
  s.ratio = prompt_cfg.ratio;
  s.cap = selection_cap(prompt_cfg.ratio, t.steps.size());
  s.indices = resp.indices;
  s.categories = resp.categories;
  if (!resp.plan_summary.empty()) s.plan_summary = resp.plan_summary;
  std::string note = "selector model " + endpoint_cfg.model_name;
  if (resp.truncated) note += "; truncated to cap";
  if (!resp.dropped.empty()) note += "; dropped " + std::to_string(resp.dropped.size()) + " out-of-range labels";
  s.note = std::move(note);
  return s;
}

/// Asks the selector model for one trajectory's critical steps. A warm
/// cache answers without touching the transport.
inline CriticalSelection select_with_llm(const Trajectory& t, const SelectorPromptConfig& prompt_cfg,
                                         const EndpointConfig& endpoint_cfg, ResponseCache* cache,
                                         ChatTransport& transport) {
  endpoint_cfg.validate();
  const std::string prompt = build_prompt(t, prompt_cfg);
  const std::string key = cache_key(prompt, endpoint_cfg.model_name);
  const std::size_t cap = selection_cap(prompt_cfg.ratio, t.steps.size());

  if (cache) {
    if (auto hit = cache->get(key)) {
      return selection_from_response(t, prompt_cfg, endpoint_cfg,
                                     enforce_cap(parse_response(*hit, t.steps.size()), cap));
    }
  }

  HttpHeaders headers{{"Content-Type", "application/json"}};
  if (const char* token = std::getenv(endpoint_cfg.api_key_env_var.c_str()); token && *token) {
    headers.emplace_back("Authorization", std::string("Bearer ") + token);
  }
  const std::string body = chat_request_body(endpoint_cfg, prompt);
  const std::string url = endpoint_cfg.completions_url();

  std::string last_failure = "no attempt made";
  for (int attempt = 0; attempt <= endpoint_cfg.max_retries; ++attempt) {
    if (attempt > 0 && endpoint_cfg.retry_backoff.count() > 0) {
      std::this_thread::sleep_for(endpoint_cfg.retry_backoff * (1LL << std::min(attempt - 1, 6)));
    }
    try {
      const HttpResponse res = transport.post(url, body, headers, endpoint_cfg.timeout);
      if (res.status < 200 || res.status >= 300) {
        throw Error(ErrorClass::TransportError, "HTTP " + std::to_string(res.status) + " from " + url);
      }
      const std::string content = extract_completion(res.body);
      auto resp = enforce_cap(parse_response(content, t.steps.size()), cap);
      if (cache) cache->put(key, endpoint_cfg.model_name, content);
      return selection_from_response(t, prompt_cfg, endpoint_cfg, resp);
    } catch (const Error& e) {
      if (e.error_class() != ErrorClass::TransportError && e.error_class() != ErrorClass::UnparseableResponse) throw;
      last_failure = std::string(e.class_name()) + ": " + e.what();
    }
  }
  throw Error(ErrorClass::SelectorUnavailable, "selector for '" + t.id + "' failed after " +
                                                   std::to_string(endpoint_cfg.max_retries + 1) +
                                                   " attempts; last failure: " + last_failure);
}

/// Runs select_with_llm over a dataset with at most max_in_flight concurrent
/// requests. Output order follows input order.
inline std::vector<CriticalSelection> select_all_with_llm(const std::vector<Trajectory>& trajectories,
                                                          const SelectorPromptConfig& prompt_cfg,
                                                          const EndpointConfig& endpoint_cfg, ResponseCache* cache,
                                                          ChatTransport& transport) {
  std::vector<CriticalSelection> out(trajectories.size());
  parallel_for(trajectories.size(), endpoint_cfg.max_in_flight, [&](std::size_t i) {
    out[i] = select_with_llm(trajectories[i], prompt_cfg, endpoint_cfg, cache, transport);
  });
  return out;
}

}  // namespace critsel
