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

#include <atomic>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "critsel/io.hpp"
#include "critsel/selector_llm.hpp"
#include "critsel/trajectory.hpp"

namespace fixtures {

struct GoldenCase {
  std::string file;
  std::string text;
  std::size_t length = 0;
  std::size_t cap = 0;
  std::vector<std::size_t> indices;
  bool truncated = false;
  std::map<std::size_t, critsel::StepCategory> categories;
};

struct MalformedCase {
  std::string file;
  std::string text;
  std::size_t length = 0;
};

struct SelectorFixtures {
  std::vector<GoldenCase> golden;
  std::vector<MalformedCase> malformed;
};

inline std::filesystem::path selector_dir() { return std::filesystem::path(CRITSEL_FIXTURE_DIR) / "selector"; }

inline SelectorFixtures load_selector_fixtures() {
  const auto dir = selector_dir();
  const auto manifest = nlohmann::json::parse(critsel::io::read_file(dir / "manifest.json"));
  SelectorFixtures out;
  for (const auto& g : manifest.at("golden")) {
    GoldenCase c;
    c.file = g.at("file").get<std::string>();
    c.text = critsel::io::read_file(dir / c.file);
    c.length = g.at("length").get<std::size_t>();
    c.cap = g.at("cap").get<std::size_t>();
    c.indices = g.at("indices").get<std::vector<std::size_t>>();
    c.truncated = g.at("truncated").get<bool>();
    for (const auto& [k, v] : g.at("categories").items()) {
      c.categories[std::stoul(k)] = *critsel::parse_category(v.get<std::string>());
    }
    out.golden.push_back(std::move(c));
  }
  for (const auto& m : manifest.at("malformed")) {
    MalformedCase c;
    c.file = m.at("file").get<std::string>();
    c.text = critsel::io::read_file(dir / c.file);
    c.length = m.at("length").get<std::size_t>();
    out.malformed.push_back(std::move(c));
  }
  return out;
}

inline std::string completion_body(const std::string& content) {
  return nlohmann::json{{"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", content}}}}}}}
      .dump();
}

/// Scripted transport: replies are consumed in order, the last one repeats.
/// Counts every call.
class MockTransport final : public critsel::ChatTransport {
 public:
  explicit MockTransport(std::vector<critsel::HttpResponse> script = {}) : script_(script.begin(), script.end()) {}

  /// Answers each request with `reply(prompt)`, status 200.
  explicit MockTransport(std::function<std::string(const std::string&)> reply) : reply_(std::move(reply)) {}

  critsel::HttpResponse post(const std::string&, const std::string& body, const critsel::HttpHeaders& headers,
                             std::chrono::milliseconds) override {
    std::lock_guard lock(mutex_);
    ++calls_;
    last_headers_ = headers;
    if (reply_) {
      const auto prompt = nlohmann::json::parse(body).at("messages").at(0).at("content").get<std::string>();
      return {200, completion_body(reply_(prompt))};
    }
    if (script_.empty()) throw critsel::Error(critsel::ErrorClass::TransportError, "mock has no reply");
    critsel::HttpResponse r = script_.front();
    if (script_.size() > 1) script_.pop_front();
    if (r.status == 0) throw critsel::Error(critsel::ErrorClass::TransportError, "mock connection refused");
    return r;
  }

  int calls() const { return calls_; }
  critsel::HttpHeaders last_headers() const {
    std::lock_guard lock(mutex_);
    return last_headers_;
  }

 private:
  std::deque<critsel::HttpResponse> script_;
  std::function<std::string(const std::string&)> reply_;
  std::atomic<int> calls_{0};
  critsel::HttpHeaders last_headers_;
  mutable std::mutex mutex_;
};

/// Synthetic answer in the expected format picking conversation[1] and the
/// last step.
inline std::string canned_answer(std::size_t length) {
  return "1. The high-level plan is: reach the goal.\n2. The critical steps are: conversation[1], conversation[" +
         std::to_string(length) + "]\n3. Reason: conversation[1] is planning and conversation[" +
         std::to_string(length) + "] is a pivotal action.";
}

}  // namespace fixtures
