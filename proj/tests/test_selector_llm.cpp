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

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include <gtest/gtest.h>

#include "critsel/http_transport.hpp"
#include "critsel/selector_llm.hpp"
#include "oracles.hpp"
#include "selector_fixtures.hpp"
#include "support.hpp"

namespace critsel {
namespace {

using testing_support::class_of;
using testing_support::TempDir;

Trajectory trajectory(std::size_t steps, std::string id = "traj") {
  Rng rng(17);
  return oracle::random_trajectory(rng, steps, std::move(id));
}

EndpointConfig endpoint(int retries = 2) {
  EndpointConfig cfg;
  cfg.base_url = "http://mock.invalid/v1";
  cfg.model_name = "test-model";
  cfg.max_retries = retries;
  cfg.retry_backoff = std::chrono::milliseconds(0);
  return cfg;
}

TEST(BuildPrompt, CapAppearsInConstraint) {
  EXPECT_NE(build_prompt(trajectory(20), {0.3}).find("does not exceed 6"), std::string::npos);
  EXPECT_NE(build_prompt(trajectory(3), {0.3}).find("does not exceed 1"), std::string::npos);
  EXPECT_NE(build_prompt(trajectory(20), {0.3}).find("A maximum of 6 steps"), std::string::npos);
}

TEST(BuildPrompt, NamesEveryCategoryAndAnswerMarker) {
  const auto p = build_prompt(trajectory(5), {});
  for (auto name : {"Plan Creation", "Critical Observation", "Critical Action", "Self Correction"}) {
    EXPECT_NE(p.find(name), std::string::npos) << name;
  }
  EXPECT_NE(p.find("The critical steps are:"), std::string::npos);
  EXPECT_NE(p.find("The high-level plan is:"), std::string::npos);
}

TEST(BuildPrompt, LabelsStepsFromOne) {
  const auto t = trajectory(4);
  const auto p = build_prompt(t, {});
  EXPECT_NE(p.find("conversation[1]:"), std::string::npos);
  EXPECT_NE(p.find("conversation[4]:"), std::string::npos);
  EXPECT_EQ(p.find("conversation[0]:"), std::string::npos);
  EXPECT_EQ(p.find("conversation[5]:"), std::string::npos);
  EXPECT_NE(p.find("Action: " + t.steps[2].action), std::string::npos);
}

TEST(BuildPrompt, TruncatesLongObservations) {
  Trajectory t = trajectory(2);
  t.steps[0].observation = std::string(50, 'x');
  t.steps[1].observation.clear();
  const auto p = build_prompt(t, {0.3, 10});
  EXPECT_NE(p.find("Observation: xxxxxxxxxx [truncated]"), std::string::npos);
  EXPECT_NE(p.find("Observation: (none)"), std::string::npos);
  EXPECT_NE(build_prompt(t, {0.3, 0}).find(std::string(50, 'x')), std::string::npos);
}

TEST(ParseResponse, Examples) {
  EXPECT_EQ(parse_response("... The critical steps are: conversation[3], conversation[7] ...", 10).indices,
            (std::vector<std::size_t>{2, 6}));
  EXPECT_EQ(parse_response("The critical steps are: conversation[2-4]", 10).indices,
            (std::vector<std::size_t>{1, 2, 3}));
  EXPECT_EQ(class_of([] { parse_response("I cannot determine critical steps.", 10); }),
            ErrorClass::UnparseableResponse);
}

TEST(ParseResponse, ExtractsPlan) {
  const auto r = parse_response("1. The high-level plan is: do A then B.\n2. The critical steps are: conversation[1]", 3);
  EXPECT_EQ(r.plan_summary, "do A then B.");
}

TEST(ParseResponse, GoldenFixtures) {
  const auto fx = fixtures::load_selector_fixtures();
  ASSERT_EQ(fx.golden.size(), 10u);
  for (const auto& g : fx.golden) {
    SCOPED_TRACE(g.file);
    const auto r = enforce_cap(parse_response(g.text, g.length), g.cap);
    EXPECT_EQ(r.indices, g.indices);
    EXPECT_EQ(r.truncated, g.truncated);
    EXPECT_EQ(r.categories, g.categories);
    EXPECT_FALSE(r.plan_summary.empty());
  }
}

TEST(ParseResponse, MalformedFixtures) {
  const auto fx = fixtures::load_selector_fixtures();
  ASSERT_EQ(fx.malformed.size(), 5u);
  for (const auto& m : fx.malformed) {
    SCOPED_TRACE(m.file);
    EXPECT_EQ(class_of([&] { parse_response(m.text, m.length); }), ErrorClass::UnparseableResponse);
  }
}

TEST(ParseResponse, OutOfRangeLabelsAreDropped) {
  const auto r = parse_response("The critical steps are: conversation[0], conversation[2], conversation[9]", 4);
  EXPECT_EQ(r.indices, std::vector<std::size_t>{1});
  EXPECT_EQ(r.dropped, (std::vector<long long>{0, 9}));
}

TEST(EnforceCap, Examples) {
  auto r = parse_response("The critical steps are: conversation[8], conversation[3], conversation[10]", 10);
  auto capped = enforce_cap(r, 2);
  EXPECT_EQ(capped.indices, (std::vector<std::size_t>{2, 7}));
  EXPECT_TRUE(capped.truncated);
  auto same = enforce_cap(r, 3);
  EXPECT_EQ(same.indices, (std::vector<std::size_t>{2, 7, 9}));
  EXPECT_FALSE(same.truncated);
  auto one = enforce_cap(parse_response("The critical steps are: conversation[4]", 10), 3);
  EXPECT_EQ(one.indices, std::vector<std::size_t>{3});
  EXPECT_FALSE(one.truncated);
}

TEST(ParseResponse, CapInvariantOnRandomAnswers) {
  Rng rng(99);
  for (int i = 0; i < 2000; ++i) {
    const std::size_t len = 1 + rng.below(30);
    std::string answer = "The critical steps are: ";
    const std::size_t n = 1 + rng.below(12);
    for (std::size_t k = 0; k < n; ++k) answer += "conversation[" + std::to_string(1 + rng.below(len)) + "], ";
    const std::size_t cap = selection_cap(0.3, len);
    const auto r = enforce_cap(parse_response(answer, len), cap);
    ASSERT_GE(r.indices.size(), 1u);
    ASSERT_LE(r.indices.size(), cap);
    ASSERT_TRUE(std::is_sorted(r.indices.begin(), r.indices.end()));
    ASSERT_LT(r.indices.back(), len);
  }
}

TEST(Cache, KeyDependsOnPromptAndModel) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_NE(cache_key("p", "m1"), cache_key("p", "m2"));
  EXPECT_NE(cache_key("p1", "m"), cache_key("p2", "m"));
  EXPECT_EQ(cache_key("p", "m"), cache_key("p", "m"));
}

TEST(SelectWithLlm, ParsesMockAnswer) {
  const auto t = trajectory(10);
  const auto fx = fixtures::load_selector_fixtures();
  fixtures::MockTransport mock({{200, fixtures::completion_body(fx.golden[0].text)}});
  const auto s = select_with_llm(t, {}, endpoint(), nullptr, mock);
  EXPECT_EQ(s.indices, fx.golden[0].indices);
  EXPECT_EQ(s.strategy, Strategy::Llm);
  EXPECT_EQ(s.cap, 3u);
  EXPECT_EQ(s.categories, fx.golden[0].categories);
  EXPECT_TRUE(s.plan_summary.has_value());
  EXPECT_EQ(mock.calls(), 1);
}

TEST(SelectWithLlm, RetriesGarbageThenSucceeds) {
  const auto t = trajectory(10);
  fixtures::MockTransport mock({{200, fixtures::completion_body("no idea")},
                                {200, "not even json"},
                                {200, fixtures::completion_body(fixtures::canned_answer(10))}});
  const auto s = select_with_llm(t, {}, endpoint(2), nullptr, mock);
  EXPECT_EQ(mock.calls(), 3);
  EXPECT_EQ(s.indices, (std::vector<std::size_t>{0, 9}));
}

TEST(SelectWithLlm, ExhaustedRetriesAreSelectorUnavailable) {
  const auto t = trajectory(10);
  fixtures::MockTransport mock({{503, "busy"}});
  EXPECT_EQ(class_of([&] { select_with_llm(t, {}, endpoint(2), nullptr, mock); }), ErrorClass::SelectorUnavailable);
  EXPECT_EQ(mock.calls(), 3);
  fixtures::MockTransport refused({{0, ""}});
  try {
    select_with_llm(t, {}, endpoint(1), nullptr, refused);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.error_class(), ErrorClass::SelectorUnavailable);
    EXPECT_NE(std::string(e.what()).find("transport-error"), std::string::npos);
  }
}

TEST(SelectWithLlm, WarmCacheMakesNoCalls) {
  TempDir dir;
  ResponseCache cache(dir.path());
  std::vector<Trajectory> ts;
  for (int i = 0; i < 6; ++i) ts.push_back(trajectory(3 + i, "t" + std::to_string(i)));
  fixtures::MockTransport cold([](const std::string& prompt) {
    const auto last = prompt.rfind("conversation[");
    const auto n = std::stoul(prompt.substr(last + 13));
    return fixtures::canned_answer(n);
  });
  const auto first = select_all_with_llm(ts, {}, endpoint(), &cache, cold);
  EXPECT_EQ(cold.calls(), 6);
  fixtures::MockTransport warm({{500, "must not be called"}});
  const auto second = select_all_with_llm(ts, {}, endpoint(), &cache, warm);
  EXPECT_EQ(warm.calls(), 0);
  EXPECT_EQ(selections_to_jsonl(first), selections_to_jsonl(second));
}

TEST(SelectWithLlm, SendsBearerTokenFromEnvironment) {
  ::setenv("CRITSEL_TEST_KEY", "sk-test", 1);
  auto cfg = endpoint();
  cfg.api_key_env_var = "CRITSEL_TEST_KEY";
  fixtures::MockTransport mock({{200, fixtures::completion_body(fixtures::canned_answer(4))}});
  select_with_llm(trajectory(4), {}, cfg, nullptr, mock);
  bool found = false;
  for (const auto& [k, v] : mock.last_headers()) found = found || (k == "Authorization" && v == "Bearer sk-test");
  EXPECT_TRUE(found);
  ::unsetenv("CRITSEL_TEST_KEY");
}

TEST(Endpoint, CompletionsUrl) {
  EndpointConfig cfg;
  cfg.base_url = "http://host:1/v1/";
  EXPECT_EQ(cfg.completions_url(), "http://host:1/v1/chat/completions");
  cfg.base_url = "http://host:1/v1/chat/completions";
  EXPECT_EQ(cfg.completions_url(), "http://host:1/v1/chat/completions");
  cfg.max_in_flight = 0;
  EXPECT_EQ(class_of([&] { cfg.validate(); }), ErrorClass::ConfigurationError);
}

TEST(HttpTransport, TalksToLocalServer) {
  httplib::Server server;
  int hits = 0;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    const auto body = nlohmann::json::parse(req.body);
    EXPECT_EQ(body.at("model"), "test-model");
    EXPECT_EQ(req.get_header_value("Authorization"), "");
    res.set_content(fixtures::completion_body(fixtures::canned_answer(5)), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  auto cfg = endpoint(0);
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  cfg.api_key_env_var = "CRITSEL_UNSET_KEY_FOR_TEST";
  HttpTransport transport;
  SelectorPromptConfig prompt;
  prompt.ratio = 0.4;
  const auto s = select_with_llm(trajectory(5), prompt, cfg, nullptr, transport);
  server.stop();
  worker.join();
  EXPECT_EQ(hits, 1);
  EXPECT_EQ(s.indices, (std::vector<std::size_t>{0, 4}));
}

TEST(HttpTransport, UnreachableHostIsTransportError) {
  HttpTransport transport;
  EXPECT_EQ(class_of([&] {
              transport.post("http://127.0.0.1:1/v1/chat/completions", "{}", {}, std::chrono::milliseconds(500));
            }),
            ErrorClass::TransportError);
  EXPECT_EQ(class_of([&] { transport.post("ftp://x", "{}", {}, std::chrono::milliseconds(500)); }),
            ErrorClass::TransportError);
}

}  // namespace
}  // namespace critsel
