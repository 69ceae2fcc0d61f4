#include <doctest.h>

#include <cmath>
#include <thread>

#include "dbot/gateway.hpp"

using namespace dbot;

namespace {

PromptRequest make_request(const std::string& text) {
  PromptRequest req;
  req.messages = {{"user", text}};
  return req;
}

}  // namespace

TEST_CASE("scripted gateway returns the first matching rule") {
  ScriptedGateway gw({{"Summarize the provided chunk", false, "S1", {}}});
  auto c = gw.complete(make_request("Summarize the provided chunk briefly."));
  CHECK(c.finish_reason == FinishReason::complete);
  CHECK(c.text == "S1");
  CHECK(c.token_count > 0);
}

TEST_CASE("empty rule set yields a NoMatchingRule error") {
  ScriptedGateway gw;
  auto c = gw.complete(make_request("anything"));
  CHECK(c.finish_reason == FinishReason::error);
  CHECK(c.text.find("NoMatchingRule") != std::string::npos);
  CHECK(c.text.find("anything") != std::string::npos);  // names the prefix
}

TEST_CASE("two matching rules resolve by declaration order") {
  // Oracle: a sequential scan over the rule list stops at the first hit.
  std::vector<ScriptedRule> rules = {{"alpha", false, "first", {}},
                                     {"alpha", false, "second", {}}};
  std::string expected;
  for (const auto& r : rules) {
    if (std::string("prompt with alpha inside").find(r.matcher) !=
        std::string::npos) {
      expected = r.response;
      break;
    }
  }
  ScriptedGateway gw(rules);
  CHECK(gw.complete(make_request("prompt with alpha inside")).text == expected);
  CHECK(expected == "first");
}

TEST_CASE("max_uses exhausts a rule and falls through") {
  ScriptedGateway gw({{"hit", false, "limited", 1}, {"hit", false, "after", {}}});
  CHECK(gw.complete(make_request("hit")).text == "limited");
  CHECK(gw.complete(make_request("hit")).text == "after");
}

TEST_CASE("regex matchers are supported") {
  ScriptedGateway gw({{"VOTE for leaf [0-9]+", true, "VOTE: 2", {}}});
  CHECK(gw.complete(make_request("VOTE for leaf 17")).text == "VOTE: 2");
  CHECK(gw.complete(make_request("VOTE for leaf x")).finish_reason ==
        FinishReason::error);
}

TEST_CASE("requests without messages are rejected") {
  ScriptedGateway gw({{"x", false, "y", {}}});
  PromptRequest req;
  CHECK(gw.complete(req).finish_reason == FinishReason::error);
}

TEST_CASE("render includes the preamble and each message") {
  PromptRequest req;
  req.role_preamble = "You are an expert.";
  req.messages = {{"user", "hello"}, {"assistant", "hi"}};
  auto text = req.render();
  CHECK(text.find("You are an expert.") != std::string::npos);
  CHECK(text.find("[user] hello") != std::string::npos);
  CHECK(text.find("[assistant] hi") != std::string::npos);
}

TEST_CASE("embeddings are deterministic and unit length") {
  ScriptedGateway gw;
  auto a = gw.embed("x");
  auto b = gw.embed("x");
  CHECK(a == b);
  CHECK(a.size() == 64);
  for (const auto& text : {"x", "cpu usage", "a longer sentence about io"}) {
    auto v = gw.embed(text);
    double norm = 0.0;
    for (double x : v) norm += x * x;
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("embed rejects empty text") {
  ScriptedGateway gw;
  CHECK_THROWS_AS(gw.embed(""), EmptyTextError);
}

TEST_CASE("n-gram embeddings keep related texts closer than unrelated ones") {
  // Derived with this backend itself before being relied on by fixtures: the
  // shared character n-grams of the prefix dominate the similarity.
  ScriptedGateway gw;
  double related = cosine(gw.embed("cpu usage"), gw.embed("cpu usage high"));
  double unrelated = cosine(gw.embed("cpu usage"), gw.embed("disk io"));
  CHECK(related > unrelated);
}

TEST_CASE("captured prompts record every rendered request in order") {
  ScriptedGateway gw({{"a", false, "ra", {}}});
  gw.complete(make_request("a one"));
  gw.complete(make_request("b two"));
  auto captured = gw.captured_prompts();
  REQUIRE(captured.size() == 2);
  CHECK(captured[0].find("a one") != std::string::npos);
  CHECK(captured[1].find("b two") != std::string::npos);
}

TEST_CASE("concurrent completions never corrupt rule counters") {
  ScriptedGateway gw({{"ping", false, "pong", 64}});
  std::vector<std::thread> threads;
  std::atomic<int> hits{0};
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&gw, &hits] {
      for (int i = 0; i < 8; ++i)
        if (gw.complete(make_request("ping")).ok()) ++hits;
    });
  }
  for (auto& t : threads) t.join();
  CHECK(hits == 64);  // exactly max_uses successes across all threads
  CHECK(gw.complete(make_request("ping")).finish_reason == FinishReason::error);
}

TEST_CASE("cosine handles constructed fixtures") {
  CHECK(cosine({1, 0}, {1, 0}) == doctest::Approx(1.0));
  CHECK(cosine({1, 0}, {0, 1}) == doctest::Approx(0.0));
  CHECK(cosine({1, 2}, {-1, -2}) == doctest::Approx(-1.0));
}
