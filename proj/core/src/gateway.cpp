#include "dbot/gateway.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace dbot {

using nlohmann::json;

std::string PromptRequest::render() const {
  std::ostringstream out;
  if (!role_preamble.empty()) out << role_preamble << "\n";
  for (const auto& [speaker, text] : messages) {
    out << "[" << speaker << "] " << text << "\n";
  }
  return out.str();
}

ScriptedGateway::ScriptedGateway(std::vector<ScriptedRule> rules,
                                 std::size_t dim, std::uint64_t seed)
    : dim_(dim), seed_(seed) {
  for (auto& r : rules) add_rule(std::move(r));
}

void ScriptedGateway::add_rule(ScriptedRule rule) {
  std::lock_guard lock(mu_);
  int uses = rule.max_uses ? *rule.max_uses : -1;
  rules_.push_back(RuleState{std::move(rule), uses});
}

ScriptedGateway::ScriptedGateway(ScriptedGateway&& other) noexcept {
  std::lock_guard<std::mutex> lock(other.mu_);
  rules_ = std::move(other.rules_);
  captured_ = std::move(other.captured_);
  dim_ = other.dim_;
  seed_ = other.seed_;
}

ScriptedGateway ScriptedGateway::from_rules_file(const std::string& path,
                                                 std::size_t dim,
                                                 std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw GatewayError("cannot open rules file: " + path);
  json doc = json::parse(in);
  std::vector<ScriptedRule> rules;
  for (const auto& item : doc) {
    ScriptedRule r;
    r.matcher = item.at("matcher").get<std::string>();
    r.response = item.at("response").get<std::string>();
    if (item.contains("regex")) r.is_regex = item["regex"].get<bool>();
    if (item.contains("max_uses")) r.max_uses = item["max_uses"].get<int>();
    rules.push_back(std::move(r));
  }
  return ScriptedGateway(std::move(rules), dim, seed);
}

Completion ScriptedGateway::complete(const PromptRequest& request) {
  if (request.messages.empty())
    return {"empty request: no messages", FinishReason::error, 0};
  const std::string prompt = request.render();
  std::lock_guard lock(mu_);
  captured_.push_back(prompt);
  for (auto& state : rules_) {
    if (state.uses_left == 0) continue;
    bool hit = false;
    if (state.rule.is_regex) {
      hit = std::regex_search(prompt, std::regex(state.rule.matcher));
    } else {
      hit = prompt.find(state.rule.matcher) != std::string::npos;
    }
    if (hit) {
      if (state.uses_left > 0) --state.uses_left;
      int tokens = static_cast<int>(state.rule.response.size() / 4) + 1;
      return {state.rule.response, FinishReason::complete, tokens};
    }
  }
  std::string prefix = prompt.substr(0, 120);
  return {"NoMatchingRule: no scripted rule matches prompt starting with: " +
              prefix,
          FinishReason::error, 0};
}

std::vector<double> ScriptedGateway::embed(const std::string& text) {
  if (text.empty()) throw EmptyTextError();
  return ngram_embed(text, dim_, seed_);
}

std::vector<std::string> ScriptedGateway::captured_prompts() const {
  std::lock_guard lock(mu_);
  return captured_;
}

namespace {

// splitmix64: cheap, stable across platforms.
std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::vector<double> ngram_embed(const std::string& text, std::size_t dim,
                                std::uint64_t seed) {
  std::vector<double> v(dim, 0.0);
  const std::size_t n = 3;
  // Pad so short texts still produce n-grams.
  std::string padded = "^" + text + "$";
  for (std::size_t i = 0; i + n <= padded.size(); ++i) {
    std::uint64_t h = seed;
    for (std::size_t j = 0; j < n; ++j) {
      h = mix64(h ^ static_cast<unsigned char>(padded[i + j]));
    }
    std::size_t bucket = h % dim;
    // Signed contribution keeps buckets from saturating uniformly.
    v[bucket] += (mix64(h) & 1) ? 1.0 : -1.0;
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0.0) {
    v[mix64(seed) % dim] = 1.0;
    return v;
  }
  for (double& x : v) x /= norm;
  return v;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw GatewayError("cosine: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

HttpGateway::HttpGateway(Config config) : config_(std::move(config)) {
  if (config_.endpoint.empty())
    throw GatewayError("HttpGateway: endpoint not configured");
}

HttpGateway::Config HttpGateway::config_from_env() {
  Config c;
  if (const char* e = std::getenv("DBOT_LLM_ENDPOINT")) c.endpoint = e;
  if (const char* k = std::getenv("DBOT_LLM_KEY")) c.api_key = k;
  if (const char* m = std::getenv("DBOT_LLM_MODEL")) c.model = m;
  return c;
}

Completion HttpGateway::complete(const PromptRequest& request) {
  json body;
  body["model"] = config_.model;
  body["temperature"] = request.temperature;
  body["max_tokens"] = request.max_tokens;
  json msgs = json::array();
  if (!request.role_preamble.empty()) {
    msgs.push_back({{"role", "system"}, {"content", request.role_preamble}});
  }
  for (const auto& [speaker, text] : request.messages) {
    std::string role = (speaker == "assistant") ? "assistant" : "user";
    msgs.push_back({{"role", role}, {"content", text}});
  }
  body["messages"] = msgs;

  httplib::Client client(config_.endpoint);
  client.set_connection_timeout(10);
  client.set_read_timeout(120);
  httplib::Headers headers;
  if (!config_.api_key.empty())
    headers.emplace("Authorization", "Bearer " + config_.api_key);

  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    auto res = client.Post("/v1/chat/completions", headers, body.dump(),
                           "application/json");
    if (!res) continue;  // transient transport failure
    if (res->status >= 500) continue;
    if (res->status != 200) {
      return {"EndpointUnavailable: HTTP " + std::to_string(res->status) +
                  ": " + res->body,
              FinishReason::error, 0};
    }
    json reply = json::parse(res->body, nullptr, false);
    if (reply.is_discarded() || !reply.contains("choices") ||
        reply["choices"].empty()) {
      return {"EndpointUnavailable: malformed response", FinishReason::error,
              0};
    }
    const auto& choice = reply["choices"][0];
    std::string text = choice["message"]["content"].get<std::string>();
    std::string finish = choice.value("finish_reason", "stop");
    int tokens = 0;
    if (reply.contains("usage"))
      tokens = reply["usage"].value("completion_tokens", 0);
    FinishReason reason = FinishReason::complete;
    if (finish == "length") reason = FinishReason::truncated;
    return {std::move(text), reason, tokens};
  }
  return {"EndpointUnavailable: retries exhausted for " + config_.endpoint,
          FinishReason::error, 0};
}

std::vector<double> HttpGateway::embed(const std::string& text) {
  if (text.empty()) throw EmptyTextError();
  return ngram_embed(text, config_.embed_dim, 0);
}

}  // namespace dbot
