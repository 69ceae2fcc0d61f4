#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dbot {

// Every model interaction in the engine goes through LlmGateway. No other
// module holds endpoint configuration.

struct PromptRequest {
  std::string role_preamble;
  std::vector<std::pair<std::string, std::string>> messages;  // (speaker, text)
  double temperature = 0.0;
  int max_tokens = 2048;

  // Canonical textual form used for rule matching and logging.
  std::string render() const;
};

enum class FinishReason { complete, truncated, error };

struct Completion {
  std::string text;
  FinishReason finish_reason = FinishReason::complete;
  int token_count = 0;

  bool ok() const { return finish_reason != FinishReason::error; }
};

struct ScriptedRule {
  std::string matcher;   // substring, or regex when is_regex is set
  bool is_regex = false;
  std::string response;
  std::optional<int> max_uses;
};

class GatewayError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyTextError : public GatewayError {
 public:
  EmptyTextError() : GatewayError("embed: text must be non-empty") {}
};

class LlmGateway {
 public:
  virtual ~LlmGateway() = default;

  virtual Completion complete(const PromptRequest& request) = 0;

  // Deterministic for a given backend: same text yields the same vector,
  // L2-normalized, fixed dimension.
  virtual std::vector<double> embed(const std::string& text) = 0;

  virtual std::size_t embedding_dim() const = 0;
};

// Deterministic backend for tests and offline runs. Rules are evaluated in
// declaration order; the first match wins. Embeddings hash character n-grams
// into d buckets and L2-normalize.
class ScriptedGateway final : public LlmGateway {
 public:
  explicit ScriptedGateway(std::vector<ScriptedRule> rules = {},
                           std::size_t dim = 64, std::uint64_t seed = 0);

  static ScriptedGateway from_rules_file(const std::string& path,
                                         std::size_t dim = 64,
                                         std::uint64_t seed = 0);

  // Movable so factory results can be wrapped (the mutex is not moved).
  ScriptedGateway(ScriptedGateway&& other) noexcept;
  ScriptedGateway& operator=(ScriptedGateway&&) = delete;

  Completion complete(const PromptRequest& request) override;
  std::vector<double> embed(const std::string& text) override;
  std::size_t embedding_dim() const override { return dim_; }

  void add_rule(ScriptedRule rule);

  // Rendered prompts seen so far, in call order. Used by tests to assert on
  // prompt contents.
  std::vector<std::string> captured_prompts() const;

 private:
  struct RuleState {
    ScriptedRule rule;
    int uses_left;  // -1 = unlimited
  };

  mutable std::mutex mu_;
  std::vector<RuleState> rules_;
  std::vector<std::string> captured_;
  std::size_t dim_ = 64;
  std::uint64_t seed_ = 0;
};

// OpenAI-compatible chat-completion backend. Endpoint, key and model come
// from DBOT_LLM_ENDPOINT / DBOT_LLM_KEY / DBOT_LLM_MODEL unless overridden.
class HttpGateway final : public LlmGateway {
 public:
  struct Config {
    std::string endpoint;  // e.g. http://host:port
    std::string api_key;
    std::string model;
    int max_retries = 3;
    std::size_t embed_dim = 64;  // fallback n-gram embeddings share this dim
  };

  explicit HttpGateway(Config config);
  static Config config_from_env();

  Completion complete(const PromptRequest& request) override;
  std::vector<double> embed(const std::string& text) override;
  std::size_t embedding_dim() const override { return config_.embed_dim; }

 private:
  Config config_;
};

// Shared deterministic n-gram embedding used by both backends (the HTTP
// backend has no embedding endpoint in the chat wire format).
std::vector<double> ngram_embed(const std::string& text, std::size_t dim,
                                std::uint64_t seed);

double cosine(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace dbot
