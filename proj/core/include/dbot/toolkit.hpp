#pragma once

#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dbot/gateway.hpp"

namespace dbot {

// Tool registry (categories-tools-APIs) with utilization specifications,
// cosine tool matching and a trainable relevance scorer.

struct ToolArg {
  std::string name;
  std::string type;
  bool required = true;
};

struct ToolSpec {
  std::string category;
  std::string tool;
  std::string api_name;
  std::string description;  // utilization specification
  std::vector<ToolArg> arg_schema;
};

enum class ToolStatus { ok, failed };

struct ToolCallResult {
  std::string api_name;
  std::map<std::string, std::string> request_args;
  std::string observation;
  ToolStatus status = ToolStatus::ok;
};

class ToolkitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Executor maps (api, args) to an observation. The scripted fixture variant
// looks up canonicalized (api, args) pairs; live adapters are user-supplied.
using ToolExecutor = std::function<std::string(
    const std::string& api, const std::map<std::string, std::string>& args)>;

ToolExecutor scripted_executor(
    std::map<std::string, std::string> fixtures);  // key = canonical call

std::string canonical_call(const std::string& api,
                           const std::map<std::string, std::string>& args);

class ToolRegistry {
 public:
  static ToolRegistry from_manifest_file(const std::string& path);
  static ToolRegistry from_manifest_json(const std::string& manifest_json);

  void register_tool(ToolSpec spec);  // throws DuplicateApi

  const std::vector<ToolSpec>& tools() const { return tools_; }
  bool empty() const { return tools_.empty(); }
  const ToolSpec* find(const std::string& api_name) const;

  ToolCallResult invoke(const std::string& api_name,
                        const std::map<std::string, std::string>& args,
                        const ToolExecutor& executor) const;

 private:
  std::vector<ToolSpec> tools_;
};

double sim(const std::string& context, const ToolSpec& tool,
           LlmGateway& gateway);

struct MatchedTool {
  ToolSpec spec;
  double score = 0.0;
};

// Top-k by cosine similarity, descending, ties by ascending api_name.
std::vector<MatchedTool> match_tools(const std::string& context,
                                     const ToolRegistry& registry,
                                     LlmGateway& gateway, std::size_t k);

// Prompt block for the selected tools: name, description, argument list.
std::string render_tool_prompt(const std::vector<MatchedTool>& tools);

struct LabeledPair {
  std::string context;   // s_i
  std::string tool_api;  // t_j
  int label = 0;         // y_ij
};

struct MatcherModel {
  std::vector<double> weights;  // length 2d + 1, bias last
  std::size_t dim = 0;          // embedding dimension d
  double final_loss = 0.0;
  bool degenerate_dataset = false;  // single label class seen during training
};

double sigmoid(double x);

// Cross-entropy loss and its analytic gradient over precomputed feature rows.
double matcher_loss(const std::vector<double>& weights,
                    const std::vector<std::vector<double>>& features,
                    const std::vector<int>& labels);
std::vector<double> matcher_gradient(
    const std::vector<double>& weights,
    const std::vector<std::vector<double>>& features,
    const std::vector<int>& labels);

// Full-batch gradient descent on the sigmoid scoring head; embeddings stay
// frozen.
MatcherModel train_matcher(const std::vector<LabeledPair>& dataset,
                           const ToolRegistry& registry, LlmGateway& gateway,
                           int epochs, double learning_rate);

double predict_relevance(const MatcherModel& model, const std::string& context,
                         const ToolSpec& tool, LlmGateway& gateway);

std::vector<LabeledPair> load_labeled_pairs(const std::string& jsonl_path);

}  // namespace dbot
