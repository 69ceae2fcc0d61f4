#include "dbot/toolkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace dbot {

using nlohmann::json;

std::string canonical_call(const std::string& api,
                           const std::map<std::string, std::string>& args) {
  std::ostringstream out;
  out << api << "(";
  bool first = true;
  for (const auto& [k, v] : args) {  // std::map keeps keys sorted
    if (!first) out << ",";
    out << k << "=" << v;
    first = false;
  }
  out << ")";
  return out.str();
}

ToolExecutor scripted_executor(std::map<std::string, std::string> fixtures) {
  return [fixtures = std::move(fixtures)](
             const std::string& api,
             const std::map<std::string, std::string>& args) -> std::string {
    auto it = fixtures.find(canonical_call(api, args));
    if (it == fixtures.end())
      throw ToolkitError("no fixture for call " + canonical_call(api, args));
    return it->second;
  };
}

void ToolRegistry::register_tool(ToolSpec spec) {
  if (spec.description.empty())
    throw ToolkitError("MalformedManifest: empty description for " +
                       spec.api_name);
  for (const auto& t : tools_) {
    if (t.category == spec.category && t.tool == spec.tool &&
        t.api_name == spec.api_name)
      throw ToolkitError("DuplicateApi: " + spec.category + "/" + spec.tool +
                         "/" + spec.api_name);
  }
  tools_.push_back(std::move(spec));
}

ToolRegistry ToolRegistry::from_manifest_json(const std::string& manifest_json) {
  json doc = json::parse(manifest_json, nullptr, false);
  if (doc.is_discarded() || !doc.is_array())
    throw ToolkitError("MalformedManifest: expected a JSON array");
  ToolRegistry registry;
  for (const auto& item : doc) {
    ToolSpec spec;
    try {
      spec.category = item.at("category").get<std::string>();
      spec.tool = item.at("tool").get<std::string>();
      spec.api_name = item.at("api").get<std::string>();
      spec.description = item.at("description").get<std::string>();
      if (item.contains("args")) {
        for (const auto& arg : item["args"]) {
          ToolArg a;
          a.name = arg.at("name").get<std::string>();
          a.type = arg.value("type", "string");
          a.required = arg.value("required", true);
          spec.arg_schema.push_back(std::move(a));
        }
      }
    } catch (const json::exception& e) {
      throw ToolkitError(std::string("MalformedManifest: ") + e.what());
    }
    registry.register_tool(std::move(spec));
  }
  return registry;
}

ToolRegistry ToolRegistry::from_manifest_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ToolkitError("cannot open tool manifest: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_manifest_json(buf.str());
}

const ToolSpec* ToolRegistry::find(const std::string& api_name) const {
  for (const auto& t : tools_)
    if (t.api_name == api_name) return &t;
  return nullptr;
}

ToolCallResult ToolRegistry::invoke(
    const std::string& api_name,
    const std::map<std::string, std::string>& args,
    const ToolExecutor& executor) const {
  const ToolSpec* spec = find(api_name);
  if (!spec) throw ToolkitError("UnknownApi: " + api_name);

  ToolCallResult result;
  result.api_name = api_name;
  result.request_args = args;

  // Schema violations fail the call without reaching the executor.
  for (const auto& arg : spec->arg_schema) {
    if (arg.required && !args.count(arg.name)) {
      result.status = ToolStatus::failed;
      result.observation = "missing required argument: " + arg.name;
      return result;
    }
  }
  for (const auto& [k, v] : args) {
    bool known = false;
    for (const auto& arg : spec->arg_schema)
      if (arg.name == k) known = true;
    if (!known) {
      result.status = ToolStatus::failed;
      result.observation = "unexpected argument: " + k;
      return result;
    }
  }

  try {
    result.observation = executor(api_name, args);
    result.status = ToolStatus::ok;
  } catch (const std::exception& e) {
    result.status = ToolStatus::failed;
    result.observation = std::string("tool execution failed: ") + e.what();
  }
  return result;
}

double sim(const std::string& context, const ToolSpec& tool,
           LlmGateway& gateway) {
  if (context.empty() || tool.description.empty())
    throw EmptyTextError();
  return cosine(gateway.embed(context), gateway.embed(tool.description));
}

std::vector<MatchedTool> match_tools(const std::string& context,
                                     const ToolRegistry& registry,
                                     LlmGateway& gateway, std::size_t k) {
  if (registry.empty()) throw ToolkitError("EmptyRegistry in match_tools");
  if (k < 1) throw ToolkitError("match_tools: k must be >= 1");
  std::vector<MatchedTool> scored;
  for (const auto& tool : registry.tools())
    scored.push_back({tool, sim(context, tool, gateway)});
  std::sort(scored.begin(), scored.end(),
            [](const MatchedTool& a, const MatchedTool& b) {
              if (a.score != b.score) return a.score > b.score;
              return a.spec.api_name < b.spec.api_name;
            });
  if (scored.size() > k) scored.resize(k);
  return scored;
}

std::string render_tool_prompt(const std::vector<MatchedTool>& tools) {
  std::ostringstream out;
  out << "Available tools:\n";
  for (const auto& t : tools) {
    out << "- " << t.spec.api_name << ": " << t.spec.description << " (args:";
    if (t.spec.arg_schema.empty()) out << " none";
    for (const auto& arg : t.spec.arg_schema)
      out << " " << arg.name << ":" << arg.type
          << (arg.required ? "" : "?");
    out << ")\n";
  }
  return out.str();
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

namespace {

double dot_with_bias(const std::vector<double>& weights,
                     const std::vector<double>& features) {
  double z = weights.back();  // bias
  for (std::size_t i = 0; i < features.size(); ++i) z += weights[i] * features[i];
  return z;
}

}  // namespace

double matcher_loss(const std::vector<double>& weights,
                    const std::vector<std::vector<double>>& features,
                    const std::vector<int>& labels) {
  constexpr double kEps = 1e-12;  // clamp away from log(0)
  double loss = 0.0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    double p = sigmoid(dot_with_bias(weights, features[i]));
    p = std::min(1.0 - kEps, std::max(kEps, p));
    loss -= labels[i] ? std::log(p) : std::log(1.0 - p);
  }
  return loss;
}

std::vector<double> matcher_gradient(
    const std::vector<double>& weights,
    const std::vector<std::vector<double>>& features,
    const std::vector<int>& labels) {
  std::vector<double> grad(weights.size(), 0.0);
  for (std::size_t i = 0; i < features.size(); ++i) {
    double p = sigmoid(dot_with_bias(weights, features[i]));
    double err = p - static_cast<double>(labels[i]);
    for (std::size_t j = 0; j < features[i].size(); ++j)
      grad[j] += err * features[i][j];
    grad.back() += err;
  }
  return grad;
}

MatcherModel train_matcher(const std::vector<LabeledPair>& dataset,
                           const ToolRegistry& registry, LlmGateway& gateway,
                           int epochs, double learning_rate) {
  if (dataset.empty()) throw ToolkitError("train_matcher: dataset is empty");

  const std::size_t d = gateway.embedding_dim();
  std::vector<std::vector<double>> features;
  std::vector<int> labels;
  bool saw_pos = false, saw_neg = false;
  for (const auto& pair : dataset) {
    const ToolSpec* spec = registry.find(pair.tool_api);
    if (!spec)
      throw ToolkitError("train_matcher: unregistered tool " + pair.tool_api);
    auto ctx = gateway.embed(pair.context);
    auto tool = gateway.embed(spec->description);
    std::vector<double> row;
    row.reserve(2 * d);
    row.insert(row.end(), ctx.begin(), ctx.end());
    row.insert(row.end(), tool.begin(), tool.end());
    features.push_back(std::move(row));
    labels.push_back(pair.label ? 1 : 0);
    (pair.label ? saw_pos : saw_neg) = true;
  }

  MatcherModel model;
  model.dim = d;
  model.weights.assign(2 * d + 1, 0.0);
  model.degenerate_dataset = !(saw_pos && saw_neg);

  double loss = matcher_loss(model.weights, features, labels);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    auto grad = matcher_gradient(model.weights, features, labels);
    for (std::size_t j = 0; j < model.weights.size(); ++j)
      model.weights[j] -= learning_rate * grad[j];
    loss = matcher_loss(model.weights, features, labels);
  }
  model.final_loss = loss;
  return model;
}

double predict_relevance(const MatcherModel& model, const std::string& context,
                         const ToolSpec& tool, LlmGateway& gateway) {
  auto ctx = gateway.embed(context);
  auto desc = gateway.embed(tool.description);
  if (ctx.size() != model.dim || desc.size() != model.dim)
    throw ToolkitError("predict_relevance: embedding dimension mismatch");
  std::vector<double> row;
  row.reserve(2 * model.dim);
  row.insert(row.end(), ctx.begin(), ctx.end());
  row.insert(row.end(), desc.begin(), desc.end());
  return sigmoid(dot_with_bias(model.weights, row));
}

std::vector<LabeledPair> load_labeled_pairs(const std::string& jsonl_path) {
  std::ifstream in(jsonl_path);
  if (!in) throw ToolkitError("cannot open labeled pairs file: " + jsonl_path);
  std::vector<LabeledPair> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json doc = json::parse(line);
    out.push_back({doc.at("context").get<std::string>(),
                   doc.at("tool_api").get<std::string>(),
                   doc.at("label").get<int>()});
  }
  return out;
}

}  // namespace dbot
