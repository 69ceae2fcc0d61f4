#include "dbot/bench.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

namespace dbot {

using nlohmann::json;
namespace fs = std::filesystem;

Application parse_application(const std::string& name) {
  if (name == "IoT") return Application::iot;
  if (name == "E-Commerce") return Application::e_commerce;
  if (name == "Financial") return Application::financial;
  if (name == "BusinessIntel") return Application::business_intel;
  if (name == "FileSharing") return Application::file_sharing;
  if (name == "SocialMedia") return Application::social_media;
  throw BenchError("unknown application: " + name);
}

std::string application_name(Application app) {
  switch (app) {
    case Application::iot: return "IoT";
    case Application::e_commerce: return "E-Commerce";
    case Application::financial: return "Financial";
    case Application::business_intel: return "BusinessIntel";
    case Application::file_sharing: return "FileSharing";
    case Application::social_media: return "SocialMedia";
  }
  throw BenchError("unknown application enum value");
}

const std::array<std::string, 10>& root_cause_vocabulary() {
  static const std::array<std::string, 10> vocab = {
      "sync_commits",      "many_inserts",      "high_updates",
      "many_deletes",      "index_missing",     "redundant_indexes",
      "large_data_insert", "large_data_fetch",  "poor_join",
      "correlated_subquery"};
  return vocab;
}

AccResult accuracy(const std::vector<std::string>& predicted,
                   const std::vector<std::string>& labels,
                   const AccParams& params) {
  if (labels.empty()) throw EmptyLabels();
  if (params.sigma < 0.0) throw BenchError("accuracy: sigma must be >= 0");

  AccResult result;
  for (const auto& p : predicted) {
    std::string key = normalize_metric_name(p);
    bool seen = false;
    for (const auto& s : result.scored)
      if (normalize_metric_name(s) == key) seen = true;
    if (!seen) result.scored.push_back(p);
  }
  if (result.scored.size() > params.max_causes)
    result.scored.resize(params.max_causes);

  std::vector<std::string> label_keys;
  for (const auto& l : labels) {
    std::string key = normalize_metric_name(l);
    if (std::find(label_keys.begin(), label_keys.end(), key) == label_keys.end())
      label_keys.push_back(key);
  }
  result.a_a = label_keys.size();
  for (const auto& p : result.scored) {
    if (std::find(label_keys.begin(), label_keys.end(),
                  normalize_metric_name(p)) != label_keys.end())
      ++result.a_c;
    else
      ++result.a_w;
  }

  double ac = static_cast<double>(result.a_c);
  double aw = static_cast<double>(result.a_w);
  double aa = static_cast<double>(result.a_a);
  if (aa > 0.0 && ac >= params.sigma * aw)
    result.acc = (ac - params.sigma * aw) / aa;
  else
    result.acc = 0.0;
  result.acc = std::clamp(result.acc, 0.0, 1.0);
  return result;
}

namespace {

std::string resolve(const fs::path& base, const std::string& rel) {
  if (rel.empty()) return rel;
  fs::path p(rel);
  if (p.is_absolute()) return p.string();
  return (base / p).string();
}

}  // namespace

std::vector<BenchmarkCase> load_cases(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw BenchError("cannot open case file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  json doc = json::parse(buf.str(), nullptr, false);
  if (doc.is_discarded() || !doc.is_array())
    throw BenchError("case file must hold a JSON array: " + path);

  const fs::path base = fs::path(path).parent_path();
  const auto& vocab = root_cause_vocabulary();
  std::vector<BenchmarkCase> cases;
  for (const auto& item : doc) {
    std::string id = item.value("case_id", "<missing id>");
    BenchmarkCase c;
    c.case_id = id;
    try {
      if (!item.contains("case_id")) throw BenchError("missing case_id");
      c.application = parse_application(item.at("application").get<std::string>());
      c.description = item.at("description").get<std::string>();
      for (const auto& l : item.at("labels"))
        c.labels.push_back(l.get<std::string>());
      c.start_time = item.at("start_time").get<std::int64_t>();
      c.end_time = item.at("end_time").get<std::int64_t>();
      const auto& fx = item.at("fixtures");
      c.fixtures.rules_path = resolve(base, fx.at("rules").get<std::string>());
      c.fixtures.tools_path = resolve(base, fx.at("tools").get<std::string>());
      c.fixtures.tool_fixtures_path =
          resolve(base, fx.value("tool_fixtures", ""));
      c.fixtures.knowledge_path = resolve(base, fx.value("knowledge", ""));
      c.fixtures.metrics_path = resolve(base, fx.value("metrics", ""));
      if (item.contains("heval")) c.heval = item.at("heval").get<double>();
    } catch (const std::exception& e) {
      throw SchemaViolation(id, e.what());
    }
    if (c.labels.empty()) throw SchemaViolation(id, "labels must be non-empty");
    for (const auto& l : c.labels) {
      if (std::find(vocab.begin(), vocab.end(), normalize_metric_name(l)) ==
          vocab.end())
        throw SchemaViolation(id, "label outside the root-cause vocabulary: " + l);
    }
    if (c.start_time >= c.end_time)
      throw SchemaViolation(id, "start_time must precede end_time");
    cases.push_back(std::move(c));
  }
  return cases;
}

namespace {

std::map<std::string, std::string> load_tool_fixtures(const std::string& path) {
  if (path.empty()) return {};
  std::ifstream in(path);
  if (!in) throw BenchError("cannot open tool fixtures: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  json doc = json::parse(buf.str());
  std::map<std::string, std::string> fixtures;
  for (const auto& [k, v] : doc.items()) fixtures[k] = v.get<std::string>();
  return fixtures;
}

CaseResult run_case(const BenchmarkCase& c, const BenchConfig& config) {
  CaseResult result;
  result.case_id = c.case_id;
  result.application = c.application;
  result.heval = c.heval;
  try {
    ScriptedGateway gateway = ScriptedGateway::from_rules_file(
        c.fixtures.rules_path, config.embed_dim, config.seed);
    ToolRegistry registry = ToolRegistry::from_manifest_file(c.fixtures.tools_path);
    ToolExecutor executor =
        scripted_executor(load_tool_fixtures(c.fixtures.tool_fixtures_path));
    std::vector<KnowledgeChunk> chunks;
    if (!c.fixtures.knowledge_path.empty())
      chunks = load_knowledge_file(c.fixtures.knowledge_path);

    AnomalyCase anomaly;
    anomaly.description = c.description;
    anomaly.query.start_time = c.start_time;
    anomaly.query.end_time = c.end_time;

    ExpertProfile analyst;
    analyst.name = "Analyst";

    CollabSession session(gateway, registry, executor, chunks, config.collab);
    CollabResult collab = session.run(anomaly, {analyst});
    result.predicted = collab.report.root_causes;

    AccResult acc = accuracy(result.predicted, c.labels, config.acc);
    result.a_c = acc.a_c;
    result.a_a = acc.a_a;
    result.a_w = acc.a_w;
    result.acc = acc.acc;
  } catch (const std::exception& e) {
    result.errored = true;
    result.error = e.what();
  }
  return result;
}

}  // namespace

BenchReport run_benchmark(const std::vector<BenchmarkCase>& cases,
                          const BenchConfig& config) {
  BenchReport report;
  report.results.resize(cases.size());

  if (config.parallel && cases.size() > 1) {
    std::vector<std::future<CaseResult>> futures;
    futures.reserve(cases.size());
    for (const auto& c : cases)
      futures.push_back(std::async(std::launch::async, run_case, std::cref(c),
                                   std::cref(config)));
    for (std::size_t i = 0; i < futures.size(); ++i)
      report.results[i] = futures[i].get();
  } else {
    for (std::size_t i = 0; i < cases.size(); ++i)
      report.results[i] = run_case(cases[i], config);
  }

  std::map<std::string, std::pair<double, std::size_t>> per_app;
  double total = 0.0;
  std::size_t scored = 0;
  for (const auto& r : report.results) {
    if (r.errored) {
      report.any_errors = true;
      continue;
    }
    auto& [sum, n] = per_app[application_name(r.application)];
    sum += r.acc;
    ++n;
    total += r.acc;
    ++scored;
  }
  for (const auto& [app, agg] : per_app)
    report.mean_acc_by_application[app] = agg.first / static_cast<double>(agg.second);
  report.mean_acc = scored ? total / static_cast<double>(scored) : 0.0;
  return report;
}

namespace {

std::string join(const std::vector<std::string>& items, const char* sep) {
  std::ostringstream out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out << sep;
    out << items[i];
  }
  return out.str();
}

std::string fmt(double v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4) << v;
  return out.str();
}

}  // namespace

std::string results_to_csv(const BenchReport& report) {
  std::ostringstream out;
  out << "case_id,application,predicted,A_c,A_a,A_w,acc,heval,error\n";
  for (const auto& r : report.results) {
    out << r.case_id << "," << application_name(r.application) << ","
        << join(r.predicted, ";") << "," << r.a_c << "," << r.a_a << ","
        << r.a_w << "," << fmt(r.acc) << ","
        << (r.heval ? fmt(*r.heval) : std::string()) << ","
        << (r.errored ? r.error : std::string()) << "\n";
  }
  out << "mean_acc,,,,,," << fmt(report.mean_acc) << ",,\n";
  return out.str();
}

std::string results_to_markdown(const BenchReport& report) {
  std::ostringstream out;
  out << "| Case | Application | Predicted | A_c | A_a | A_w | Acc |\n"
      << "|---|---|---|---|---|---|---|\n";
  for (const auto& r : report.results) {
    out << "| " << r.case_id << " | " << application_name(r.application)
        << " | " << (r.errored ? "error: " + r.error : join(r.predicted, "; "))
        << " | " << r.a_c << " | " << r.a_a << " | " << r.a_w << " | "
        << fmt(r.acc) << " |\n";
  }
  out << "\n**Mean Acc:** " << fmt(report.mean_acc) << "\n\n"
      << "| Application | Mean Acc |\n|---|---|\n";
  for (const auto& [app, acc] : report.mean_acc_by_application)
    out << "| " << app << " | " << fmt(acc) << " |\n";
  return out.str();
}

}  // namespace dbot
