#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dbot/bench.hpp"
#include "dbot/collab.hpp"
#include "dbot/doc_learning.hpp"
#include "dbot/gateway.hpp"
#include "dbot/retrieval.hpp"
#include "dbot/toolkit.hpp"
#include "dbot/tree_search.hpp"

namespace fs = std::filesystem;
using namespace dbot;

namespace {

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::unique_ptr<LlmGateway> make_gateway(const std::string& rules_path,
                                         std::uint64_t seed) {
  if (!rules_path.empty()) {
    return std::make_unique<ScriptedGateway>(
        ScriptedGateway::from_rules_file(rules_path, 64, seed));
  }
  return std::make_unique<HttpGateway>(HttpGateway::config_from_env());
}

// Slug usable as a file name for per-expert transcripts.
std::string slug(const std::string& name) {
  std::string out;
  for (char c : name)
    out += (std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
  return out;
}

int cmd_doc2knowledge(const std::string& docs_dir, const std::string& rules_path,
                      const std::string& out_dir, std::uint64_t seed) {
  auto gateway = make_gateway(rules_path, seed);

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(docs_dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension();
    if (ext == ".md" || ext == ".txt") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    std::cerr << "no .md/.txt documents in " << docs_dir << "\n";
    return 1;
  }

  std::vector<KnowledgeChunk> kept;
  std::vector<KnowledgeChunk> manual_queue;
  std::size_t skipped = 0;
  for (const auto& file : files) {
    auto blocks = split_chapters(read_file(file));
    auto summaries = build_summary_tree(blocks, *gateway);
    auto extraction = extract_knowledge(blocks, summaries, *gateway);
    kept.insert(kept.end(), extraction.kept.begin(), extraction.kept.end());
    manual_queue.insert(manual_queue.end(), extraction.manual_queue.begin(),
                        extraction.manual_queue.end());
    skipped += extraction.skipped_blocks.size();
  }

  auto clusters = cluster_chunks(kept, *gateway);

  fs::path out(out_dir);
  write_file(out / "knowledge.json", chunks_to_json(kept));
  write_file(out / "clusters.json", clusters_to_json(clusters));
  write_file(out / "manual_queue.json", chunks_to_json(manual_queue));

  std::cout << "documents: " << files.size() << "\nchunks: " << kept.size()
            << "\nclusters: " << clusters.size()
            << "\nmanual queue: " << manual_queue.size()
            << "\nskipped blocks: " << skipped << "\n";
  return 0;
}

int cmd_diagnose(const std::string& knowledge_path, const std::string& tools_path,
                 const std::string& metrics_path, const std::string& rules_path,
                 const std::string& alert_path, std::int64_t start,
                 std::int64_t end, std::uint64_t seed, int max_turns,
                 int experts, const std::string& out_dir) {
  ToolRegistry registry;
  if (!tools_path.empty())
    registry = ToolRegistry::from_manifest_file(tools_path);
  std::vector<KnowledgeChunk> chunks;
  if (!knowledge_path.empty()) chunks = load_knowledge_file(knowledge_path);

  AnomalyCase anomaly;
  if (!alert_path.empty()) {
    anomaly = load_alert_file(alert_path);
  } else {
    anomaly.description = "anomaly window under investigation";
  }
  if (start > 0) anomaly.query.start_time = start;
  if (end > 0) anomaly.query.end_time = end;
  if (anomaly.query.start_time >= anomaly.query.end_time) {
    std::cerr << "invalid anomaly window: provide --alert or --start/--end\n";
    return 1;
  }

  auto gateway = make_gateway(rules_path, seed);

  if (!metrics_path.empty()) {
    auto series = load_metric_series(metrics_path);
    std::int64_t span = anomaly.query.end_time - anomaly.query.start_time;
    std::vector<MetricSeries> reference, window;
    for (const auto& s : series) {
      MetricSeries ref = s, win = s;
      ref.values = window_values(s, anomaly.query.start_time - span,
                                 anomaly.query.start_time - 1);
      win.values =
          window_values(s, anomaly.query.start_time, anomaly.query.end_time);
      ref.timestamps.clear();
      win.timestamps.clear();
      reference.push_back(std::move(ref));
      window.push_back(std::move(win));
    }
    auto detected = detect_abnormal_metrics(reference, window, 0.3);
    anomaly.query.metrics = detected.metrics;
  }

  CollabConfig config;
  config.search.max_turns = max_turns;

  // Expert roster: clusters seed the profiles when more than one expert is
  // requested; otherwise a single analyst sees everything.
  std::vector<ExpertProfile> roster;
  if (experts > 1 && !chunks.empty()) {
    auto clusters = cluster_chunks(chunks, *gateway);
    roster = prepare_experts(clusters, chunks, registry, *gateway);
    if (static_cast<int>(roster.size()) > experts) roster.resize(experts);
    roster = assign_experts(anomaly.description, roster, *gateway,
                            config.assign_fallback_top);
  }
  if (roster.empty()) {
    ExpertProfile analyst;
    analyst.name = "Analyst";
    roster.push_back(std::move(analyst));
  }

  CollabSession session(*gateway, registry, scripted_executor({}), chunks,
                        config);
  CollabResult result = session.run(anomaly, roster);

  fs::path out(out_dir);
  write_file(out / "report.md", report_to_markdown(result.report));
  write_file(out / "report.json", report_to_json(result.report));
  write_file(out / "bus.jsonl", bus_log_to_jsonl(result.bus_log));
  for (const auto& er : result.expert_results) {
    write_file(out / "transcripts" / (slug(er.expert) + ".jsonl"),
               transcript_to_jsonl(er.outcome.transcript));
  }

  std::cout << "root causes: " << result.report.root_causes.size() << "\n";
  for (const auto& c : result.report.root_causes) std::cout << "- " << c << "\n";
  bool conclusive = false;
  for (const auto& er : result.expert_results)
    if (er.outcome.status == OutcomeStatus::conclusive) conclusive = true;
  std::cout << "status: " << (conclusive ? "conclusive" : "inconclusive")
            << "\n";
  return 0;  // inconclusive is reported in-band, not via exit code
}

int cmd_bench(const std::string& cases_path, const std::string& out_dir,
              std::uint64_t seed, int max_turns) {
  auto cases = load_cases(cases_path);
  BenchConfig config;
  config.seed = seed;
  config.collab.search.max_turns = max_turns;
  BenchReport report = run_benchmark(cases, config);

  fs::path out(out_dir);
  write_file(out / "results.csv", results_to_csv(report));
  write_file(out / "results.md", results_to_markdown(report));

  std::cout << "cases: " << report.results.size()
            << "\nmean acc: " << report.mean_acc << "\n";
  for (const auto& r : report.results)
    if (r.errored)
      std::cerr << "case " << r.case_id << " failed: " << r.error << "\n";
  return report.any_errors ? 1 : 0;
}

int cmd_tools(const std::string& tools_path) {
  auto registry = ToolRegistry::from_manifest_file(tools_path);
  for (const auto& spec : registry.tools()) {
    std::cout << spec.category << " / " << spec.tool << " / " << spec.api_name
              << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Database anomaly diagnosis pipeline"};
  app.require_subcommand(1);

  std::string docs_dir, knowledge, tools, metrics, rules, alert, cases, out = "out";
  std::int64_t start = 0, end = 0;
  std::uint64_t seed = 0;
  int max_turns = 20, experts = 1;

  auto* d2k = app.add_subcommand("doc2knowledge",
                                 "Build the knowledge base from documents");
  d2k->add_option("--docs", docs_dir, "Directory of .md/.txt documents")
      ->required();
  d2k->add_option("--rules", rules, "Scripted gateway rules file");
  d2k->add_option("--out", out, "Output directory");
  d2k->add_option("--seed", seed, "Deterministic seed");

  auto* diag = app.add_subcommand("diagnose", "Run one diagnosis");
  diag->add_option("--knowledge", knowledge, "knowledge.json path");
  diag->add_option("--tools", tools, "Tool manifest path");
  diag->add_option("--metrics", metrics, "Metric series JSONL path");
  diag->add_option("--rules", rules, "Scripted gateway rules file");
  diag->add_option("--alert", alert, "Alert JSON path");
  diag->add_option("--start", start, "Anomaly window start (epoch seconds)");
  diag->add_option("--end", end, "Anomaly window end (epoch seconds)");
  diag->add_option("--seed", seed, "Deterministic seed");
  diag->add_option("--max-turns", max_turns, "Search turn budget");
  diag->add_option("--experts", experts, "Maximum number of experts");
  diag->add_option("--out", out, "Output directory");

  auto* bench = app.add_subcommand("bench", "Run the benchmark cases");
  bench->add_option("--cases", cases, "cases.json path")->required();
  bench->add_option("--out", out, "Output directory");
  bench->add_option("--seed", seed, "Deterministic seed");
  bench->add_option("--max-turns", max_turns, "Search turn budget");

  auto* tls = app.add_subcommand("tools", "List the registered tools");
  tls->add_option("--tools", tools, "Tool manifest path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (d2k->parsed()) return cmd_doc2knowledge(docs_dir, rules, out, seed);
    if (diag->parsed())
      return cmd_diagnose(knowledge, tools, metrics, rules, alert, start, end,
                          seed, max_turns, experts, out);
    if (bench->parsed()) return cmd_bench(cases, out, seed, max_turns);
    if (tls->parsed()) return cmd_tools(tools);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
