#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "dbot/tree_search.hpp"

namespace dbot {

// Multi-expert collaborative diagnosis: pub-sub exchange, running summaries,
// cross-review, refinement and report generation.

struct BusMessage {
  std::int64_t seq = 0;  // per-publisher monotone
  std::string publisher;
  std::string topic;
  std::string payload;
  int turn = 0;
};

class CollabError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PublishAfterCloseError : public CollabError {
 public:
  PublishAfterCloseError() : CollabError("publish on a closed bus") {}
};

// In-process publish-subscribe bus. Publishing is non-blocking; every
// subscriber of a topic receives each message exactly once, in per-publisher
// order.
class MessageBus {
 public:
  void subscribe(const std::string& subscriber,
                 const std::vector<std::string>& topics);
  void publish(const std::string& publisher, const std::string& topic,
               const std::string& payload, int turn);
  std::vector<BusMessage> drain(const std::string& subscriber);
  void close();
  std::vector<BusMessage> log() const;  // all published messages, audit order

 private:
  mutable std::mutex mu_;
  bool closed_ = false;
  std::map<std::string, std::int64_t> next_seq_;
  std::map<std::string, std::vector<std::string>> subscriptions_;
  std::map<std::string, std::vector<BusMessage>> queues_;
  std::vector<BusMessage> log_;
};

struct ExpertProfile {
  std::string name;
  int cluster_id = -1;
  std::vector<std::string> chunk_ids;
  std::vector<std::string> tool_apis;
  std::string prompt_template;
  std::vector<double> centroid;  // embedding centroid of the chunk contents
};

struct RunningSummary {
  std::string expert;
  std::vector<std::string> lines;
};

struct DiagnosisReport {
  std::string title;
  std::string anomaly_date;
  std::string description;
  std::vector<std::string> root_causes;  // at most 4 after merge
  std::vector<std::string> solutions;
  std::string diagnosis_process;
};

// One profile per non-noise cluster; tools attached by match_tools over the
// cluster's concatenated chunk contents.
std::vector<ExpertProfile> prepare_experts(
    const std::vector<ChunkCluster>& clusters,
    const std::vector<KnowledgeChunk>& chunks, const ToolRegistry& registry,
    LlmGateway& gateway, std::size_t tools_per_expert = 5);

// The model picks experts by name; unparseable or empty answers fall back to
// centroid cosine similarity (top fallback_top).
std::vector<ExpertProfile> assign_experts(const std::string& description,
                                          const std::vector<ExpertProfile>& experts,
                                          LlmGateway& gateway,
                                          std::size_t fallback_top = 2);

// Folds record r_t into the running summary via one gateway call; on gateway
// failure appends a deterministic fallback line.
RunningSummary summarize_record(const RunningSummary& prev,
                                const TranscriptRecord& record,
                                LlmGateway& gateway);

struct ExpertResult {
  std::string expert;
  DiagnosisOutcome outcome;
  RunningSummary summary;
};

// p_review round: every expert reviews every other expert's summary and
// causes. Empty advice for fewer than two experts.
std::map<std::string, std::vector<std::string>> cross_review(
    const std::vector<ExpertResult>& results, LlmGateway& gateway);

DiagnosisReport generate_report(const std::vector<ExpertResult>& results,
                                const AnomalyCase& anomaly);

std::string report_to_markdown(const DiagnosisReport& report);
std::string report_to_json(const DiagnosisReport& report);
std::string bus_log_to_jsonl(const std::vector<BusMessage>& log);

struct CollabConfig {
  SearchConfig search;
  int review_rounds = 1;
  std::size_t assign_fallback_top = 2;
};

struct CollabResult {
  DiagnosisReport report;
  std::vector<ExpertResult> expert_results;
  std::vector<BusMessage> bus_log;
};

// Round-robin scheduler over the selected experts' search trees with bus
// exchange, then cross-review, refinement and report generation.
class CollabSession {
 public:
  CollabSession(LlmGateway& gateway, const ToolRegistry& registry,
                ToolExecutor executor,
                const std::vector<KnowledgeChunk>& chunks,
                CollabConfig config);

  CollabResult run(const AnomalyCase& anomaly,
                   const std::vector<ExpertProfile>& selected);

 private:
  LlmGateway& gateway_;
  const ToolRegistry& registry_;
  ToolExecutor executor_;
  std::vector<KnowledgeChunk> chunks_;  // copied: callers may pass temporaries
  CollabConfig config_;
};

// Alert JSON {start_time, end_time, alerts:[{name, severity, summary}]}
// assembled into an anomaly description (the Anomaly Profiler input).
AnomalyCase load_alert_file(const std::string& path);
AnomalyCase parse_alert_json(const std::string& text);

}  // namespace dbot
