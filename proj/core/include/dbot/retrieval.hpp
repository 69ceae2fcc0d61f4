#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "dbot/doc_learning.hpp"

namespace dbot {

// Online knowledge matching: KS-test abnormal-metric detection plus BM25
// ranking of knowledge chunks over their metrics attribute.

struct MetricSeries {
  std::string metric_name;
  std::vector<std::int64_t> timestamps;  // strictly increasing epoch seconds
  std::vector<double> values;
};

struct AbnormalQuery {
  std::set<std::string> metrics;
  std::int64_t start_time = 0;
  std::int64_t end_time = 0;
};

struct CorpusStats {
  std::size_t total_chunks = 0;                 // N
  std::map<std::string, std::size_t> doc_freq;  // metric -> n(q_i)
  double avg_doc_len = 1.0;                     // avgDL
  double k1 = 1.2;
  double b = 0.75;
};

class RetrievalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string normalize_metric_name(const std::string& name);

CorpusStats build_corpus_stats(const std::vector<KnowledgeChunk>& chunks,
                               double k1 = 1.2, double b = 0.75);

// Two-sample Kolmogorov-Smirnov statistic D = sup |F_a - F_b|.
double ks_statistic(const std::vector<double>& sample_a,
                    const std::vector<double>& sample_b);

// A metric is abnormal iff D(reference, window) > threshold.
AbnormalQuery detect_abnormal_metrics(
    const std::vector<MetricSeries>& reference,
    const std::vector<MetricSeries>& anomaly_window, double threshold);

double idf(const std::string& metric, const CorpusStats& stats);

double bm25_score(const KnowledgeChunk& chunk, const AbnormalQuery& query,
                  const CorpusStats& stats);

struct RankedChunk {
  std::string chunk_name;
  double score = 0.0;
};

// Descending by score, ties by ascending chunk name, zero scores excluded.
std::vector<RankedChunk> rank_chunks(const AbnormalQuery& query,
                                     const std::vector<KnowledgeChunk>& chunks,
                                     const CorpusStats& stats,
                                     std::size_t top_n);

// JSON lines ingestion: {"metric_name":..., "timestamps":[...], "values":[...]}
std::vector<MetricSeries> load_metric_series(const std::string& path);

// Restrict a series to [start, end]; used to carve the anomaly window and the
// equal-length reference window immediately preceding it.
std::vector<double> window_values(const MetricSeries& series,
                                  std::int64_t start, std::int64_t end);

}  // namespace dbot
