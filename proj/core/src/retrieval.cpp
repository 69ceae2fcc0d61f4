#include "dbot/retrieval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace dbot {

using nlohmann::json;

std::string normalize_metric_name(const std::string& name) {
  std::size_t begin = 0, end = name.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(name[begin])))
    ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(name[end - 1])))
    --end;
  std::string out = name.substr(begin, end - begin);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

CorpusStats build_corpus_stats(const std::vector<KnowledgeChunk>& chunks,
                               double k1, double b) {
  CorpusStats stats;
  stats.total_chunks = chunks.size();
  stats.k1 = k1;
  stats.b = b;
  std::size_t total_len = 0;
  for (const auto& chunk : chunks) {
    total_len += chunk.metrics.size();
    std::set<std::string> distinct;
    for (const auto& m : chunk.metrics) distinct.insert(normalize_metric_name(m));
    for (const auto& m : distinct) ++stats.doc_freq[m];
  }
  stats.avg_doc_len =
      chunks.empty() ? 1.0
                     : static_cast<double>(total_len) /
                           static_cast<double>(chunks.size());
  if (stats.avg_doc_len <= 0.0) stats.avg_doc_len = 1.0;
  return stats;
}

double ks_statistic(const std::vector<double>& sample_a,
                    const std::vector<double>& sample_b) {
  if (sample_a.empty() || sample_b.empty())
    throw RetrievalError("EmptySample in ks_statistic");
  std::vector<double> a = sample_a, b = sample_b;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t ia = 0, ib = 0;
  double d = 0.0;
  while (ia < a.size() && ib < b.size()) {
    double x = std::min(a[ia], b[ib]);
    while (ia < a.size() && a[ia] <= x) ++ia;
    while (ib < b.size() && b[ib] <= x) ++ib;
    d = std::max(d, std::fabs(static_cast<double>(ia) / na -
                              static_cast<double>(ib) / nb));
  }
  return d;
}

AbnormalQuery detect_abnormal_metrics(
    const std::vector<MetricSeries>& reference,
    const std::vector<MetricSeries>& anomaly_window, double threshold) {
  AbnormalQuery query;
  for (const auto& window : anomaly_window) {
    const MetricSeries* ref = nullptr;
    for (const auto& r : reference)
      if (normalize_metric_name(r.metric_name) ==
          normalize_metric_name(window.metric_name))
        ref = &r;
    if (!ref)
      throw RetrievalError("MissingCounterpartSeries for metric " +
                           window.metric_name);
    if (ks_statistic(ref->values, window.values) > threshold)
      query.metrics.insert(normalize_metric_name(window.metric_name));
    if (!window.timestamps.empty()) {
      if (query.start_time == 0 || window.timestamps.front() < query.start_time)
        query.start_time = window.timestamps.front();
      if (window.timestamps.back() > query.end_time)
        query.end_time = window.timestamps.back();
    }
  }
  return query;
}

double idf(const std::string& metric, const CorpusStats& stats) {
  const double N = static_cast<double>(stats.total_chunks);
  auto it = stats.doc_freq.find(normalize_metric_name(metric));
  const double n = it == stats.doc_freq.end()
                       ? 0.0
                       : static_cast<double>(it->second);
  return std::log((N - n + 0.5) / (n + 0.5) + 1.0);
}

double bm25_score(const KnowledgeChunk& chunk, const AbnormalQuery& query,
                  const CorpusStats& stats) {
  const double doc_len = static_cast<double>(chunk.metrics.size());
  double score = 0.0;
  for (const auto& q : query.metrics) {
    const std::string qn = normalize_metric_name(q);
    double freq = 0.0;
    for (const auto& m : chunk.metrics)
      if (normalize_metric_name(m) == qn) freq += 1.0;
    if (freq == 0.0) continue;
    double denom = freq + stats.k1 * (1.0 - stats.b +
                                      stats.b * doc_len / stats.avg_doc_len);
    score += idf(qn, stats) * freq * (stats.k1 + 1.0) / denom;
  }
  return score;
}

std::vector<RankedChunk> rank_chunks(const AbnormalQuery& query,
                                     const std::vector<KnowledgeChunk>& chunks,
                                     const CorpusStats& stats,
                                     std::size_t top_n) {
  if (top_n < 1) throw RetrievalError("rank_chunks: top_n must be >= 1");
  std::vector<RankedChunk> ranked;
  for (const auto& chunk : chunks) {
    double score = bm25_score(chunk, query, stats);
    if (score > 0.0) ranked.push_back({chunk.name, score});
  }
  std::sort(ranked.begin(), ranked.end(),
            [](const RankedChunk& a, const RankedChunk& b) {
              if (a.score != b.score) return a.score > b.score;
              return a.chunk_name < b.chunk_name;
            });
  if (ranked.size() > top_n) ranked.resize(top_n);
  return ranked;
}

std::vector<MetricSeries> load_metric_series(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RetrievalError("cannot open metric series file: " + path);
  std::vector<MetricSeries> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json doc = json::parse(line);
    MetricSeries series;
    series.metric_name = doc.at("metric_name").get<std::string>();
    for (const auto& t : doc.at("timestamps"))
      series.timestamps.push_back(t.get<std::int64_t>());
    for (const auto& v : doc.at("values"))
      series.values.push_back(v.get<double>());
    if (series.timestamps.size() != series.values.size())
      throw RetrievalError("metric series length mismatch for " +
                           series.metric_name);
    for (std::size_t i = 1; i < series.timestamps.size(); ++i)
      if (series.timestamps[i] <= series.timestamps[i - 1])
        throw RetrievalError("timestamps not strictly increasing for " +
                             series.metric_name);
    out.push_back(std::move(series));
  }
  return out;
}

std::vector<double> window_values(const MetricSeries& series,
                                  std::int64_t start, std::int64_t end) {
  std::vector<double> out;
  for (std::size_t i = 0; i < series.timestamps.size(); ++i)
    if (series.timestamps[i] >= start && series.timestamps[i] <= end)
      out.push_back(series.values[i]);
  return out;
}

}  // namespace dbot
