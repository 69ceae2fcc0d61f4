#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dbot/gateway.hpp"

namespace dbot {

// Offline pipeline: documents -> summary tree -> knowledge chunks -> clusters.

struct DocumentBlock {
  int id = 0;
  std::string title;
  std::string content;
  std::vector<int> children;
  std::optional<int> parent;
};

struct SummaryNode {
  int block_id = 0;
  std::string summary;  // empty = summary-missing
};

enum class KeptBy { llm, manual };

struct KnowledgeChunk {
  std::string name;
  std::string content;
  std::vector<std::string> metrics;
  std::string steps;
  int source_block = -1;
  KeptBy kept_by = KeptBy::llm;
};

struct ChunkCluster {
  int cluster_id = -1;  // -1 = noise
  std::vector<std::string> member_chunk_ids;
  std::array<double, 3> centroid_coords_3d{0.0, 0.0, 0.0};
};

class DocLearningError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Splits a markdown-style document on heading structure; bodies longer than
// max_block_size whitespace-delimited words are cut into leaf blocks whose
// raw substrings concatenate back to the original body byte-for-byte.
std::vector<DocumentBlock> split_chapters(const std::string& document,
                                          std::size_t max_block_size = 4096);

std::vector<SummaryNode> build_summary_tree(
    const std::vector<DocumentBlock>& blocks, LlmGateway& gateway);

struct ExtractionResult {
  std::vector<KnowledgeChunk> kept;
  std::vector<KnowledgeChunk> manual_queue;
  std::vector<int> skipped_blocks;  // unparseable model responses
};

// For each block, the extraction prompt carries the block content, its
// children's content, and the summaries of the k_sim most summary-similar
// other blocks. The model answers KEEP or REDUNDANT followed by chunk JSON.
ExtractionResult extract_knowledge(const std::vector<DocumentBlock>& blocks,
                                   const std::vector<SummaryNode>& summaries,
                                   LlmGateway& gateway, std::size_t k_sim = 3);

using DistanceFn =
    std::function<double(const std::vector<double>&, const std::vector<double>&)>;

double euclidean_distance(const std::vector<double>& a,
                          const std::vector<double>& b);
double cosine_distance(const std::vector<double>& a,
                       const std::vector<double>& b);

// Density-based clustering. Labels contiguous from 0 in discovery order,
// -1 for noise.
std::vector<int> dbscan(const std::vector<std::vector<double>>& points,
                        double eps, std::size_t min_pts,
                        const DistanceFn& dist = euclidean_distance);

struct PcaResult {
  std::vector<std::array<double, 3>> coords;
  double retained_variance_ratio = 0.0;
};

PcaResult pca_project(const std::vector<std::vector<double>>& vectors);

struct ClusteringConfig {
  double eps = 0.4;  // cosine distance on normalized embeddings
  std::size_t min_pts = 3;
};

std::vector<ChunkCluster> cluster_chunks(
    const std::vector<KnowledgeChunk>& chunks, LlmGateway& gateway,
    const ClusteringConfig& config = {});

// Knowledge-base persistence: a JSON array of chunk objects with the fields
// name/content/metrics/steps (source_block and kept_by are round-tripped when
// present).
std::string chunks_to_json(const std::vector<KnowledgeChunk>& chunks);
std::vector<KnowledgeChunk> chunks_from_json(const std::string& text);
std::vector<KnowledgeChunk> load_knowledge_file(const std::string& path);

std::string clusters_to_json(const std::vector<ChunkCluster>& clusters);

}  // namespace dbot
