#include "dbot/doc_learning.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace dbot {

using nlohmann::json;

namespace {

bool is_space(char c) {
  return std::isspace(static_cast<unsigned char>(c)) != 0;
}

std::size_t count_words(const std::string& text) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : text) {
    if (is_space(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++n;
    }
  }
  return n;
}

// Cuts raw substrings of at most max_words whitespace-delimited words each.
// Concatenating the pieces reproduces the input byte-for-byte.
std::vector<std::string> split_words_lossless(const std::string& body,
                                              std::size_t max_words) {
  std::vector<std::string> pieces;
  std::size_t start = 0;
  while (start < body.size()) {
    std::size_t words = 0;
    std::size_t pos = start;
    bool in_word = false;
    std::size_t cut = body.size();
    while (pos < body.size()) {
      if (is_space(body[pos])) {
        in_word = false;
      } else if (!in_word) {
        in_word = true;
        ++words;
        if (words > max_words) {
          cut = pos;
          break;
        }
      }
      ++pos;
    }
    // Back up the cut to the end of the last counted word so whitespace
    // stays with the following piece's leading run.
    pieces.push_back(body.substr(start, cut - start));
    start = cut;
  }
  if (pieces.empty()) pieces.push_back("");
  return pieces;
}

struct Segment {
  int level;  // 0 = preamble text before the first heading
  std::string title;
  std::string body;
};

std::vector<Segment> parse_segments(const std::string& document) {
  std::vector<Segment> segments;
  Segment current{0, "", ""};
  std::size_t pos = 0;
  bool have_current = false;
  while (pos <= document.size()) {
    std::size_t eol = document.find('\n', pos);
    bool last = (eol == std::string::npos);
    std::string line = document.substr(pos, last ? std::string::npos
                                                 : eol - pos);
    std::size_t hashes = 0;
    while (hashes < line.size() && line[hashes] == '#') ++hashes;
    bool heading = hashes > 0 && hashes < line.size() && line[hashes] == ' ';
    if (heading) {
      if (have_current || !current.body.empty()) segments.push_back(current);
      current = Segment{static_cast<int>(hashes),
                        line.substr(hashes + 1), ""};
      have_current = true;
    } else {
      current.body += line;
      if (!last) current.body += '\n';
    }
    if (last) break;
    pos = eol + 1;
  }
  segments.push_back(current);
  return segments;
}

}  // namespace

std::vector<DocumentBlock> split_chapters(const std::string& document,
                                          std::size_t max_block_size) {
  if (count_words(document) == 0)
    throw DocLearningError("EmptyDocument: no content to split");

  auto segments = parse_segments(document);

  std::vector<DocumentBlock> blocks;
  auto new_block = [&blocks](std::string title, std::string content,
                             std::optional<int> parent) {
    DocumentBlock b;
    b.id = static_cast<int>(blocks.size());
    b.title = std::move(title);
    b.content = std::move(content);
    b.parent = parent;
    blocks.push_back(std::move(b));
    if (parent) blocks[*parent].children.push_back(blocks.back().id);
    return blocks.back().id;
  };

  // Root: a unique leading top-level heading becomes the document title;
  // otherwise a synthetic root holds the pieces.
  int min_level = 0;
  for (const auto& s : segments)
    if (s.level > 0 && (min_level == 0 || s.level < min_level))
      min_level = s.level;
  std::size_t top_count = 0;
  for (const auto& s : segments)
    if (s.level == min_level && min_level > 0) ++top_count;

  bool first_is_root = min_level > 0 && top_count == 1 &&
                       segments.front().level == min_level;

  int root_id;
  std::size_t seg_start = 0;
  if (first_is_root) {
    root_id = new_block(segments.front().title, "", std::nullopt);
    seg_start = 0;  // body of the root segment still becomes child leaves
  } else {
    root_id = new_block("document", "", std::nullopt);
  }

  // Stack of (heading level, block id) for attaching subsections.
  std::vector<std::pair<int, int>> stack;
  stack.emplace_back(0, root_id);

  auto attach_body = [&](int parent, const std::string& title,
                         const std::string& body) {
    if (count_words(body) == 0) return;
    auto pieces = split_words_lossless(body, max_block_size);
    int idx = 1;
    for (auto& piece : pieces) {
      std::string leaf_title =
          pieces.size() == 1 ? title
                             : title + " (part " + std::to_string(idx++) + ")";
      new_block(leaf_title, piece, parent);
    }
  };

  for (std::size_t i = seg_start; i < segments.size(); ++i) {
    const auto& seg = segments[i];
    if (seg.level == 0) {
      attach_body(root_id, "preamble", seg.body);
      continue;
    }
    if (first_is_root && i == 0) {
      attach_body(root_id, seg.title, seg.body);
      continue;
    }
    while (stack.size() > 1 && stack.back().first >= seg.level) stack.pop_back();
    int parent = stack.back().second;
    int id = new_block(seg.title, "", parent);
    stack.emplace_back(seg.level, id);
    attach_body(id, seg.title, seg.body);
  }
  return blocks;
}

std::vector<SummaryNode> build_summary_tree(
    const std::vector<DocumentBlock>& blocks, LlmGateway& gateway) {
  std::vector<SummaryNode> summaries;
  for (const auto& block : blocks) {
    if (!block.parent) continue;  // root carries no summary
    PromptRequest req;
    req.role_preamble =
        "Summarize the provided chunk briefly. Your summary will serve as an "
        "index for others to find technical details related to database "
        "maintenance. Pay attention to examples even if the chunks cover "
        "other topics.";
    req.messages = {{"user", "Title: " + block.title +
                                 "\nChunk:\n" + block.content}};
    Completion c = gateway.complete(req);
    summaries.push_back({block.id, c.ok() ? c.text : std::string{}});
  }
  return summaries;
}

ExtractionResult extract_knowledge(const std::vector<DocumentBlock>& blocks,
                                   const std::vector<SummaryNode>& summaries,
                                   LlmGateway& gateway, std::size_t k_sim) {
  ExtractionResult result;
  std::unordered_set<std::string> seen_names;

  std::vector<const SummaryNode*> summarized;
  std::vector<std::vector<double>> summary_embeds;
  for (const auto& s : summaries) {
    if (s.summary.empty()) continue;
    summarized.push_back(&s);
    summary_embeds.push_back(gateway.embed(s.summary));
  }

  auto block_by_id = [&blocks](int id) -> const DocumentBlock& {
    return blocks.at(static_cast<std::size_t>(id));
  };

  for (const auto& block : blocks) {
    if (!block.parent) continue;
    if (count_words(block.content) == 0) continue;

    // Rank other blocks by summary similarity to this block's own summary.
    std::string own_summary;
    for (const auto& s : summaries)
      if (s.block_id == block.id) own_summary = s.summary;
    std::vector<std::pair<double, const SummaryNode*>> ranked;
    if (!own_summary.empty()) {
      auto own_vec = gateway.embed(own_summary);
      for (std::size_t i = 0; i < summarized.size(); ++i) {
        if (summarized[i]->block_id == block.id) continue;
        ranked.emplace_back(cosine(own_vec, summary_embeds[i]), summarized[i]);
      }
      std::stable_sort(ranked.begin(), ranked.end(),
                       [](const auto& a, const auto& b) {
                         return a.first > b.first;
                       });
      if (ranked.size() > k_sim) ranked.resize(k_sim);
    }

    std::ostringstream prompt;
    prompt << "Chunk:\n" << block.content << "\n";
    for (int child_id : block.children) {
      const auto& child = block_by_id(child_id);
      if (!child.content.empty())
        prompt << "Child chunk (" << child.title << "):\n"
               << child.content << "\n";
    }
    for (const auto& [score, node] : ranked) {
      prompt << "Related summary (" << block_by_id(node->block_id).title
             << "): " << node->summary << "\n";
    }

    PromptRequest req;
    req.role_preamble =
        "Given a chunk summary, extract diagnosis experience from the chunk. "
        "If uncertain, explore diagnosis experience in chunks from child "
        "nodes or chunks with similar summaries. Answer KEEP or REDUNDANT on "
        "the first line, followed by one JSON object per extracted chunk "
        "with fields name, content, metrics, steps.";
    req.messages = {{"user", prompt.str()}};
    Completion c = gateway.complete(req);
    if (!c.ok()) {
      result.skipped_blocks.push_back(block.id);
      continue;
    }

    std::istringstream lines(c.text);
    std::string verdict;
    std::getline(lines, verdict);
    while (!verdict.empty() && is_space(verdict.back())) verdict.pop_back();
    bool keep = verdict == "KEEP";
    bool redundant = verdict == "REDUNDANT";
    if (!keep && !redundant) {
      result.skipped_blocks.push_back(block.id);
      continue;
    }
    std::string payload((std::istreambuf_iterator<char>(lines)),
                        std::istreambuf_iterator<char>());
    json doc = json::parse(payload, nullptr, false);
    if (doc.is_discarded()) {
      result.skipped_blocks.push_back(block.id);
      continue;
    }
    json items = doc.is_array() ? doc : json::array({doc});
    bool parse_ok = true;
    std::vector<KnowledgeChunk> parsed;
    for (const auto& item : items) {
      if (!item.contains("name") || !item.contains("content") ||
          !item.contains("metrics") || !item.contains("steps") ||
          !item["metrics"].is_array() || item["metrics"].empty()) {
        parse_ok = false;
        break;
      }
      KnowledgeChunk chunk;
      chunk.name = item["name"].get<std::string>();
      chunk.content = item["content"].get<std::string>();
      for (const auto& m : item["metrics"])
        chunk.metrics.push_back(m.get<std::string>());
      chunk.steps = item["steps"].get<std::string>();
      chunk.source_block = block.id;
      chunk.kept_by = keep ? KeptBy::llm : KeptBy::manual;
      parsed.push_back(std::move(chunk));
    }
    if (!parse_ok) {
      result.skipped_blocks.push_back(block.id);
      continue;
    }
    for (auto& chunk : parsed) {
      if (!seen_names.insert(chunk.name).second) continue;  // keep first
      if (keep)
        result.kept.push_back(std::move(chunk));
      else
        result.manual_queue.push_back(std::move(chunk));
    }
  }
  return result;
}

double euclidean_distance(const std::vector<double>& a,
                          const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double cosine_distance(const std::vector<double>& a,
                       const std::vector<double>& b) {
  return 1.0 - cosine(a, b);
}

std::vector<int> dbscan(const std::vector<std::vector<double>>& points,
                        double eps, std::size_t min_pts,
                        const DistanceFn& dist) {
  const std::size_t n = points.size();
  if (n == 0) return {};
  const std::size_t dim = points[0].size();
  for (const auto& p : points)
    if (p.size() != dim)
      throw DocLearningError("DimensionMismatch in dbscan input");

  auto neighbors = [&](std::size_t i) {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < n; ++j)
      if (dist(points[i], points[j]) <= eps) out.push_back(j);
    return out;
  };

  constexpr int kUnvisited = -2;
  std::vector<int> labels(n, kUnvisited);
  int next_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != kUnvisited) continue;
    auto nbrs = neighbors(i);
    if (nbrs.size() < min_pts) {
      labels[i] = -1;
      continue;
    }
    int label = next_label++;
    labels[i] = label;
    std::deque<std::size_t> queue(nbrs.begin(), nbrs.end());
    while (!queue.empty()) {
      std::size_t q = queue.front();
      queue.pop_front();
      if (labels[q] == -1) labels[q] = label;  // border point
      if (labels[q] != kUnvisited) continue;
      labels[q] = label;
      auto q_nbrs = neighbors(q);
      if (q_nbrs.size() >= min_pts)
        queue.insert(queue.end(), q_nbrs.begin(), q_nbrs.end());
    }
  }
  return labels;
}

namespace {

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
// eigenvalues and column eigenvectors.
void jacobi_eigen(std::vector<std::vector<double>> a,
                  std::vector<double>& eigvals,
                  std::vector<std::vector<double>>& eigvecs) {
  const std::size_t n = a.size();
  eigvecs.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) eigvecs[i][i] = 1.0;

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::fabs(a[p][q]) < 1e-30) continue;
        double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double vkp = eigvecs[k][p], vkq = eigvecs[k][q];
          eigvecs[k][p] = c * vkp - s * vkq;
          eigvecs[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  eigvals.resize(n);
  for (std::size_t i = 0; i < n; ++i) eigvals[i] = a[i][i];
}

}  // namespace

PcaResult pca_project(const std::vector<std::vector<double>>& vectors) {
  constexpr std::size_t k = 3;
  if (vectors.size() < k)
    throw DocLearningError("InsufficientData: pca_project needs >= 3 vectors");
  const std::size_t n = vectors.size();
  const std::size_t d = vectors[0].size();
  for (const auto& v : vectors)
    if (v.size() != d)
      throw DocLearningError("DimensionMismatch in pca_project input");

  std::vector<double> mean(d, 0.0);
  for (const auto& v : vectors)
    for (std::size_t j = 0; j < d; ++j) mean[j] += v[j];
  for (double& m : mean) m /= static_cast<double>(n);

  std::vector<std::vector<double>> centered(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) centered[i][j] = vectors[i][j] - mean[j];

  std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < d; ++p)
      for (std::size_t q = p; q < d; ++q)
        cov[p][q] += centered[i][p] * centered[i][q];
  for (std::size_t p = 0; p < d; ++p)
    for (std::size_t q = p; q < d; ++q) {
      cov[p][q] /= static_cast<double>(n);
      cov[q][p] = cov[p][q];
    }

  double total_variance = 0.0;
  for (std::size_t p = 0; p < d; ++p) total_variance += cov[p][p];

  PcaResult result;
  result.coords.assign(n, {0.0, 0.0, 0.0});
  if (total_variance <= 1e-300) return result;  // degenerate spread

  std::vector<double> eigvals;
  std::vector<std::vector<double>> eigvecs;
  jacobi_eigen(cov, eigvals, eigvecs);

  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&eigvals](std::size_t a, std::size_t b) {
    return eigvals[a] > eigvals[b];
  });

  double retained = 0.0;
  for (std::size_t c = 0; c < k && c < d; ++c)
    retained += std::max(0.0, eigvals[order[c]]);
  result.retained_variance_ratio = retained / total_variance;

  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k && c < d; ++c) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j)
        dot += centered[i][j] * eigvecs[j][order[c]];
      result.coords[i][c] = dot;
    }
  return result;
}

std::vector<ChunkCluster> cluster_chunks(
    const std::vector<KnowledgeChunk>& chunks, LlmGateway& gateway,
    const ClusteringConfig& config) {
  if (chunks.empty())
    throw DocLearningError("cluster_chunks: chunk list is empty");

  std::vector<std::vector<double>> embeds;
  embeds.reserve(chunks.size());
  for (const auto& chunk : chunks)
    embeds.push_back(gateway.embed(chunk.name + " " + chunk.content));

  auto labels = dbscan(embeds, config.eps, config.min_pts, cosine_distance);

  std::vector<std::array<double, 3>> coords(chunks.size(), {0.0, 0.0, 0.0});
  if (chunks.size() >= 3) coords = pca_project(embeds).coords;

  int max_label = -1;
  for (int l : labels) max_label = std::max(max_label, l);

  std::vector<ChunkCluster> clusters;
  for (int l = -1; l <= max_label; ++l) {
    ChunkCluster cluster;
    cluster.cluster_id = l;
    std::array<double, 3> sum{0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      if (labels[i] != l) continue;
      cluster.member_chunk_ids.push_back(chunks[i].name);
      for (std::size_t c = 0; c < 3; ++c) sum[c] += coords[i][c];
    }
    if (cluster.member_chunk_ids.empty()) continue;
    auto count = static_cast<double>(cluster.member_chunk_ids.size());
    for (std::size_t c = 0; c < 3; ++c)
      cluster.centroid_coords_3d[c] = sum[c] / count;
    clusters.push_back(std::move(cluster));
  }
  return clusters;
}

std::string chunks_to_json(const std::vector<KnowledgeChunk>& chunks) {
  json arr = json::array();
  for (const auto& chunk : chunks) {
    arr.push_back({{"name", chunk.name},
                   {"content", chunk.content},
                   {"metrics", chunk.metrics},
                   {"steps", chunk.steps},
                   {"source_block", chunk.source_block},
                   {"kept_by", chunk.kept_by == KeptBy::manual ? "manual" : "llm"}});
  }
  return arr.dump(2);
}

std::vector<KnowledgeChunk> chunks_from_json(const std::string& text) {
  json arr = json::parse(text, nullptr, false);
  if (arr.is_discarded() || !arr.is_array())
    throw DocLearningError("knowledge file: expected a JSON array");
  std::vector<KnowledgeChunk> chunks;
  for (const auto& item : arr) {
    KnowledgeChunk chunk;
    try {
      chunk.name = item.at("name").get<std::string>();
      chunk.content = item.at("content").get<std::string>();
      for (const auto& m : item.at("metrics"))
        chunk.metrics.push_back(m.get<std::string>());
      chunk.steps = item.at("steps").get<std::string>();
    } catch (const json::exception& e) {
      throw DocLearningError(std::string("knowledge file: ") + e.what());
    }
    chunk.source_block = item.value("source_block", -1);
    chunk.kept_by =
        item.value("kept_by", "llm") == "manual" ? KeptBy::manual : KeptBy::llm;
    chunks.push_back(std::move(chunk));
  }
  return chunks;
}

std::vector<KnowledgeChunk> load_knowledge_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DocLearningError("cannot open knowledge file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return chunks_from_json(buf.str());
}

std::string clusters_to_json(const std::vector<ChunkCluster>& clusters) {
  json arr = json::array();
  for (const auto& cluster : clusters) {
    arr.push_back({{"cluster_id", cluster.cluster_id},
                   {"members", cluster.member_chunk_ids},
                   {"centroid_3d", cluster.centroid_coords_3d}});
  }
  return arr.dump(2);
}

}  // namespace dbot
