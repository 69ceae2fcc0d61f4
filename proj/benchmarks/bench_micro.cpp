#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "dbot/doc_learning.hpp"
#include "dbot/gateway.hpp"
#include "dbot/retrieval.hpp"
#include "dbot/tree_search.hpp"

using namespace dbot;

namespace {

std::vector<KnowledgeChunk> make_corpus(std::size_t n) {
  std::mt19937_64 rng(42);
  std::vector<std::string> vocab = {"cpu", "io",  "mem",   "swap", "wal",
                                    "lock", "tps", "cache", "scan", "sort"};
  std::vector<KnowledgeChunk> chunks;
  for (std::size_t i = 0; i < n; ++i) {
    KnowledgeChunk c;
    c.name = "chunk" + std::to_string(i);
    c.content = "content";
    c.steps = "steps";
    std::size_t len = 1 + rng() % 5;
    for (std::size_t j = 0; j < len; ++j)
      c.metrics.push_back(vocab[rng() % vocab.size()]);
    chunks.push_back(std::move(c));
  }
  return chunks;
}

void bm_bm25_rank(benchmark::State& state) {
  auto chunks = make_corpus(static_cast<std::size_t>(state.range(0)));
  auto stats = build_corpus_stats(chunks);
  AbnormalQuery query;
  query.metrics = {"cpu", "io", "swap"};
  for (auto _ : state) {
    auto ranked = rank_chunks(query, chunks, stats, 5);
    benchmark::DoNotOptimize(ranked);
  }
}
BENCHMARK(bm_bm25_rank)->Arg(16)->Arg(128)->Arg(1024);

void bm_uct_select(benchmark::State& state) {
  std::mt19937_64 rng(7);
  DiagnosisTree tree;
  int n = static_cast<int>(state.range(0));
  for (int i = 1; i < n; ++i) {
    NodeAction a;
    a.kind = ActionKind::tool_call;
    a.api = "api";
    int id = tree.add_child(static_cast<int>(rng() % static_cast<std::size_t>(i)), a);
    tree.node(id).visits = static_cast<int>(rng() % 6);
    tree.node(id).wins = static_cast<double>(rng() % 8) / 2.0;
    tree.node(id).executed = true;
  }
  for (int i = n - 1; i > 0; --i)
    tree.node(*tree.node(i).parent).visits += tree.node(i).visits;
  tree.node(0).visits += 1;
  for (auto _ : state) {
    int selected = tree.select(1.4);
    benchmark::DoNotOptimize(selected);
  }
}
BENCHMARK(bm_uct_select)->Arg(64)->Arg(512)->Arg(4096);

void bm_dbscan(benchmark::State& state) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::size_t n = static_cast<std::size_t>(state.range(0));
  std::vector<std::vector<double>> points(n, std::vector<double>(8));
  for (auto& p : points)
    for (auto& x : p) x = u(rng);
  for (auto _ : state) {
    auto labels = dbscan(points, 1.5, 3);
    benchmark::DoNotOptimize(labels);
  }
}
BENCHMARK(bm_dbscan)->Arg(32)->Arg(128)->Arg(512);

void bm_ngram_embed(benchmark::State& state) {
  std::string text(static_cast<std::size_t>(state.range(0)), 'x');
  std::mt19937_64 rng(13);
  for (auto& c : text) c = static_cast<char>('a' + rng() % 26);
  for (auto _ : state) {
    auto v = ngram_embed(text, 64, 0);
    benchmark::DoNotOptimize(v);
  }
}
BENCHMARK(bm_ngram_embed)->Arg(64)->Arg(1024)->Arg(16384);

}  // namespace

BENCHMARK_MAIN();
