#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "dbot/tree_search.hpp"

using namespace dbot;

namespace {

NodeAction tool_action(const std::string& api) {
  NodeAction a;
  a.kind = ActionKind::tool_call;
  a.api = api;
  return a;
}

// Pure-descent oracle: from the root, repeatedly take the max-UCT unpruned
// child (ties by lowest id) until reaching a childless node.
int select_oracle(const DiagnosisTree& tree, double c) {
  int cur = 0;
  while (true) {
    const auto& n = tree.node(cur);
    int best = -1;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int child : n.children) {
      if (tree.node(child).pruned) continue;
      double score = uct(tree.node(child), n.visits, c);
      if (score > best_score) {
        best_score = score;
        best = child;
      }
    }
    if (best < 0) return cur;
    cur = best;
  }
}

ToolRegistry small_registry() {
  auto manifest = R"([
    {"category": "monitoring", "tool": "metric tool", "api": "check_metric",
     "description": "check whether a metric is abnormal",
     "args": [{"name": "metric", "type": "string", "required": true}]},
    {"category": "diagnostics", "tool": "query tool", "api": "slow_queries",
     "description": "list slow queries in the window", "args": []}
  ])";
  return ToolRegistry::from_manifest_json(manifest);
}

AnomalyCase anomaly_case() {
  AnomalyCase a;
  a.description = "cpu usage spiked";
  a.query.start_time = 100;
  a.query.end_time = 200;
  return a;
}

std::vector<ScriptedRule> engine_rules(const std::string& findings) {
  return {
      {"JSON arguments for API check_metric", false,
       "{\"metric\": \"cpu_usage\"}", {}},
      {"JSON arguments for API slow_queries", false, "{}", {}},
      {"Make some reflection", false, "keep digging into the metrics", {}},
      {"cast one vote", false, findings, {}},
  };
}

ToolExecutor engine_executor(const std::string& observation) {
  return scripted_executor({
      {"check_metric(metric=cpu_usage)", observation},
      {"slow_queries()", "slowest query scans the orders table"},
  });
}

}  // namespace

TEST_CASE("uct hand values") {
  DiagnosisTreeNode n;
  n.wins = 3;
  n.visits = 4;
  CHECK(uct(n, 10, 1.4) == doctest::Approx(2.2522).epsilon(1e-3));

  DiagnosisTreeNode fresh;
  CHECK(std::isinf(uct(fresh, 10, 1.4)));
  CHECK(uct(fresh, 10, 1.4) > 0);

  DiagnosisTreeNode pure;
  pure.wins = 7;
  pure.visits = 7;
  CHECK(uct(pure, 3, 0.0) == doctest::Approx(1.0));

  DiagnosisTreeNode pruned;
  pruned.pruned = true;
  pruned.visits = 1;
  CHECK(uct(pruned, 10, 1.4) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("select walks the max-UCT path and honors pruning and ties") {
  DiagnosisTree tree;
  int a = tree.add_child(0, tool_action("a"));
  int b = tree.add_child(0, tool_action("b"));
  int c = tree.add_child(0, tool_action("c"));
  tree.node(0).visits = 10;
  tree.node(a).executed = true;
  tree.node(a).wins = 2;
  tree.node(a).visits = 4;  // uct ~ 2.0
  tree.node(b).executed = true;
  tree.node(b).wins = 5;
  tree.node(b).visits = 5;  // uct ~ 2.34, highest
  tree.node(c).executed = true;
  tree.node(c).wins = 0;
  tree.node(c).visits = 8;  // lowest

  CHECK(tree.select(1.4) == b);

  SUBCASE("pruning the best child moves to the runner-up") {
    tree.node(b).pruned = true;
    CHECK(tree.select(1.4) == a);
  }
  SUBCASE("a fresh tree resolves ties by lowest id") {
    DiagnosisTree fresh;
    int x = fresh.add_child(0, tool_action("x"));
    fresh.add_child(0, tool_action("y"));
    CHECK(fresh.select(1.4) == x);
  }
  SUBCASE("everything pruned raises AllPrunedError") {
    tree.node(a).pruned = true;
    tree.node(b).pruned = true;
    tree.node(c).pruned = true;
    CHECK_THROWS_AS(tree.select(1.4), AllPrunedError);
    CHECK(tree.node(0).pruned);  // the dead root was marked on the way
  }
}

TEST_CASE("select equals the brute-force descent on random trees") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 200; ++trial) {
    DiagnosisTree tree;
    std::size_t target_nodes = 2 + rng() % 99;
    std::vector<int> internal{0};
    while (tree.nodes().size() < target_nodes) {
      int parent = internal[rng() % internal.size()];
      int id = tree.add_child(parent, tool_action("t"));
      tree.node(id).executed = true;
      if (rng() % 2) internal.push_back(id);
    }
    // Randomize statistics. Prune only leaves, and never the last unpruned
    // child of a node, so the pure-descent oracle stays total.
    for (std::size_t id = 0; id < tree.nodes().size(); ++id) {
      auto& n = tree.node(static_cast<int>(id));
      n.visits = static_cast<int>(rng() % 10);
      n.wins = static_cast<double>(rng() % 10);
    }
    for (std::size_t id = 1; id < tree.nodes().size(); ++id) {
      auto& n = tree.node(static_cast<int>(id));
      if (!n.children.empty()) continue;
      if (rng() % 4 != 0) continue;
      const auto& siblings = tree.node(*n.parent).children;
      int unpruned = 0;
      for (int s : siblings)
        if (!tree.node(s).pruned) ++unpruned;
      if (unpruned > 1) n.pruned = true;
    }
    double c = (rng() % 2) ? 1.4 : 0.0;
    CHECK(tree.select(c) == select_oracle(tree, c));
  }
}

TEST_CASE("uct argmax is invariant to common positive scaling at C=0") {
  DiagnosisTree tree;
  int a = tree.add_child(0, tool_action("a"));
  int b = tree.add_child(0, tool_action("b"));
  tree.node(0).visits = 10;
  tree.node(a).executed = true;
  tree.node(a).wins = 2;
  tree.node(a).visits = 5;
  tree.node(b).executed = true;
  tree.node(b).wins = 3;
  tree.node(b).visits = 5;
  int before = tree.select(0.0);
  for (int id : {a, b}) {
    tree.node(id).wins *= 7.0;
    tree.node(id).visits *= 7;
  }
  tree.node(0).visits *= 7;
  CHECK(tree.select(0.0) == before);
}

TEST_CASE("findings parser extracts tagged lines only") {
  std::vector<std::string> causes, solutions;
  parse_findings("noise\nROOT CAUSE: large data fetch\n  SOLUTION: add index\n"
                 "ROOT CAUSE:\nSOLUTION: add index",
                 causes, solutions);
  CHECK(causes == std::vector<std::string>{"large data fetch"});
  CHECK(solutions == std::vector<std::string>{"add index", "add index"});
}

TEST_CASE("engine config validation") {
  ScriptedGateway gw;
  auto registry = small_registry();
  auto executor = engine_executor("ok");
  SearchConfig config;
  config.n_evaluators = 2;  // must be odd
  CHECK_THROWS_AS(TreeSearchEngine(gw, registry, executor, {}, {},
                                   anomaly_case(), config),
                  TreeSearchError);
  config.n_evaluators = 3;
  config.max_turns = 0;
  CHECK_THROWS_AS(TreeSearchEngine(gw, registry, executor, {}, {},
                                   anomaly_case(), config),
                  TreeSearchError);
}

TEST_CASE("run terminates within the budget and finds the planted cause") {
  // Only the metric-check branch survives reflection; the slow-query branch
  // is pruned, so every surviving path carries the planted cause.
  std::vector<ScriptedRule> rules = {
      {"JSON arguments for API check_metric", false,
       "{\"metric\": \"cpu_usage\"}", {}},
      {"JSON arguments for API slow_queries", false, "{}", {}},
      {"tool:slow_queries", false, "PRUNE", {}},
      {"Make some reflection", false, "keep digging into the metrics", {}},
      {"cast one vote", false, "VOTE: 1", {}},
  };
  ScriptedGateway gw(rules);
  auto registry = small_registry();
  auto executor = engine_executor(
      "The metric is abnormal.\nROOT CAUSE: large data fetch\n"
      "SOLUTION: add a covering index");
  SearchConfig config;
  TreeSearchEngine engine(gw, registry, executor, {}, {}, anomaly_case(),
                          config);
  auto outcome = engine.run();
  CHECK(engine.turns_taken() <= config.max_turns);
  CHECK(outcome.transcript.size() <= static_cast<std::size_t>(config.max_turns));
  CHECK(outcome.status == OutcomeStatus::conclusive);
  REQUIRE(!outcome.root_causes.empty());
  CHECK(outcome.root_causes.size() <= 4);
  bool found = false;
  for (const auto& c : outcome.root_causes)
    if (c == "large data fetch") found = true;
  CHECK(found);
  CHECK(!outcome.solutions.empty());
}

TEST_CASE("max_turns=1 yields a single transcript record") {
  ScriptedGateway gw(engine_rules("VOTE: 1"));
  auto registry = small_registry();
  auto executor = engine_executor("nothing special");
  SearchConfig config;
  config.max_turns = 1;
  TreeSearchEngine engine(gw, registry, executor, {}, {}, anomaly_case(),
                          config);
  auto outcome = engine.run();
  CHECK(outcome.transcript.size() == 1);
}

TEST_CASE("reflections that prune everything end inconclusive") {
  std::vector<ScriptedRule> rules = {
      {"JSON arguments for API", false, "{}", {}},
      {"Make some reflection", false, "no useful information here", {}},
  };
  ScriptedGateway gw(rules);
  auto registry = small_registry();
  auto executor = scripted_executor({{"slow_queries()", "nothing"}});
  SearchConfig config;
  TreeSearchEngine engine(gw, registry, executor, {}, {}, anomaly_case(),
                          config);
  auto outcome = engine.run();
  CHECK(outcome.status == OutcomeStatus::inconclusive);
  CHECK(outcome.root_causes.empty());
}

TEST_CASE("tool failures are recorded as observations and search continues") {
  std::vector<ScriptedRule> rules = {
      {"JSON arguments for API check_metric", false, "this is not json", {}},
      {"JSON arguments for API slow_queries", false, "{}", {}},
      {"Make some reflection", false, "fine", {}},
  };
  ScriptedGateway gw(rules);
  auto registry = small_registry();
  auto executor = scripted_executor(
      {{"slow_queries()", "ROOT CAUSE: poor join\nscan results"}});
  SearchConfig config;
  config.max_turns = 6;
  TreeSearchEngine engine(gw, registry, executor, {}, {}, anomaly_case(),
                          config);
  auto outcome = engine.run();
  bool saw_failure = false;
  for (const auto& r : outcome.transcript)
    if (r.observation.rfind("failed:", 0) == 0) saw_failure = true;
  CHECK(saw_failure);
  CHECK(engine.turns_taken() >= 2);  // the failure did not stop the search
}

TEST_CASE("tree stays well-formed after many steps") {
  ScriptedGateway gw(engine_rules("VOTE: 1"));
  auto registry = small_registry();
  auto executor = engine_executor("ROOT CAUSE: many inserts");
  SearchConfig config;
  TreeSearchEngine engine(gw, registry, executor, {}, {}, anomaly_case(),
                          config);
  engine.run();
  const auto& nodes = engine.tree().nodes();
  int roots = 0;
  for (const auto& n : nodes) {
    if (!n.parent) {
      ++roots;
      continue;
    }
    const auto& p = engine.tree().node(*n.parent);
    CHECK(std::find(p.children.begin(), p.children.end(), n.id) !=
          p.children.end());
    CHECK(*n.parent < n.id);  // ids grow downward, so no cycles
    CHECK(n.visits >= 0);
  }
  CHECK(roots == 1);
}

TEST_CASE("determinism: identical runs give identical transcripts") {
  auto run_once = [] {
    ScriptedGateway gw(engine_rules("VOTE: 1"));
    auto registry = small_registry();
    auto executor = engine_executor("ROOT CAUSE: many inserts");
    SearchConfig config;
    TreeSearchEngine engine(gw, registry, executor, {}, {}, anomaly_case(),
                            config);
    return transcript_to_jsonl(engine.run().transcript);
  };
  CHECK(run_once() == run_once());
}

TEST_CASE("vote backpropagation credits the whole leaf path") {
  ScriptedGateway gw(engine_rules("VOTE: 1"));
  auto registry = small_registry();
  auto executor = engine_executor("some observation");
  SearchConfig config;
  config.max_turns = 2;  // both root children executed, neither expanded yet
  config.vote_interval = 0;  // vote manually below
  TreeSearchEngine engine(gw, registry, executor, {}, {}, anomaly_case(),
                          config);
  while (engine.step()) {
  }
  engine.vote_leaves();
  const auto& tree = engine.tree();
  auto leaves = tree.leaves();
  REQUIRE(!leaves.empty());
  // The scripted ballot always names leaf 1.
  REQUIRE(std::find(leaves.begin(), leaves.end(), 1) != leaves.end());
  CHECK(tree.node(1).leaf_votes == config.n_evaluators);
  for (int id : tree.path_to_root(1)) {
    CHECK(tree.node(id).wins == doctest::Approx(config.n_evaluators));
  }
}

TEST_CASE("unparseable ballots count as abstentions") {
  auto rules = engine_rules("I refuse to vote");
  ScriptedGateway gw(rules);
  auto registry = small_registry();
  auto executor = engine_executor("obs");
  SearchConfig config;
  config.max_turns = 2;
  config.vote_interval = 0;
  TreeSearchEngine engine(gw, registry, executor, {}, {}, anomaly_case(),
                          config);
  while (engine.step()) {
  }
  engine.vote_leaves();
  for (const auto& n : engine.tree().nodes()) CHECK(n.leaf_votes == 0);
}

TEST_CASE("transcript serializes with the four record fields") {
  TranscriptRecord r{"think", "act", "{\"a\":1}", "see"};
  auto jsonl = transcript_to_jsonl({r});
  CHECK(jsonl.find("\"thought\":\"think\"") != std::string::npos);
  CHECK(jsonl.find("\"action\":\"act\"") != std::string::npos);
  CHECK(jsonl.find("\"action_input\"") != std::string::npos);
  CHECK(jsonl.find("\"observation\":\"see\"") != std::string::npos);
}
