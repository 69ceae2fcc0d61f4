#pragma once

#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dbot/gateway.hpp"
#include "dbot/retrieval.hpp"
#include "dbot/toolkit.hpp"

namespace dbot {

// Single-expert root-cause analysis: UCT-guided search over tool calls and
// knowledge applications, with reflection, pruning and vote-based leaf
// selection.

enum class ActionKind { root, tool_call, knowledge_apply };

struct NodeAction {
  ActionKind kind = ActionKind::root;
  std::string api;                              // tool_call
  std::map<std::string, std::string> args;      // tool_call
  std::string chunk_name;                       // knowledge_apply
};

struct DiagnosisTreeNode {
  int id = 0;
  std::optional<int> parent;
  NodeAction action;
  std::string observation;
  bool executed = false;  // observation present
  bool expanded = false;  // children generated
  std::optional<std::string> reflection;
  bool pruned = false;
  double wins = 0.0;      // W(n): evaluator votes accumulated on the path
  int visits = 0;         // N(n)
  int leaf_votes = 0;     // cumulative direct votes for this leaf
  std::vector<std::string> found_causes;
  std::vector<std::string> found_solutions;
  std::vector<int> children;
};

struct SearchConfig {
  double exploration_c = 1.4;
  int max_turns = 20;
  int n_evaluators = 3;  // must be odd
  std::size_t top_k_tools = 3;
  std::size_t top_n_knowledge = 3;
  int vote_interval = 5;  // vote every this many expansions
  int refine_budget = 5;
};

struct TranscriptRecord {
  std::string thought;
  std::string action;
  std::string action_input;
  std::string observation;
};

enum class OutcomeStatus { conclusive, inconclusive };

struct DiagnosisOutcome {
  std::vector<std::string> root_causes;  // deduplicated, at most 4
  std::vector<std::string> solutions;
  int winning_leaf = -1;
  int winning_votes = 0;
  std::vector<TranscriptRecord> transcript;
  OutcomeStatus status = OutcomeStatus::inconclusive;
};

class TreeSearchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AllPrunedError : public TreeSearchError {
 public:
  AllPrunedError() : TreeSearchError("AllPruned: no expandable node left") {}
};

// UCT value used during selection. Unvisited nodes get +infinity so every
// child is tried once; pruned nodes are never selected.
double uct(const DiagnosisTreeNode& node, int parent_visits, double c);

class DiagnosisTree {
 public:
  DiagnosisTree();

  const std::vector<DiagnosisTreeNode>& nodes() const { return nodes_; }
  DiagnosisTreeNode& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
  const DiagnosisTreeNode& node(int id) const {
    return nodes_.at(static_cast<std::size_t>(id));
  }
  int root_id() const { return 0; }

  int add_child(int parent, NodeAction action);

  // Descends from the root choosing the max-UCT unpruned child at each level
  // (ties by lowest id) until reaching an expandable node: one without
  // children. A dead end (expanded node whose children are all pruned) is
  // pruned itself and the descent restarts. Throws AllPrunedError when the
  // root is exhausted.
  int select(double c);

  std::vector<int> path_to_root(int id) const;
  std::vector<int> leaves() const;  // executed, childless, unpruned
  bool has_expandable() const;

 private:
  std::vector<DiagnosisTreeNode> nodes_;
};

struct AnomalyCase {
  AbnormalQuery query;
  std::string description;
};

class TreeSearchEngine {
 public:
  TreeSearchEngine(LlmGateway& gateway, const ToolRegistry& registry,
                   ToolExecutor executor,
                   const std::vector<KnowledgeChunk>& chunks,
                   CorpusStats stats, AnomalyCase anomaly,
                   SearchConfig config);

  // One turn: select, expand if needed, execute one action, reflect.
  // Returns false when no expandable node remains or the budget is spent.
  bool step();

  // Evaluator vote over current leaves, backpropagated along leaf paths.
  void vote_leaves();

  DiagnosisOutcome outcome() const;

  // Select + expand loop with periodic voting, bounded by max_turns.
  DiagnosisOutcome run();

  // Context appended to every prompt (delivered bus findings, review advice).
  void set_extra_context(std::string context) { extra_context_ = std::move(context); }

  DiagnosisTree& tree() { return tree_; }
  const DiagnosisTree& tree() const { return tree_; }
  int turns_taken() const { return turns_; }
  const SearchConfig& config() const { return config_; }
  const AnomalyCase& anomaly() const { return anomaly_; }
  const std::vector<TranscriptRecord>& transcript() const { return transcript_; }

 private:
  void expand(int node_id);
  void execute(int node_id);
  void reflect(int node_id);
  std::string prompt_context(int node_id) const;
  std::string describe_action(const NodeAction& action) const;

  LlmGateway& gateway_;
  const ToolRegistry& registry_;
  ToolExecutor executor_;
  std::vector<KnowledgeChunk> chunks_;  // copied: callers may pass temporaries
  CorpusStats stats_;
  AnomalyCase anomaly_;
  SearchConfig config_;
  DiagnosisTree tree_;
  std::vector<TranscriptRecord> transcript_;
  std::string extra_context_;
  int turns_ = 0;
  bool exhausted_ = false;
};

// Transcript export, one JSON object per record with the fields
// thought/action/action_input/observation.
std::string transcript_to_jsonl(const std::vector<TranscriptRecord>& records);

// Lines "ROOT CAUSE: x" / "SOLUTION: y" in model output carry the findings.
void parse_findings(const std::string& text, std::vector<std::string>& causes,
                    std::vector<std::string>& solutions);

}  // namespace dbot
