#include "dbot/tree_search.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

namespace dbot {

using nlohmann::json;

double uct(const DiagnosisTreeNode& node, int parent_visits, double c) {
  if (node.pruned) return -std::numeric_limits<double>::infinity();
  if (node.visits == 0) return std::numeric_limits<double>::infinity();
  double exploit = node.wins / static_cast<double>(node.visits);
  double parent = static_cast<double>(std::max(parent_visits, 1));
  double explore =
      c * std::sqrt(2.0 * std::log(parent) / static_cast<double>(node.visits));
  return exploit + explore;
}

DiagnosisTree::DiagnosisTree() {
  DiagnosisTreeNode root;
  root.id = 0;
  root.executed = true;  // the root carries no action to run
  nodes_.push_back(std::move(root));
}

int DiagnosisTree::add_child(int parent, NodeAction action) {
  DiagnosisTreeNode child;
  child.id = static_cast<int>(nodes_.size());
  child.parent = parent;
  child.action = std::move(action);
  nodes_.push_back(child);
  nodes_[static_cast<std::size_t>(parent)].children.push_back(child.id);
  return child.id;
}

int DiagnosisTree::select(double c) {
  while (true) {
    if (nodes_[0].pruned) throw AllPrunedError();
    int cur = 0;
    while (true) {
      const auto& n = node(cur);
      int best = -1;
      double best_score = -std::numeric_limits<double>::infinity();
      for (int child_id : n.children) {
        const auto& child = node(child_id);
        if (child.pruned) continue;
        double score = uct(child, n.visits, c);
        if (score > best_score) {  // strict: ties keep the lowest id
          best_score = score;
          best = child_id;
        }
      }
      if (best < 0) {
        if (n.children.empty()) return cur;  // expandable
        // Dead end: every child pruned. Prune and restart from the root.
        node(cur).pruned = true;
        break;
      }
      cur = best;
    }
  }
}

std::vector<int> DiagnosisTree::path_to_root(int id) const {
  std::vector<int> path;
  std::optional<int> cur = id;
  while (cur) {
    path.push_back(*cur);
    cur = node(*cur).parent;
  }
  std::reverse(path.begin(), path.end());
  return path;
}

std::vector<int> DiagnosisTree::leaves() const {
  std::vector<int> out;
  for (const auto& n : nodes_) {
    if (n.pruned || !n.executed || !n.children.empty()) continue;
    if (n.action.kind == ActionKind::root) continue;
    out.push_back(n.id);
  }
  return out;
}

bool DiagnosisTree::has_expandable() const {
  for (const auto& n : nodes_) {
    if (n.pruned) continue;
    if (n.children.empty() && !n.expanded) {
      // An unexpanded node is only reachable if its whole ancestry is
      // unpruned.
      bool reachable = true;
      std::optional<int> cur = n.parent;
      while (cur) {
        if (node(*cur).pruned) {
          reachable = false;
          break;
        }
        cur = node(*cur).parent;
      }
      if (reachable) return true;
    }
  }
  return false;
}

void parse_findings(const std::string& text, std::vector<std::string>& causes,
                    std::vector<std::string>& solutions) {
  std::istringstream lines(text);
  std::string line;
  auto trim = [](std::string s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    std::size_t e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  while (std::getline(lines, line)) {
    line = trim(line);
    const std::string cause_tag = "ROOT CAUSE:";
    const std::string solution_tag = "SOLUTION:";
    if (line.rfind(cause_tag, 0) == 0) {
      auto c = trim(line.substr(cause_tag.size()));
      if (!c.empty()) causes.push_back(c);
    } else if (line.rfind(solution_tag, 0) == 0) {
      auto s = trim(line.substr(solution_tag.size()));
      if (!s.empty()) solutions.push_back(s);
    }
  }
}

std::string transcript_to_jsonl(const std::vector<TranscriptRecord>& records) {
  std::ostringstream out;
  for (const auto& r : records) {
    json obj = {{"thought", r.thought},
                {"action", r.action},
                {"action_input", r.action_input},
                {"observation", r.observation}};
    out << obj.dump() << "\n";
  }
  return out.str();
}

TreeSearchEngine::TreeSearchEngine(LlmGateway& gateway,
                                   const ToolRegistry& registry,
                                   ToolExecutor executor,
                                   const std::vector<KnowledgeChunk>& chunks,
                                   CorpusStats stats, AnomalyCase anomaly,
                                   SearchConfig config)
    : gateway_(gateway),
      registry_(registry),
      executor_(std::move(executor)),
      chunks_(chunks),
      stats_(std::move(stats)),
      anomaly_(std::move(anomaly)),
      config_(config) {
  if (config_.max_turns < 1)
    throw TreeSearchError("SearchConfig: max_turns must be >= 1");
  if (config_.n_evaluators < 1 || config_.n_evaluators % 2 == 0)
    throw TreeSearchError("SearchConfig: n_evaluators must be odd");
  if (config_.exploration_c < 0.0)
    throw TreeSearchError("SearchConfig: exploration constant must be >= 0");
}

std::string TreeSearchEngine::describe_action(const NodeAction& action) const {
  switch (action.kind) {
    case ActionKind::root:
      return "root";
    case ActionKind::tool_call:
      return "tool:" + action.api;
    case ActionKind::knowledge_apply:
      return "knowledge:" + action.chunk_name;
  }
  return "unknown";
}

std::string TreeSearchEngine::prompt_context(int node_id) const {
  std::ostringstream out;
  out << "Anomaly: " << anomaly_.description << "\n";
  if (!anomaly_.query.metrics.empty()) {
    out << "Abnormal metrics:";
    for (const auto& m : anomaly_.query.metrics) out << " " << m;
    out << "\n";
  }
  out << "Window: start_time=" << anomaly_.query.start_time
      << " end_time=" << anomaly_.query.end_time << "\n";
  if (!extra_context_.empty()) out << extra_context_ << "\n";
  for (int id : tree_.path_to_root(node_id)) {
    const auto& n = tree_.node(id);
    if (n.action.kind == ActionKind::root) continue;
    out << "Past action " << describe_action(n.action);
    if (!n.observation.empty()) out << " -> " << n.observation;
    out << "\n";
    if (n.reflection) out << "Reflection: " << *n.reflection << "\n";
  }
  return out.str();
}

void TreeSearchEngine::expand(int node_id) {
  auto& parent = tree_.node(node_id);
  parent.expanded = true;
  const std::string context = prompt_context(node_id);

  if (!registry_.empty() && config_.top_k_tools > 0) {
    for (const auto& match :
         match_tools(context, registry_, gateway_, config_.top_k_tools)) {
      NodeAction action;
      action.kind = ActionKind::tool_call;
      action.api = match.spec.api_name;
      tree_.add_child(node_id, std::move(action));
    }
  }
  if (!chunks_.empty() && config_.top_n_knowledge > 0) {
    for (const auto& ranked :
         rank_chunks(anomaly_.query, chunks_, stats_, config_.top_n_knowledge)) {
      NodeAction action;
      action.kind = ActionKind::knowledge_apply;
      action.chunk_name = ranked.chunk_name;
      tree_.add_child(node_id, std::move(action));
    }
  }
}

void TreeSearchEngine::execute(int node_id) {
  auto& n = tree_.node(node_id);
  const std::string context = prompt_context(node_id);

  if (n.action.kind == ActionKind::tool_call) {
    const ToolSpec* spec = registry_.find(n.action.api);
    PromptRequest req;
    req.role_preamble =
        "You are a database diagnosis expert. Produce the arguments for the "
        "next tool call as a single JSON object.";
    std::ostringstream body;
    body << context;
    if (spec) body << render_tool_prompt({{*spec, 0.0}});
    body << "Respond with JSON arguments for API " << n.action.api << ".";
    req.messages = {{"user", body.str()}};
    Completion c = gateway_.complete(req);
    if (!c.ok()) {
      n.observation = "failed: " + c.text;
    } else {
      json parsed = json::parse(c.text, nullptr, false);
      if (parsed.is_discarded() || !parsed.is_object()) {
        n.observation = "failed: unparseable tool arguments: " + c.text;
      } else {
        for (const auto& [key, value] : parsed.items()) {
          n.action.args[key] =
              value.is_string() ? value.get<std::string>() : value.dump();
        }
        ToolCallResult result =
            registry_.invoke(n.action.api, n.action.args, executor_);
        n.observation = result.observation;
        if (result.status == ToolStatus::failed)
          n.observation = "failed: " + result.observation;
      }
    }
  } else if (n.action.kind == ActionKind::knowledge_apply) {
    const KnowledgeChunk* chunk = nullptr;
    for (const auto& k : chunks_)
      if (k.name == n.action.chunk_name) chunk = &k;
    PromptRequest req;
    req.role_preamble =
        "You are a database diagnosis expert. Apply the diagnosis knowledge "
        "to the anomaly. Mark every identified cause with a line starting "
        "'ROOT CAUSE:' and every fix with 'SOLUTION:'.";
    std::ostringstream body;
    body << context;
    if (chunk) {
      body << "Knowledge " << chunk->name << ": " << chunk->content << "\n"
           << "Steps: " << chunk->steps << "\n";
    }
    body << "Analyze using knowledge " << n.action.chunk_name << ".";
    req.messages = {{"user", body.str()}};
    Completion c = gateway_.complete(req);
    n.observation = c.ok() ? c.text : "failed: " + c.text;
  }

  n.executed = true;
  parse_findings(n.observation, n.found_causes, n.found_solutions);
}

void TreeSearchEngine::reflect(int node_id) {
  auto& n = tree_.node(node_id);
  PromptRequest req;
  req.role_preamble =
      "Make some reflection to inherit to later trails. If the last action "
      "yielded no useful information, answer exactly 'PRUNE'.";
  req.messages = {{"user", "Action: " + describe_action(n.action) +
                               "\nObservation: " + n.observation}};
  Completion c = gateway_.complete(req);
  if (!c.ok()) return;  // reflection is best effort
  n.reflection = c.text;
  std::string lowered = c.text;
  std::transform(lowered.begin(), lowered.end(), lowered.begin(), ::tolower);
  if (lowered.find("prune") != std::string::npos ||
      lowered.find("no useful information") != std::string::npos)
    n.pruned = true;
}

bool TreeSearchEngine::step() {
  if (exhausted_ || turns_ >= config_.max_turns) return false;
  // Bounded by node count: each pass either executes an action or prunes.
  for (int guard = 0; guard < static_cast<int>(tree_.nodes().size()) + 2;
       ++guard) {
    int selected;
    try {
      selected = tree_.select(config_.exploration_c);
    } catch (const AllPrunedError&) {
      exhausted_ = true;
      return false;
    }

    auto& n = tree_.node(selected);
    int to_execute = -1;
    if (!n.executed) {
      to_execute = selected;
    } else {
      expand(selected);
      const auto& expanded = tree_.node(selected);
      if (expanded.children.empty()) {
        tree_.node(selected).pruned = true;
        continue;  // nothing to try here, reselect
      }
      to_execute = expanded.children.front();
    }

    execute(to_execute);
    reflect(to_execute);
    for (int id : tree_.path_to_root(to_execute)) ++tree_.node(id).visits;

    const auto& done = tree_.node(to_execute);
    TranscriptRecord record;
    record.thought = "Executing " + describe_action(done.action);
    if (done.action.kind == ActionKind::tool_call) {
      record.action = done.action.api;
      json args = json::object();
      for (const auto& [k, v] : done.action.args) args[k] = v;
      record.action_input = args.dump();
    } else {
      record.action = "knowledge_apply";
      record.action_input = done.action.chunk_name;
    }
    record.observation = done.observation;
    transcript_.push_back(std::move(record));
    ++turns_;
    return true;
  }
  exhausted_ = true;
  return false;
}

void TreeSearchEngine::vote_leaves() {
  auto leaves = tree_.leaves();
  if (leaves.empty()) return;

  std::map<int, int> tally;
  for (int evaluator = 0; evaluator < config_.n_evaluators; ++evaluator) {
    PromptRequest req;
    req.role_preamble =
        "You are evaluator #" + std::to_string(evaluator) +
        ". Given the scenario context and historical actions, cast one vote "
        "for the most promising leaf. Answer 'VOTE: <leaf id>'.";
    std::ostringstream body;
    body << "Anomaly: " << anomaly_.description << "\n";
    for (int leaf : leaves) {
      const auto& n = tree_.node(leaf);
      body << "Leaf " << leaf << ": " << describe_action(n.action) << " -> "
           << n.observation;
      if (!n.found_causes.empty()) {
        body << " causes:";
        for (const auto& c : n.found_causes) body << " " << c;
      }
      body << "\n";
    }
    req.messages = {{"user", body.str()}};
    Completion c = gateway_.complete(req);
    if (!c.ok()) continue;  // abstention

    std::size_t pos = c.text.find("VOTE:");
    if (pos == std::string::npos) continue;
    int voted = -1;
    try {
      voted = std::stoi(c.text.substr(pos + 5));
    } catch (const std::exception&) {
      continue;
    }
    if (std::find(leaves.begin(), leaves.end(), voted) == leaves.end())
      continue;
    ++tally[voted];
  }

  for (const auto& [leaf, votes] : tally) {
    tree_.node(leaf).leaf_votes += votes;
    for (int id : tree_.path_to_root(leaf)) {
      tree_.node(id).wins += votes;
      tree_.node(id).visits += config_.n_evaluators;
    }
  }
}

DiagnosisOutcome TreeSearchEngine::outcome() const {
  DiagnosisOutcome out;
  out.transcript = transcript_;

  auto leaves = tree_.leaves();
  if (leaves.empty()) {
    // Also consider pruned executed leaves so a fully pruned search still
    // reports its transcript, but stays inconclusive.
    out.status = OutcomeStatus::inconclusive;
    return out;
  }

  int best = leaves.front();
  for (int leaf : leaves) {
    if (tree_.node(leaf).leaf_votes > tree_.node(best).leaf_votes) best = leaf;
  }
  out.winning_leaf = best;
  out.winning_votes = tree_.node(best).leaf_votes;

  std::vector<std::string> seen;
  for (int id : tree_.path_to_root(best)) {
    const auto& n = tree_.node(id);
    for (const auto& c : n.found_causes) {
      std::string key = normalize_metric_name(c);
      bool dup = false;
      for (const auto& s : seen)
        if (s == key) dup = true;
      if (dup) continue;
      seen.push_back(key);
      if (out.root_causes.size() < 4) out.root_causes.push_back(c);
    }
    for (const auto& s : n.found_solutions) {
      if (std::find(out.solutions.begin(), out.solutions.end(), s) ==
          out.solutions.end())
        out.solutions.push_back(s);
    }
  }
  out.status = out.root_causes.empty() ? OutcomeStatus::inconclusive
                                       : OutcomeStatus::conclusive;
  return out;
}

DiagnosisOutcome TreeSearchEngine::run() {
  while (turns_ < config_.max_turns) {
    if (!step()) break;
    if (config_.vote_interval > 0 && turns_ % config_.vote_interval == 0)
      vote_leaves();
  }
  vote_leaves();
  return outcome();
}

}  // namespace dbot
