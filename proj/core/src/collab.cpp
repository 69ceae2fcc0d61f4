#include "dbot/collab.hpp"

#include <algorithm>
#include <ctime>
#include <fstream>
#include <memory>
#include <sstream>

#include <nlohmann/json.hpp>

namespace dbot {

using nlohmann::json;

void MessageBus::subscribe(const std::string& subscriber,
                           const std::vector<std::string>& topics) {
  std::lock_guard lock(mu_);
  auto& subs = subscriptions_[subscriber];
  for (const auto& t : topics)
    if (std::find(subs.begin(), subs.end(), t) == subs.end()) subs.push_back(t);
  queues_.try_emplace(subscriber);
}

void MessageBus::publish(const std::string& publisher, const std::string& topic,
                         const std::string& payload, int turn) {
  std::lock_guard lock(mu_);
  if (closed_) throw PublishAfterCloseError();
  BusMessage msg;
  msg.seq = next_seq_[publisher]++;
  msg.publisher = publisher;
  msg.topic = topic;
  msg.payload = payload;
  msg.turn = turn;
  log_.push_back(msg);
  for (const auto& [subscriber, topics] : subscriptions_) {
    if (std::find(topics.begin(), topics.end(), topic) != topics.end())
      queues_[subscriber].push_back(msg);
  }
}

std::vector<BusMessage> MessageBus::drain(const std::string& subscriber) {
  std::lock_guard lock(mu_);
  auto it = queues_.find(subscriber);
  if (it == queues_.end()) return {};
  std::vector<BusMessage> out;
  out.swap(it->second);
  return out;
}

void MessageBus::close() {
  std::lock_guard lock(mu_);
  closed_ = true;
}

std::vector<BusMessage> MessageBus::log() const {
  std::lock_guard lock(mu_);
  return log_;
}

std::vector<ExpertProfile> prepare_experts(
    const std::vector<ChunkCluster>& clusters,
    const std::vector<KnowledgeChunk>& chunks, const ToolRegistry& registry,
    LlmGateway& gateway, std::size_t tools_per_expert) {
  std::vector<ExpertProfile> experts;
  for (const auto& cluster : clusters) {
    if (cluster.cluster_id < 0) continue;  // noise seeds no expert
    ExpertProfile profile;
    profile.cluster_id = cluster.cluster_id;
    profile.name = "Expert-" + std::to_string(cluster.cluster_id);
    profile.chunk_ids = cluster.member_chunk_ids;

    std::ostringstream combined;
    for (const auto& id : cluster.member_chunk_ids) {
      for (const auto& chunk : chunks)
        if (chunk.name == id) combined << chunk.name << " " << chunk.content << "\n";
    }
    std::string text = combined.str();
    if (!text.empty()) {
      profile.centroid = gateway.embed(text);
      if (!registry.empty()) {
        for (const auto& match :
             match_tools(text, registry, gateway, tools_per_expert))
          profile.tool_apis.push_back(match.spec.api_name);
      }
    }

    std::ostringstream tmpl;
    tmpl << "Role: " << profile.name
         << ", a database diagnosis expert for knowledge cluster "
         << cluster.cluster_id << ".\n"
         << "Task: analyze the anomaly with your knowledge and tools.\n"
         << "Steps: detect abnormal metrics, apply matched knowledge, call "
            "tools, report root causes and solutions.\n";
    tmpl << "Knowledge:";
    for (const auto& id : profile.chunk_ids) tmpl << " " << id;
    tmpl << "\nTools:";
    for (const auto& api : profile.tool_apis) tmpl << " " << api;
    profile.prompt_template = tmpl.str();
    experts.push_back(std::move(profile));
  }
  return experts;
}

std::vector<ExpertProfile> assign_experts(
    const std::string& description, const std::vector<ExpertProfile>& experts,
    LlmGateway& gateway, std::size_t fallback_top) {
  if (experts.empty()) return {};
  if (experts.size() == 1) return experts;

  PromptRequest req;
  req.role_preamble =
      "You are the Expert Assigner. Select the most relevant experts for the "
      "anomaly. Answer with the expert names, one per line.";
  std::ostringstream body;
  body << "Anomaly description: " << description << "\nExperts:";
  for (const auto& e : experts) body << " " << e.name << ";";
  req.messages = {{"user", body.str()}};
  Completion c = gateway.complete(req);

  std::vector<ExpertProfile> selected;
  if (c.ok()) {
    for (const auto& e : experts)
      if (c.text.find(e.name) != std::string::npos) selected.push_back(e);
  }
  if (!selected.empty()) return selected;

  // Fallback: centroid cosine similarity against the description.
  auto desc_vec = gateway.embed(description);
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < experts.size(); ++i) {
    const auto& centroid = experts[i].centroid.empty()
                               ? gateway.embed(experts[i].prompt_template.empty()
                                                   ? experts[i].name
                                                   : experts[i].prompt_template)
                               : experts[i].centroid;
    scored.emplace_back(cosine(desc_vec, centroid), i);
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.first > b.first;
  });
  for (std::size_t i = 0; i < scored.size() && i < fallback_top; ++i)
    selected.push_back(experts[scored[i].second]);
  return selected;
}

namespace {

std::string truncate_words(const std::string& text, std::size_t max_words) {
  std::istringstream in(text);
  std::ostringstream out;
  std::string word;
  std::size_t n = 0;
  while (in >> word && n < max_words) {
    if (n) out << " ";
    out << word;
    ++n;
  }
  if (in >> word) out << " ...";
  return out.str();
}

}  // namespace

RunningSummary summarize_record(const RunningSummary& prev,
                                const TranscriptRecord& record,
                                LlmGateway& gateway) {
  PromptRequest req;
  req.role_preamble =
      "Progressively summarize the lines of a record. Incorporate the main "
      "idea of the new record into the current summary. Answer with the "
      "updated summary, one line per point, each starting with '- '.";
  std::ostringstream body;
  body << "[Current summary]\n";
  for (const auto& line : prev.lines) body << line << "\n";
  body << "[New Record]\nThought: " << record.thought
       << "\nAction: " << record.action
       << "\nAction Input: " << record.action_input
       << "\nObservation: " << record.observation << "\n";
  req.messages = {{"user", body.str()}};
  Completion c = gateway.complete(req);

  RunningSummary next;
  next.expert = prev.expert;
  if (c.ok()) {
    std::istringstream lines(c.text);
    std::string line;
    while (std::getline(lines, line))
      if (!line.empty()) next.lines.push_back(line);
    if (next.lines.empty())
      next.lines = prev.lines;  // empty answer keeps the old summary
  } else {
    next.lines = prev.lines;
    next.lines.push_back("- Executed " + record.action + " and observed " +
                         truncate_words(record.observation, 20));
  }
  return next;
}

std::map<std::string, std::vector<std::string>> cross_review(
    const std::vector<ExpertResult>& results, LlmGateway& gateway) {
  std::map<std::string, std::vector<std::string>> advice;
  for (const auto& r : results) advice[r.expert];
  if (results.size() < 2) return advice;

  for (const auto& reviewer : results) {
    for (const auto& author : results) {
      if (reviewer.expert == author.expert) continue;
      PromptRequest req;
      req.role_preamble =
          "Please review the above diagnosis results, and give necessary "
          "advice to correct the incorrect analysis or unclear results.";
      std::ostringstream body;
      body << "Reviewer: " << reviewer.expert << "\nDiagnosis by "
           << author.expert << ":\nRoot causes:";
      for (const auto& c : author.outcome.root_causes) body << " " << c << ";";
      body << "\nSummary:\n";
      for (const auto& line : author.summary.lines) body << line << "\n";
      req.messages = {{"user", body.str()}};
      Completion c = gateway.complete(req);
      if (c.ok() && !c.text.empty())
        advice[author.expert].push_back(reviewer.expert + ": " + c.text);
    }
  }
  return advice;
}

namespace {

std::string format_date(std::int64_t epoch_seconds) {
  std::time_t t = static_cast<std::time_t>(epoch_seconds);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%d", &tm);
  return buf;
}

}  // namespace

DiagnosisReport generate_report(const std::vector<ExpertResult>& results,
                                const AnomalyCase& anomaly) {
  if (results.empty())
    throw CollabError("generate_report: no expert outcomes");

  DiagnosisReport report;
  report.title = "Diagnosis Report: " + truncate_words(anomaly.description, 12);
  report.anomaly_date = format_date(anomaly.query.start_time);
  report.description = anomaly.description;

  // Union of causes, deduplicated by normalized label, ordered by total
  // supporting votes, capped at 4.
  struct CauseEntry {
    std::string label;
    std::string key;
    int votes = 0;
    std::size_t first_seen = 0;
  };
  std::vector<CauseEntry> causes;
  std::size_t order = 0;
  for (const auto& r : results) {
    for (const auto& c : r.outcome.root_causes) {
      std::string key = normalize_metric_name(c);
      auto it = std::find_if(causes.begin(), causes.end(),
                             [&key](const CauseEntry& e) { return e.key == key; });
      if (it == causes.end()) {
        causes.push_back({c, key, r.outcome.winning_votes, order++});
      } else {
        it->votes += r.outcome.winning_votes;
      }
    }
  }
  std::stable_sort(causes.begin(), causes.end(),
                   [](const CauseEntry& a, const CauseEntry& b) {
                     if (a.votes != b.votes) return a.votes > b.votes;
                     return a.first_seen < b.first_seen;
                   });
  if (causes.size() > 4) causes.resize(4);
  for (const auto& c : causes) report.root_causes.push_back(c.label);

  for (const auto& r : results) {
    for (const auto& s : r.outcome.solutions)
      if (std::find(report.solutions.begin(), report.solutions.end(), s) ==
          report.solutions.end())
        report.solutions.push_back(s);
  }

  std::ostringstream process;
  for (const auto& r : results) {
    process << "### " << r.expert << "\n";
    for (const auto& line : r.summary.lines) process << line << "\n";
  }
  report.diagnosis_process = process.str();
  return report;
}

std::string report_to_markdown(const DiagnosisReport& report) {
  std::ostringstream out;
  out << "# " << report.title << "\n\n"
      << "**Anomaly date:** " << report.anomaly_date << "\n\n"
      << "**Description:** " << report.description << "\n\n"
      << "## Root causes\n";
  for (const auto& c : report.root_causes) out << "- " << c << "\n";
  out << "\n## Solutions\n";
  for (const auto& s : report.solutions) out << "- " << s << "\n";
  out << "\n## Diagnosis process\n" << report.diagnosis_process;
  return out.str();
}

std::string report_to_json(const DiagnosisReport& report) {
  json doc = {{"title", report.title},
              {"anomaly_date", report.anomaly_date},
              {"description", report.description},
              {"root_causes", report.root_causes},
              {"solutions", report.solutions},
              {"diagnosis_process", report.diagnosis_process}};
  return doc.dump(2);
}

std::string bus_log_to_jsonl(const std::vector<BusMessage>& log) {
  std::ostringstream out;
  for (const auto& m : log) {
    json obj = {{"seq", m.seq},
                {"publisher", m.publisher},
                {"topic", m.topic},
                {"payload", m.payload},
                {"turn", m.turn}};
    out << obj.dump() << "\n";
  }
  return out.str();
}

CollabSession::CollabSession(LlmGateway& gateway, const ToolRegistry& registry,
                             ToolExecutor executor,
                             const std::vector<KnowledgeChunk>& chunks,
                             CollabConfig config)
    : gateway_(gateway),
      registry_(registry),
      executor_(std::move(executor)),
      chunks_(chunks),
      config_(std::move(config)) {}

CollabResult CollabSession::run(const AnomalyCase& anomaly,
                                const std::vector<ExpertProfile>& selected) {
  if (selected.empty())
    throw CollabError("CollabSession::run: no experts selected");

  struct ExpertState {
    ExpertProfile profile;
    std::vector<KnowledgeChunk> chunks;
    ToolRegistry registry;
    std::unique_ptr<TreeSearchEngine> engine;
    RunningSummary summary;
    std::vector<std::string> delivered;  // findings from other experts
    std::vector<std::string> advice;
    std::size_t summarized = 0;  // transcript records folded so far
    std::size_t published = 0;   // leaves whose causes were published
  };

  MessageBus bus;
  std::vector<ExpertState> states;
  for (const auto& profile : selected) {
    ExpertState state;
    state.profile = profile;
    if (profile.chunk_ids.empty()) {
      state.chunks = chunks_;
    } else {
      for (const auto& chunk : chunks_)
        if (std::find(profile.chunk_ids.begin(), profile.chunk_ids.end(),
                      chunk.name) != profile.chunk_ids.end())
          state.chunks.push_back(chunk);
    }
    if (profile.tool_apis.empty()) {
      state.registry = registry_;
    } else {
      for (const auto& spec : registry_.tools())
        if (std::find(profile.tool_apis.begin(), profile.tool_apis.end(),
                      spec.api_name) != profile.tool_apis.end())
          state.registry.register_tool(spec);
    }
    state.summary.expert = profile.name;
    bus.subscribe(profile.name, {"findings", profile.name});
    states.push_back(std::move(state));
  }
  // Registries and chunk subsets live in the states vector; build engines
  // after it stops reallocating.
  for (auto& state : states) {
    AnomalyCase scoped = anomaly;
    if (!state.profile.prompt_template.empty())
      scoped.description =
          state.profile.prompt_template + "\n" + anomaly.description;
    state.engine = std::make_unique<TreeSearchEngine>(
        gateway_, state.registry, executor_, state.chunks,
        build_corpus_stats(state.chunks, 1.2, 0.75), scoped, config_.search);
  }

  auto refresh_context = [](ExpertState& state) {
    std::ostringstream ctx;
    for (const auto& f : state.delivered) ctx << "Shared finding: " << f << "\n";
    for (const auto& a : state.advice) ctx << "Review advice: " << a << "\n";
    state.engine->set_extra_context(ctx.str());
  };

  auto pump_expert = [&](ExpertState& state) -> bool {
    for (const auto& msg : bus.drain(state.profile.name)) {
      if (msg.publisher == state.profile.name) continue;  // own echo
      state.delivered.push_back(msg.publisher + ": " + msg.payload);
    }
    refresh_context(state);
    if (state.engine->turns_taken() >= config_.search.max_turns) return false;
    if (!state.engine->step()) return false;
    int turns = state.engine->turns_taken();
    if (config_.search.vote_interval > 0 &&
        turns % config_.search.vote_interval == 0)
      state.engine->vote_leaves();

    // Fold the new record into the running summary and publish new findings.
    const auto& transcript = state.engine->transcript();
    while (state.summarized < transcript.size()) {
      state.summary =
          summarize_record(state.summary, transcript[state.summarized], gateway_);
      ++state.summarized;
    }
    for (const auto& node : state.engine->tree().nodes()) {
      for (std::size_t i = 0; i < node.found_causes.size(); ++i) {
        std::string payload = "ROOT CAUSE: " + node.found_causes[i];
        bool already = false;
        for (const auto& m : bus.log())
          if (m.publisher == state.profile.name && m.payload == payload)
            already = true;
        if (!already)
          bus.publish(state.profile.name, "findings", payload, turns);
      }
    }
    return true;
  };

  // Round-robin scheduler tick: one expansion per expert per pass.
  bool progressed = true;
  while (progressed) {
    progressed = false;
    for (auto& state : states)
      if (pump_expert(state)) progressed = true;
  }
  for (auto& state : states) state.engine->vote_leaves();

  auto collect = [&states]() {
    std::vector<ExpertResult> results;
    for (auto& state : states)
      results.push_back(
          {state.profile.name, state.engine->outcome(), state.summary});
    return results;
  };

  std::vector<ExpertResult> results = collect();

  for (int round = 0; round < config_.review_rounds && states.size() > 1;
       ++round) {
    auto advice = cross_review(results, gateway_);
    bool any_advice = false;
    for (auto& state : states) {
      auto it = advice.find(state.profile.name);
      if (it == advice.end() || it->second.empty()) continue;
      any_advice = true;
      state.advice.insert(state.advice.end(), it->second.begin(),
                          it->second.end());
      refresh_context(state);
      // Refinement: bounded extra expansions on the existing tree.
      for (int i = 0; i < config_.search.refine_budget; ++i)
        if (!state.engine->step()) break;
      state.engine->vote_leaves();
      const auto& transcript = state.engine->transcript();
      while (state.summarized < transcript.size()) {
        state.summary = summarize_record(state.summary,
                                         transcript[state.summarized], gateway_);
        ++state.summarized;
      }
    }
    if (!any_advice) break;
    results = collect();
  }

  bus.close();
  CollabResult result;
  result.expert_results = results;
  result.report = generate_report(results, anomaly);
  result.bus_log = bus.log();
  return result;
}

AnomalyCase parse_alert_json(const std::string& text) {
  json doc = json::parse(text);
  AnomalyCase anomaly;
  anomaly.query.start_time = doc.at("start_time").get<std::int64_t>();
  anomaly.query.end_time = doc.at("end_time").get<std::int64_t>();
  if (anomaly.query.start_time >= anomaly.query.end_time)
    throw CollabError("alert window: start_time must precede end_time");
  std::ostringstream desc;
  for (const auto& alert : doc.value("alerts", json::array())) {
    desc << alert.value("name", "alert") << " ["
         << alert.value("severity", "warning")
         << "]: " << alert.value("summary", "") << ". ";
  }
  anomaly.description = desc.str();
  return anomaly;
}

AnomalyCase load_alert_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CollabError("cannot open alert file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_alert_json(buf.str());
}

}  // namespace dbot
