#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dbot/collab.hpp"

namespace dbot {

// Micro-benchmark harness: anomaly cases with scripted fixtures, accuracy
// scoring and per-application tabulation.

enum class Application {
  iot,
  e_commerce,
  financial,
  business_intel,
  file_sharing,
  social_media,
};

class BenchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyLabels : public BenchError {
 public:
  EmptyLabels() : BenchError("accuracy: labels must be non-empty") {}
};

class SchemaViolation : public BenchError {
 public:
  SchemaViolation(const std::string& case_id, const std::string& what)
      : BenchError("case '" + case_id + "': " + what) {}
};

Application parse_application(const std::string& name);  // throws BenchError
std::string application_name(Application app);

// The ten ground-truth root-cause labels, lowercase snake case.
const std::array<std::string, 10>& root_cause_vocabulary();

struct CaseFixtures {
  std::string rules_path;          // scripted gateway rules (required)
  std::string tools_path;          // tool manifest (required)
  std::string tool_fixtures_path;  // canonical call -> observation map
  std::string knowledge_path;      // knowledge.json, optional
  std::string metrics_path;        // metric series JSONL, optional
};

struct BenchmarkCase {
  std::string case_id;
  Application application = Application::e_commerce;
  std::string description;
  std::vector<std::string> labels;
  std::int64_t start_time = 0;
  std::int64_t end_time = 0;
  CaseFixtures fixtures;
  std::optional<double> heval;  // human-supplied, never computed
};

struct AccParams {
  double sigma = 0.1;
  std::size_t max_causes = 4;
};

struct AccResult {
  double acc = 0.0;
  std::size_t a_c = 0;  // correct
  std::size_t a_a = 0;  // ground truth
  std::size_t a_w = 0;  // wrong
  std::vector<std::string> scored;  // predicted after dedup + truncation
};

// §-style precision score: dedup predicted, truncate to max_causes, then
// acc = (A_c - sigma*A_w)/A_a when A_a > 0 and A_c >= sigma*A_w, else 0.
AccResult accuracy(const std::vector<std::string>& predicted,
                   const std::vector<std::string>& labels,
                   const AccParams& params = {});

// cases.json: array of case objects. Paths inside fixtures are resolved
// relative to the case file's directory.
std::vector<BenchmarkCase> load_cases(const std::string& path);

struct CaseResult {
  std::string case_id;
  Application application = Application::e_commerce;
  std::vector<std::string> predicted;
  std::size_t a_c = 0;
  std::size_t a_a = 0;
  std::size_t a_w = 0;
  double acc = 0.0;
  std::optional<double> heval;
  bool errored = false;
  std::string error;
};

struct BenchConfig {
  CollabConfig collab;
  AccParams acc;
  std::uint64_t seed = 0;
  std::size_t embed_dim = 64;
  bool parallel = true;
};

struct BenchReport {
  std::vector<CaseResult> results;  // input order
  std::map<std::string, double> mean_acc_by_application;
  double mean_acc = 0.0;
  bool any_errors = false;
};

// Each case gets an isolated gateway/registry/executor, runs the collaborative
// pipeline and is scored with accuracy(). Case errors are recorded, not fatal.
BenchReport run_benchmark(const std::vector<BenchmarkCase>& cases,
                          const BenchConfig& config = {});

std::string results_to_csv(const BenchReport& report);
std::string results_to_markdown(const BenchReport& report);

}  // namespace dbot
