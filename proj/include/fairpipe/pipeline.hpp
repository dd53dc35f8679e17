#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fairpipe/adapters.hpp"
#include "fairpipe/dataset.hpp"
#include "fairpipe/linear.hpp"
#include "fairpipe/metrics.hpp"
#include "fairpipe/toy_lm.hpp"
#include "fairpipe/unlearning.hpp"

namespace fairpipe {

enum class ClassifierPath { kTabular, kEmbed, kLm };
ClassifierPath parse_path(const std::string& s);
std::string path_name(ClassifierPath path);

// One experiment cell: dataset x classifier path x pipeline stage.
// Stages: 1 = no mitigation, 2 = CDA, 3 = unlearned backend, 4 = both.
struct ExperimentConfig {
  std::string dataset_name;
  std::string csv_path;
  std::string schema_path;
  std::string task_path;  // LM paths
  ClassifierPath path = ClassifierPath::kTabular;
  int stage = 1;
  SplitSpec split;
  std::string backend = "toy";
  ToyLMConfig toy;
  std::string checkpoint_path;  // unlearned model, loaded or produced here
  std::string qa_path;
  std::string neutral_path;
  AdapterConfig adapter;
  UnlearnRunConfig unlearn;
  LinearTrainConfig linear;
  bool include_sensitive_feature = true;
  std::size_t token_budget = 0;  // 0: context minus instruction minus margin
  std::string out_dir = "out";
  uint64_t seed = 0;

  std::string config_file;  // provenance
  bool cda() const { return stage == 2 || stage == 4; }
  bool unlearned() const { return stage == 3 || stage == 4; }
};

ExperimentConfig load_experiment_config(const std::string& path);

struct SplitOutcome {
  int repeat = 0;
  bool ok = false;
  std::string error;
  FairnessReport fairness;
  std::size_t train_rows = 0;
  std::size_t test_rows = 0;
};

struct StageReport {
  std::string dataset;
  std::string model;  // backend name or "logistic"
  ClassifierPath path = ClassifierPath::kTabular;
  int stage = 1;
  bool cda = false;
  bool unlearned = false;
  std::vector<SplitOutcome> splits;
  FairnessReport aggregate;  // arithmetic mean over successful splits
  bool partial = false;
  std::string config_hash;
  std::vector<std::pair<std::string, std::string>> input_hashes;  // (file, sha256)
};

// Executes ingest -> (CDA) -> serialize -> train/predict -> metrics for each
// repeated split; deterministic given the config. Writes per-split JSON files
// plus report.json under out_dir.
StageReport run_stage(const ExperimentConfig& cfg);

// Intrinsic probe: per-context stereotype/antistereotype means, gaps, and
// perplexity. Writes intrinsic.json and a Table-1-shaped CSV.
IntrinsicReport run_intrinsic_eval(const ExperimentConfig& cfg);

std::string stage_report_json(const StageReport& report);
StageReport stage_report_from_json(const std::string& json_text);
std::string intrinsic_report_json(const IntrinsicReport& report);
std::string intrinsic_table_csv(const IntrinsicReport& report);

// table.csv + table.md with rows grouped per model and ordered by stage
// (no mitigation, CDA, unlearned, combined); optional SVG bar charts of the
// parity metrics per stage.
void emit_report_table(std::span<const StageReport> reports, const std::string& out_dir,
                       bool plots = false);

// Loads (or trains and saves) the unlearned checkpoint for a config.
std::unique_ptr<ToyLm> obtain_unlearned_backend(const ExperimentConfig& cfg);

// Builds the configured backend; only the "toy" backend is registered at
// desk scale, real checkpoints plug in through the same key.
std::unique_ptr<ToyLm> make_backend(const ExperimentConfig& cfg);

}  // namespace fairpipe
