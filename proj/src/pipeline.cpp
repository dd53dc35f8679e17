#include "fairpipe/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "fairpipe/cda.hpp"
#include "fairpipe/classifiers.hpp"
#include "fairpipe/encode.hpp"
#include "fairpipe/serializer.hpp"
#include "fairpipe/sha256.hpp"
#include "json.hpp"

namespace fairpipe {
namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

void write_file(const std::string& path, const std::string& content) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << content;
}

ordered_json fairness_json(const FairnessReport& r) {
  ordered_json j;
  j["acc"] = r.acc;
  j["accp"] = r.accp;
  j["dp"] = r.dp;
  j["eqodds"] = r.eqodds;
  j["eqodds_convention"] = r.convention == EqOddsConvention::kSum ? "sum" : "mean";
  j["dropped_stratum"] = r.dropped_stratum;
  j["n"] = r.n;
  j["group_sizes"] = {r.group_sizes[0], r.group_sizes[1]};
  j["strata"] = {{r.strata[0][0], r.strata[0][1]}, {r.strata[1][0], r.strata[1][1]}};
  return j;
}

std::string stage_label(int stage) {
  switch (stage) {
    case 1: return "no mitigation";
    case 2: return "cda";
    case 3: return "unlearned";
    case 4: return "unlearned + cda";
    default: return "stage " + std::to_string(stage);
  }
}

AdapterConfig adapter_from_json(const nlohmann::json& j) {
  AdapterConfig cfg;
  cfg.rank = j.value("rank", cfg.rank);
  cfg.scaling = j.value("scaling", cfg.scaling);
  cfg.dropout = j.value("dropout", cfg.dropout);
  if (j.contains("target_blocks")) {
    cfg.target_blocks = j.at("target_blocks").get<std::vector<std::string>>();
  }
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.validation_fraction = j.value("validation_fraction", cfg.validation_fraction);
  return cfg;
}

UnlearnRunConfig unlearn_from_json(const nlohmann::json& j) {
  UnlearnRunConfig cfg;
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    cfg.weights.unlearn = w.value("unlearn", 0.0);
    cfg.weights.learn = w.value("learn", 0.0);
    cfg.weights.gap = w.value("gap", 0.0);
    cfg.weights.norm = w.value("norm", 0.0);
  }
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.neutral_batch_size = j.value("neutral_batch_size", cfg.neutral_batch_size);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.validation_fraction = j.value("validation_fraction", cfg.validation_fraction);
  cfg.gap_mode =
      j.value("gap_mode", "normalized") == "raw" ? GapMode::kRaw : GapMode::kNormalized;
  cfg.log_prob_floor = j.value("log_prob_floor", cfg.log_prob_floor);
  cfg.selection = j.value("selection", "best_gap") == "final"
                      ? CheckpointSelection::kFinal
                      : CheckpointSelection::kBestGap;
  return cfg;
}

}  // namespace

ClassifierPath parse_path(const std::string& s) {
  if (s == "tabular") return ClassifierPath::kTabular;
  if (s == "embed") return ClassifierPath::kEmbed;
  if (s == "lm") return ClassifierPath::kLm;
  throw std::invalid_argument("unknown classifier path: " + s + " (use tabular|embed|lm)");
}

std::string path_name(ClassifierPath path) {
  switch (path) {
    case ClassifierPath::kTabular: return "tabular";
    case ClassifierPath::kEmbed: return "embed";
    case ClassifierPath::kLm: return "lm";
  }
  return "?";
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  ExperimentConfig cfg;
  cfg.config_file = path;
  const auto& ds = j.at("dataset");
  cfg.dataset_name = ds.value("name", "dataset");
  cfg.csv_path = ds.at("csv").get<std::string>();
  cfg.schema_path = ds.at("schema").get<std::string>();
  cfg.task_path = j.value("task", "");
  cfg.path = parse_path(j.value("path", "tabular"));
  cfg.stage = j.value("stage", 1);
  if (cfg.stage < 1 || cfg.stage > 4) throw std::runtime_error("stage must be in 1..4");
  if (j.contains("split")) {
    const auto& s = j.at("split");
    cfg.split.seed = s.value("seed", uint64_t(0));
    cfg.split.train_fraction = s.value("train_fraction", 0.8);
    cfg.split.n_repeats = s.value("n_repeats", 3);
  }
  cfg.backend = j.value("backend", "toy");
  if (j.contains("toy")) cfg.toy = toy_config_from_json(j.at("toy").dump());
  cfg.checkpoint_path = j.value("checkpoint", "");
  cfg.qa_path = j.value("qa", "");
  cfg.neutral_path = j.value("neutral", "");
  if (j.contains("adapter")) cfg.adapter = adapter_from_json(j.at("adapter"));
  if (j.contains("unlearn")) cfg.unlearn = unlearn_from_json(j.at("unlearn"));
  if (j.contains("linear")) {
    const auto& l = j.at("linear");
    cfg.linear.reg_strength = l.value("reg_strength", cfg.linear.reg_strength);
    cfg.linear.seed = l.value("seed", cfg.linear.seed);
    cfg.linear.max_iters = l.value("max_iters", cfg.linear.max_iters);
    cfg.linear.grad_tol = l.value("grad_tol", cfg.linear.grad_tol);
    cfg.linear.balanced = l.value("balanced", cfg.linear.balanced);
  }
  cfg.include_sensitive_feature = j.value("include_sensitive_feature", true);
  cfg.token_budget = j.value("token_budget", std::size_t(0));
  cfg.out_dir = j.value("out_dir", "out");
  cfg.seed = j.value("seed", uint64_t(0));
  return cfg;
}

std::unique_ptr<ToyLm> make_backend(const ExperimentConfig& cfg) {
  if (cfg.backend == "toy") return make_toy_model(cfg.toy);
  if (cfg.backend == "toy-file") {
    if (cfg.checkpoint_path.empty()) {
      throw std::runtime_error("backend 'toy-file' needs a checkpoint path");
    }
    return ToyLm::load(cfg.checkpoint_path);
  }
  throw std::runtime_error("unknown backend '" + cfg.backend +
                           "' (registered: toy, toy-file)");
}

std::unique_ptr<ToyLm> obtain_unlearned_backend(const ExperimentConfig& cfg) {
  std::string path = cfg.checkpoint_path.empty()
                         ? cfg.out_dir + "/unlearned_" + cfg.backend + ".json"
                         : cfg.checkpoint_path;
  if (fs::exists(path)) return ToyLm::load(path);
  if (cfg.qa_path.empty() || cfg.neutral_path.empty()) {
    throw std::runtime_error(
        "stage requires an unlearned checkpoint: set 'checkpoint' or provide 'qa' and "
        "'neutral' to train one");
  }
  std::unique_ptr<ToyLm> base = make_backend(cfg);
  std::vector<QAPair> qa = load_qa_dataset(cfg.qa_path);
  std::vector<std::string> neutral = neutral_texts(load_neutral_corpus(cfg.neutral_path));
  UnlearnResult run = train_unlearn(*base, qa, neutral, cfg.unlearn);
  auto* toy = dynamic_cast<ToyLm*>(run.model.get());
  if (!toy) throw std::logic_error("unlearned model is not a toy backend");
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  toy->save(path);
  write_file(cfg.out_dir + "/unlearn_runlog.jsonl", epoch_log_jsonl(run.log));
  return ToyLm::load(path);
}

namespace {

struct PreparedBackend {
  std::unique_ptr<ToyLm> model;
};

std::size_t effective_budget(const ExperimentConfig& cfg, const CausalLM& model,
                             const TaskTemplate* task) {
  if (cfg.token_budget > 0) return cfg.token_budget;
  std::size_t margin = 8;
  std::size_t instruction = 0;
  if (task) {
    instruction =
        model.tokenizer().encode(build_classification_prompt("", *task), false).size();
  }
  std::size_t ctx = std::size_t(model.context_size());
  if (instruction + margin + 1 >= ctx) {
    throw std::runtime_error("instruction leaves no room in the model context");
  }
  return ctx - instruction - margin;
}

SplitOutcome run_split(const ExperimentConfig& cfg, const TabularDataset& data,
                       int repeat, const CausalLM* backend) {
  SplitOutcome result;
  result.repeat = repeat;
  auto [train, test] = split(data, cfg.split, repeat);
  if (cfg.cda()) train = augment(train, flip_spec_from(train));
  result.train_rows = train.size();
  result.test_rows = test.size();

  const std::string sensitive_name =
      data.schema.columns[std::size_t(data.sensitive_index)].name;

  GroupedOutcomes outcomes;
  if (cfg.path == ClassifierPath::kTabular) {
    auto [train_m, test_m, desc] = encode_features(train, test);
    FeatureMatrix tr = cfg.include_sensitive_feature
                           ? append_group_column(train_m, sensitive_name)
                           : train_m;
    FeatureMatrix te = cfg.include_sensitive_feature
                           ? append_group_column(test_m, sensitive_name)
                           : test_m;
    LinearTrainResult fit = train_linear(tr.x, tr.labels, cfg.linear);
    LinearPrediction pred = predict_linear(fit.model, te.x);
    outcomes = {te.labels, pred.labels, te.groups};
  } else {
    auto [train_m, test_m, desc] = encode_features(train, test);
    FeatureOrder order = rank_features(append_group_column(train_m, sensitive_name),
                                       train_m.labels, cfg.seed);
    Imputer imputer = fit_imputer(train);
    TaskTemplate task;
    const bool is_lm = cfg.path == ClassifierPath::kLm;
    if (is_lm) {
      if (cfg.task_path.empty()) throw std::runtime_error("lm path needs a task template");
      task = load_task_template(cfg.task_path);
    }
    std::size_t budget = effective_budget(cfg, *backend, is_lm ? &task : nullptr);
    TokenCounter counter = [backend](const std::string& s) {
      return backend->tokenizer().encode(s, false).size();
    };
    std::vector<SerializedExample> train_ex =
        serialize_dataset(train, order, imputer, budget, counter);
    std::vector<SerializedExample> test_ex =
        serialize_dataset(test, order, imputer, budget, counter);

    if (cfg.path == ClassifierPath::kEmbed) {
      std::unique_ptr<CausalLM> frozen = backend->snapshot();
      FeatureMatrix tr = embed_dataset(*frozen, train_ex);
      FeatureMatrix te = embed_dataset(*frozen, test_ex);
      LinearTrainResult fit = train_linear(tr.x, tr.labels, cfg.linear);
      LinearPrediction pred = predict_linear(fit.model, te.x);
      outcomes = {te.labels, pred.labels, te.groups};
    } else {
      std::vector<std::string> prompts;
      std::vector<int> labels;
      for (const auto& ex : train_ex) {
        prompts.push_back(build_classification_prompt(ex.text, task));
        labels.push_back(ex.label);
      }
      FinetuneResult ft = finetune_lm_classifier(
          *backend, prompts, labels, task, cfg.adapter, cfg.seed * 1000 + uint64_t(repeat));
      std::vector<int> y_true, y_pred, groups;
      for (const auto& ex : test_ex) {
        y_true.push_back(ex.label);
        groups.push_back(ex.group);
        y_pred.push_back(predict_yes_no(*ft.model, build_classification_prompt(ex.text, task),
                                        task.yes_token, task.no_token,
                                        task.positive_means_yes));
      }
      outcomes = {y_true, y_pred, groups};
    }
  }
  result.fairness = fairness_report(outcomes);
  result.ok = true;
  return result;
}

ordered_json split_json(const SplitOutcome& s) {
  ordered_json j;
  j["repeat"] = s.repeat;
  j["ok"] = s.ok;
  if (!s.ok) {
    j["error"] = s.error;
    return j;
  }
  j["train_rows"] = s.train_rows;
  j["test_rows"] = s.test_rows;
  j["fairness"] = fairness_json(s.fairness);
  return j;
}

}  // namespace

StageReport run_stage(const ExperimentConfig& cfg) {
  if (cfg.path == ClassifierPath::kTabular && cfg.unlearned()) {
    throw std::invalid_argument("the tabular path has no model to unlearn (stage " +
                                std::to_string(cfg.stage) + ")");
  }
  StageReport report;
  report.dataset = cfg.dataset_name;
  report.model = cfg.path == ClassifierPath::kTabular ? "logistic" : cfg.backend;
  report.path = cfg.path;
  report.stage = cfg.stage;
  report.cda = cfg.cda();
  report.unlearned = cfg.unlearned();

  if (!cfg.config_file.empty()) report.config_hash = sha256_file_hex(cfg.config_file);
  for (const std::string& file :
       {cfg.csv_path, cfg.schema_path, cfg.task_path, cfg.qa_path, cfg.neutral_path}) {
    if (!file.empty() && fs::exists(file)) {
      report.input_hashes.emplace_back(file, sha256_file_hex(file));
    }
  }

  DatasetSchema schema = load_schema(cfg.schema_path);
  TabularDataset data = load_dataset(cfg.csv_path, schema, cfg.dataset_name);

  std::unique_ptr<ToyLm> backend;
  if (cfg.path != ClassifierPath::kTabular) {
    backend = cfg.unlearned() ? obtain_unlearned_backend(cfg) : make_backend(cfg);
  }

  for (int repeat = 0; repeat < cfg.split.n_repeats; ++repeat) {
    SplitOutcome outcome;
    try {
      outcome = run_split(cfg, data, repeat, backend.get());
    } catch (const std::exception& e) {
      outcome.repeat = repeat;
      outcome.ok = false;
      outcome.error = e.what();
    }
    // Each split lands in its own file before aggregation.
    write_file(cfg.out_dir + "/split_" + std::to_string(repeat) + ".json",
               split_json(outcome).dump(2) + "\n");
    report.splits.push_back(std::move(outcome));
  }

  std::size_t ok = 0;
  for (const auto& s : report.splits) {
    if (!s.ok) continue;
    ++ok;
    report.aggregate.acc += s.fairness.acc;
    report.aggregate.accp += s.fairness.accp;
    report.aggregate.dp += s.fairness.dp;
    report.aggregate.eqodds += s.fairness.eqodds;
  }
  if (ok > 0) {
    report.aggregate.acc /= double(ok);
    report.aggregate.accp /= double(ok);
    report.aggregate.dp /= double(ok);
    report.aggregate.eqodds /= double(ok);
  }
  report.partial = ok < report.splits.size();

  write_file(cfg.out_dir + "/report.json", stage_report_json(report));
  return report;
}

std::string stage_report_json(const StageReport& report) {
  ordered_json j;
  j["dataset"] = report.dataset;
  j["model"] = report.model;
  j["path"] = path_name(report.path);
  j["stage"] = report.stage;
  j["stage_label"] = stage_label(report.stage);
  j["mitigation"] = {{"cda", report.cda}, {"unlearned", report.unlearned}};
  j["partial"] = report.partial;
  j["splits"] = ordered_json::array();
  for (const auto& s : report.splits) j["splits"].push_back(split_json(s));
  ordered_json agg;
  agg["acc"] = report.aggregate.acc;
  agg["accp"] = report.aggregate.accp;
  agg["dp"] = report.aggregate.dp;
  agg["eqodds"] = report.aggregate.eqodds;
  j["aggregate"] = agg;
  j["provenance"] = ordered_json::object();
  j["provenance"]["config_sha256"] = report.config_hash;
  ordered_json inputs = ordered_json::object();
  for (const auto& [file, hash] : report.input_hashes) inputs[file] = hash;
  j["provenance"]["input_sha256"] = inputs;
  return j.dump(2) + "\n";
}

StageReport stage_report_from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  StageReport r;
  r.dataset = j.at("dataset").get<std::string>();
  r.model = j.at("model").get<std::string>();
  r.path = parse_path(j.at("path").get<std::string>());
  r.stage = j.at("stage").get<int>();
  r.cda = j.at("mitigation").at("cda").get<bool>();
  r.unlearned = j.at("mitigation").at("unlearned").get<bool>();
  r.partial = j.at("partial").get<bool>();
  const auto& agg = j.at("aggregate");
  r.aggregate.acc = agg.at("acc").get<double>();
  r.aggregate.accp = agg.at("accp").get<double>();
  r.aggregate.dp = agg.at("dp").get<double>();
  r.aggregate.eqodds = agg.at("eqodds").get<double>();
  for (const auto& s : j.at("splits")) {
    SplitOutcome o;
    o.repeat = s.at("repeat").get<int>();
    o.ok = s.at("ok").get<bool>();
    if (o.ok) {
      o.train_rows = s.at("train_rows").get<std::size_t>();
      o.test_rows = s.at("test_rows").get<std::size_t>();
      const auto& f = s.at("fairness");
      o.fairness.acc = f.at("acc").get<double>();
      o.fairness.accp = f.at("accp").get<double>();
      o.fairness.dp = f.at("dp").get<double>();
      o.fairness.eqodds = f.at("eqodds").get<double>();
    } else {
      o.error = s.value("error", "");
    }
    r.splits.push_back(std::move(o));
  }
  r.config_hash = j.at("provenance").value("config_sha256", "");
  return r;
}

IntrinsicReport run_intrinsic_eval(const ExperimentConfig& cfg) {
  if (cfg.qa_path.empty()) throw std::runtime_error("intrinsic eval needs a 'qa' dataset");
  std::vector<QAPair> qa = load_qa_dataset(cfg.qa_path);
  std::vector<std::string> neutral;
  if (!cfg.neutral_path.empty()) {
    neutral = neutral_texts(load_neutral_corpus(cfg.neutral_path));
  }
  std::unique_ptr<ToyLm> backend =
      cfg.unlearned() ? obtain_unlearned_backend(cfg) : make_backend(cfg);
  IntrinsicReport report = intrinsic_gap_report(*backend, qa, neutral);
  write_file(cfg.out_dir + "/intrinsic.json", intrinsic_report_json(report));
  write_file(cfg.out_dir + "/intrinsic.csv", intrinsic_table_csv(report));
  return report;
}

std::string intrinsic_report_json(const IntrinsicReport& report) {
  ordered_json j;
  auto ctx = [](const ContextIntrinsic& c) {
    ordered_json o;
    o["antistereotype"] = c.mean_anti;
    o["stereotype"] = c.mean_stereo;
    o["gap"] = c.gap;
    o["pairs"] = c.n_pairs;
    return o;
  };
  j["poverty"] = ctx(report.poverty);
  j["wealth"] = ctx(report.wealth);
  j["perplexity"] = report.perplexity;
  return j.dump(2) + "\n";
}

std::string intrinsic_table_csv(const IntrinsicReport& report) {
  std::ostringstream out;
  out << "AntiStero_poverty,Stero_poverty,GAP_poverty,"
         "AntiStero_wealth,Stero_wealth,GAP_wealth,Perplexity\n";
  out << report.poverty.mean_anti << ',' << report.poverty.mean_stereo << ','
      << report.poverty.gap << ',' << report.wealth.mean_anti << ','
      << report.wealth.mean_stereo << ',' << report.wealth.gap << ','
      << report.perplexity << '\n';
  return out.str();
}

namespace {

std::string svg_bar_chart(const std::string& title, std::span<const std::string> names,
                          std::span<const double> values) {
  const double width = 420.0, height = 260.0, base = 220.0, left = 40.0;
  double vmax = 1e-9;
  for (double v : values) vmax = std::max(vmax, v);
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\">\n";
  svg << "<text x=\"10\" y=\"20\" font-size=\"14\">" << title << "</text>\n";
  double slot = (width - left - 20.0) / double(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    double h = (base - 50.0) * values[i] / vmax;
    double x = left + double(i) * slot;
    svg << "<rect x=\"" << x << "\" y=\"" << base - h << "\" width=\"" << slot * 0.7
        << "\" height=\"" << h << "\" fill=\"#4472a8\"/>\n";
    svg << "<text x=\"" << x << "\" y=\"" << base + 16 << "\" font-size=\"10\">"
        << names[i] << "</text>\n";
    svg << "<text x=\"" << x << "\" y=\"" << base - h - 4 << "\" font-size=\"10\">"
        << values[i] << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace

void emit_report_table(std::span<const StageReport> reports, const std::string& out_dir,
                       bool plots) {
  if (reports.empty()) throw std::invalid_argument("no reports to tabulate");
  std::vector<const StageReport*> rows;
  for (const auto& r : reports) rows.push_back(&r);
  std::stable_sort(rows.begin(), rows.end(), [](const StageReport* a, const StageReport* b) {
    auto key = [](const StageReport* r) {
      return std::tie(r->dataset, r->path, r->model, r->stage);
    };
    return key(a) < key(b);
  });

  std::ostringstream csv;
  csv << "dataset,path,model,stage,stage_label,acc,accp,dp,eqodds,partial\n";
  for (const StageReport* r : rows) {
    csv << r->dataset << ',' << path_name(r->path) << ',' << r->model << ',' << r->stage
        << ',' << stage_label(r->stage) << ',' << r->aggregate.acc << ','
        << r->aggregate.accp << ',' << r->aggregate.dp << ',' << r->aggregate.eqodds
        << ',' << (r->partial ? 1 : 0) << '\n';
  }
  write_file(out_dir + "/table.csv", csv.str());

  std::ostringstream md;
  md << "| Dataset | Path | Model | Stage | Acc | AccP | DP | EqOdds |\n";
  md << "|---|---|---|---|---|---|---|---|\n";
  for (const StageReport* r : rows) {
    md << "| " << r->dataset << " | " << path_name(r->path) << " | " << r->model << " | "
       << stage_label(r->stage) << " | " << r->aggregate.acc << " | " << r->aggregate.accp
       << " | " << r->aggregate.dp << " | " << r->aggregate.eqodds << " |\n";
  }
  write_file(out_dir + "/table.md", md.str());

  if (plots) {
    std::vector<std::string> names;
    std::vector<double> dp, eqodds;
    for (const StageReport* r : rows) {
      names.push_back(r->dataset + "/" + path_name(r->path) + "/s" +
                      std::to_string(r->stage));
      dp.push_back(r->aggregate.dp);
      eqodds.push_back(r->aggregate.eqodds);
    }
    write_file(out_dir + "/plots/dp.svg",
               svg_bar_chart("Demographic parity by stage", names, dp));
    write_file(out_dir + "/plots/eqodds.svg",
               svg_bar_chart("Equality of odds by stage", names, eqodds));
  }
}

}  // namespace fairpipe
