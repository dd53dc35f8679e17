// Acceptance suite: one checkable criterion per number, each printing a
// single PASS/FAIL line. Run with no arguments for all criteria or pass the
// numbers to run. Exit code = number of failures.
//
// Criteria 2 and 7 evaluate the real benchmark datasets and need
// data/adult.csv, data/german_credit.csv and data/acs_employment_ut2018.csv
// (see scripts/fetch_data.py); they fail with a clear message when the files
// are absent.

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <vector>

#include "fairpipe/cda.hpp"
#include "fairpipe/classifiers.hpp"
#include "fairpipe/metrics.hpp"
#include "fairpipe/pipeline.hpp"
#include "fairpipe/serializer.hpp"
#include "fairpipe/toy_lm.hpp"
#include "fairpipe/unlearning.hpp"
#include "../grad_check.hpp"

using namespace fairpipe;
namespace fs = std::filesystem;

namespace {

struct Check {
  bool ok = true;
  std::string detail;

  void expect(bool condition, const std::string& what) {
    if (!condition) {
      ok = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(6);
  ss << v;
  return ss.str();
}

ToyLMConfig planted_toy_config() {
  ToyLMConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 32;
  cfg.context = 64;
  cfg.seed = 11;
  cfg.init_scale = 0.08;
  cfg.unembed_scale = 0.6;
  cfg.tied_pairs = {{"men", "women"}};
  cfg.planted_bias = PlantedBias{"poor", "women", 2.0};
  return cfg;
}

struct ToySetup {
  std::unique_ptr<ToyLm> model;
  std::vector<QAPair> qa;
  std::vector<std::string> neutral;
};

ToySetup planted_toy_setup() {
  ToySetup setup;
  setup.model = make_toy_model(planted_toy_config());
  setup.qa = load_qa_dataset("data/qa/poor_or_rich_toy.jsonl");
  setup.neutral = neutral_texts(load_neutral_corpus("data/neutral/neutral_toy.jsonl"));
  return setup;
}

// ---- criterion 1: metric oracle equivalence ----
Check criterion_1() {
  Check check;
  std::mt19937_64 rng(1234);
  std::uniform_int_distribution<std::size_t> size_dist(2, 200);
  std::uniform_int_distribution<int> bit(0, 1);
  int compared = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    GroupedOutcomes o;
    std::size_t n = size_dist(rng);
    for (std::size_t i = 0; i < n; ++i) {
      o.y_true.push_back(bit(rng));
      o.y_pred.push_back(bit(rng));
      o.group.push_back(bit(rng));
    }
    o.group[0] = 0;
    o.group[n - 1] = 1;
    bool main_threw = false, oracle_threw = false;
    FairnessReport a, b;
    try {
      a = fairness_report(o);
    } catch (const std::invalid_argument&) {
      main_threw = true;
    }
    try {
      b = brute_force_fairness(o);
    } catch (const std::invalid_argument&) {
      oracle_threw = true;
    }
    check.expect(main_threw == oracle_threw, "error behavior diverged");
    if (main_threw || oracle_threw) continue;
    ++compared;
    check.expect(std::abs(a.acc - b.acc) <= 1e-12, "acc diverged");
    check.expect(std::abs(a.accp - b.accp) <= 1e-12, "accp diverged");
    check.expect(std::abs(a.dp - b.dp) <= 1e-12, "dp diverged");
    check.expect(std::abs(a.eqodds - b.eqodds) <= 1e-12, "eqodds diverged");
    if (!check.ok) break;
  }
  check.expect(compared >= 500, "too few comparable tables");
  return check;
}

// ---- criterion 2: Table 2 logistic baselines on the real datasets ----
struct Anchor {
  std::string config;
  std::string csv;
  double acc, acc_tol;
  double dp = -1, dp_tol = 0;
  double eqodds = -1, eqodds_tol = 0;
};

Check criterion_2() {
  Check check;
  std::vector<Anchor> anchors = {
      {"data/configs/adult_logreg.json", "data/adult.csv", 0.812, 0.02, 0.326, 0.06,
       0.365, 0.08},
      {"data/configs/german_logreg.json", "data/german_credit.csv", 0.738, 0.05},
      {"data/configs/acs_logreg.json", "data/acs_employment_ut2018.csv", 0.701, 0.03},
  };
  for (const Anchor& anchor : anchors) {
    if (!fs::exists(anchor.csv)) {
      check.expect(false, anchor.csv +
                              " missing (fetch with scripts/fetch_data.py; this "
                              "environment has no dataset access)");
      continue;
    }
    ExperimentConfig cfg = load_experiment_config(anchor.config);
    cfg.out_dir = "out/acceptance_" + cfg.dataset_name;
    StageReport report = run_stage(cfg);
    check.expect(!report.partial, anchor.csv + ": some splits failed");
    check.expect(std::abs(report.aggregate.acc - anchor.acc) <= anchor.acc_tol,
                 cfg.dataset_name + " acc=" + fmt(report.aggregate.acc) + " vs " +
                     fmt(anchor.acc) + "±" + fmt(anchor.acc_tol));
    if (anchor.dp >= 0) {
      check.expect(std::abs(report.aggregate.dp - anchor.dp) <= anchor.dp_tol,
                   cfg.dataset_name + " dp=" + fmt(report.aggregate.dp) + " vs " +
                       fmt(anchor.dp) + "±" + fmt(anchor.dp_tol));
    }
    if (anchor.eqodds >= 0) {
      check.expect(std::abs(report.aggregate.eqodds - anchor.eqodds) <= anchor.eqodds_tol,
                   cfg.dataset_name + " eqodds=" + fmt(report.aggregate.eqodds) + " vs " +
                       fmt(anchor.eqodds) + "±" + fmt(anchor.eqodds_tol));
    }
  }
  return check;
}

// ---- criterion 3: Table 1 arithmetic ----
Check criterion_3() {
  Check check;
  // stored per-pair probabilities averaging to (anti 0.220, stereo 0.780)
  std::vector<PairProbability> poverty = {{0.8, 0.2}, {0.76, 0.24}};
  std::vector<PairProbability> wealth = {{0.566, 0.434}, {0.566, 0.434}};
  IntrinsicReport report = aggregate_intrinsic(poverty, wealth, 9.4515);
  check.expect(std::abs(report.poverty.mean_anti - 0.220) <= 1e-12, "mean anti");
  check.expect(std::abs(report.poverty.mean_stereo - 0.780) <= 1e-12, "mean stereo");
  check.expect(std::abs(report.poverty.gap - 0.560) <= 1e-12,
               "gap=" + fmt(report.poverty.gap) + " not 0.560");

  ToyLMConfig uniform;
  uniform.layers = 1;
  uniform.hidden = 16;
  uniform.context = 32;
  uniform.init_scale = 0.0;
  auto model = make_toy_model(uniform);
  std::vector<std::string> corpus = {"who are poor?", "what is the color of the sky?"};
  double ppl = perplexity(*model, corpus);
  check.expect(std::abs(ppl - double(model->vocab_size())) <= 1e-9,
               "uniform ppl=" + fmt(ppl) + " vs V=" + fmt(double(model->vocab_size())));
  return check;
}

// ---- criterion 4: gradient verification ----
Check criterion_4() {
  Check check;
  ToySetup setup = planted_toy_setup();
  std::unique_ptr<CausalLM> reference = setup.model->snapshot();
  // move off the reference point so the KL gradient is non-trivial
  {
    auto params = setup.model->trainable_params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      params[i] += 0.02 * std::sin(0.1 * double(i));
    }
  }
  std::vector<QAPair> batch(setup.qa.begin(), setup.qa.begin() + 4);
  std::vector<std::string> neutral(setup.neutral.begin(), setup.neutral.begin() + 4);
  CausalLM& model = *setup.model;

  auto run = [&](const char* name, std::function<double()> value,
                 std::function<double()> backward) {
    grad_check::Result r = grad_check::check(model, value, backward, 64, 2024);
    check.expect(r.max_rel_err < 1e-3,
                 std::string(name) + " max rel err " + fmt(r.max_rel_err));
  };
  run("L_unlearn", [&] { return loss_unlearn(model, batch); },
      [&] { return backward_loss_unlearn(model, batch, 1.0); });
  run("L_learn", [&] { return loss_learn(model, batch); },
      [&] { return backward_loss_learn(model, batch, 1.0); });
  run("L_gap", [&] { return loss_gap(model, batch); },
      [&] { return backward_loss_gap(model, batch, 1.0); });
  run("L_norm", [&] { return loss_norm(model, *reference, neutral); },
      [&] { return backward_loss_norm(model, *reference, neutral, 1.0); });
  return check;
}

UnlearnRunConfig best_weights_config() {
  UnlearnRunConfig cfg;
  cfg.weights = {0.5, 0.25, 0.25, 1.0};  // the best reported configuration
  cfg.learning_rate = 1e-3;
  cfg.epochs = 40;
  cfg.batch_size = 8;
  cfg.neutral_batch_size = 4;
  cfg.seed = 3;
  cfg.validation_fraction = 0.25;
  return cfg;
}

// ---- criterion 5: toy unlearning efficacy ----
Check criterion_5() {
  Check check;
  ToySetup setup = planted_toy_setup();
  IntrinsicReport before = intrinsic_gap_report(*setup.model, setup.qa, setup.neutral);
  check.expect(before.poverty.gap >= 0.5,
               "initial poverty gap " + fmt(before.poverty.gap) + " < 0.5");

  UnlearnResult run = train_unlearn(*setup.model, setup.qa, setup.neutral,
                                    best_weights_config());
  check.expect(!run.aborted, "training aborted");
  IntrinsicReport after = intrinsic_gap_report(*run.model, setup.qa, setup.neutral);
  check.expect(after.poverty.gap <= 0.2,
               "final poverty gap " + fmt(after.poverty.gap) + " > 0.2");
  double rel_ppl = std::abs(after.perplexity - before.perplexity) / before.perplexity;
  check.expect(rel_ppl <= 0.10, "perplexity drifted " + fmt(100 * rel_ppl) + "%");
  return check;
}

// ---- criterion 6: bias-flip ablation ----
Check criterion_6() {
  Check check;
  ToySetup setup = planted_toy_setup();
  IntrinsicReport before = intrinsic_gap_report(*setup.model, setup.qa, setup.neutral);

  // learning-only drives the antistereotype probability above 0.9 (the flip)
  UnlearnRunConfig learn_only = best_weights_config();
  learn_only.weights = {0, 1, 0, 0};
  learn_only.selection = CheckpointSelection::kFinal;  // end-state ablation
  UnlearnResult flipped = train_unlearn(*setup.model, setup.qa, setup.neutral, learn_only);
  IntrinsicReport after = intrinsic_gap_report(*flipped.model, setup.qa, setup.neutral);
  double mean_anti = 0.5 * (after.poverty.mean_anti + after.wealth.mean_anti);
  check.expect(mean_anti >= 0.9, "learning-only mean p_anti " + fmt(mean_anti) + " < 0.9");

  // KL-only anchors the parameters: the gap stays where it started
  UnlearnRunConfig kl_only = best_weights_config();
  kl_only.weights = {0, 0, 0, 1};
  kl_only.selection = CheckpointSelection::kFinal;
  UnlearnResult anchored = train_unlearn(*setup.model, setup.qa, setup.neutral, kl_only);
  IntrinsicReport kl_after =
      intrinsic_gap_report(*anchored.model, setup.qa, setup.neutral);
  check.expect(std::abs(kl_after.poverty.gap - before.poverty.gap) <= 0.05,
               "KL-only poverty gap moved " +
                   fmt(std::abs(kl_after.poverty.gap - before.poverty.gap)));
  check.expect(std::abs(kl_after.wealth.gap - before.wealth.gap) <= 0.05,
               "KL-only wealth gap moved");
  return check;
}

// ---- criterion 7: CDA invariants on the real training splits ----
void check_cda_on(const TabularDataset& data, const SplitSpec& spec, Check* check) {
  for (int repeat = 0; repeat < spec.n_repeats; ++repeat) {
    auto [train, test] = split(data, spec, repeat);
    TabularDataset augmented = augment(train, flip_spec_from(train));
    check->expect(augmented.size() == 2 * train.size(), "size not doubled");
    std::size_t group1 = 0;
    for (std::size_t r = 0; r < augmented.size(); ++r) {
      group1 += std::size_t(augmented.group_of(r));
    }
    check->expect(2 * group1 == augmented.size(), "marginal not exactly balanced");
    // per-label demographic parity of the label marginal is exactly zero
    GroupedOutcomes o{augmented.labels(), augmented.labels(), augmented.groups()};
    check->expect(demographic_parity(o) == 0.0, "per-label DP not exactly zero");
  }
}

Check criterion_7() {
  Check check;
  struct Entry {
    const char* csv;
    const char* schema;
  };
  std::vector<Entry> datasets = {
      {"data/adult.csv", "data/schemas/adult.json"},
      {"data/german_credit.csv", "data/schemas/german_credit.json"},
      {"data/acs_employment_ut2018.csv", "data/schemas/acs_employment.json"},
  };
  SplitSpec spec{7, 0.8, 3};
  for (const Entry& entry : datasets) {
    if (!fs::exists(entry.csv)) {
      check.expect(false, std::string(entry.csv) +
                              " missing (fetch with scripts/fetch_data.py; this "
                              "environment has no dataset access)");
      continue;
    }
    TabularDataset data = load_dataset(entry.csv, load_schema(entry.schema));
    check_cda_on(data, spec, &check);
  }
  return check;
}

// ---- criterion 8: classifier contracts ----
Check criterion_8() {
  Check check;
  ToySetup setup = planted_toy_setup();

  // restricted argmax + tie rule on constructed logit differences: raise the
  // "no" logit everywhere via the vocabulary bias, then verify through the
  // planted margin machinery instead of hand-built tables (those live in the
  // unit tests); here the contract is exercised through a trained adapter run.
  TaskTemplate task;
  task.instruction = "answer yes or no";
  std::vector<std::string> prompts = {
      build_classification_prompt("color is blue.", task),
      build_classification_prompt("money is debt.", task)};
  std::vector<int> labels = {1, 0};

  AdapterConfig cfg;
  cfg.rank = 4;
  cfg.scaling = 8.0;
  cfg.dropout = 0.0;
  cfg.epochs = 180;  // full-batch: one step per epoch, within the 200-step cap
  cfg.batch_size = 2;
  cfg.learning_rate = 0.02;
  cfg.validation_fraction = 0.0;

  uint64_t base_before = param_hash(setup.model->base_params());
  FinetuneResult result =
      finetune_lm_classifier(*setup.model, prompts, labels, task, cfg, 1);
  check.expect(result.step_loss.size() <= 200,
               "took " + std::to_string(result.step_loss.size()) + " steps");
  check.expect(param_hash(setup.model->base_params()) == base_before,
               "source base parameters changed");
  auto* host = dynamic_cast<AdapterHost*>(result.model.get());
  check.expect(host != nullptr && param_hash(host->base_params()) == base_before,
               "returned base parameters changed");

  int yes_id = *result.model->tokenizer().single_token_id("yes");
  int no_id = *result.model->tokenizer().single_token_id("no");
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    std::vector<double> logits =
        result.model->next_token_logits(result.model->tokenize(prompts[i]));
    std::vector<double> probs = logits;
    softmax_inplace(probs);
    double gold = probs[std::size_t(labels[i] == 1 ? yes_id : no_id)];
    check.expect(gold >= 0.9, "gold-token probability " + fmt(gold) + " < 0.9");

    // restricted argmax agrees with the sign of the yes/no logit difference,
    // and is invariant to adding a constant to every logit
    int predicted = predict_yes_no(*result.model, prompts[i], "yes", "no");
    int by_sign = logits[std::size_t(yes_id)] >= logits[std::size_t(no_id)] ? 1 : 0;
    check.expect(predicted == by_sign, "argmax disagrees with the logit order");
    check.expect(predicted == labels[i], "prediction wrong after training");
  }

  // tie rule: a model whose pair logits are exactly tied answers yes
  ToyLMConfig tied;
  tied.layers = 1;
  tied.hidden = 16;
  tied.context = 32;
  tied.seed = 2;
  tied.tied_pairs = {{"yes", "no"}};
  auto tie_model = make_toy_model(tied);
  check.expect(predict_yes_no(*tie_model, "who are poor?", "yes", "no") == 1,
               "tie did not resolve to yes");
  return check;
}

// ---- criterion 9: serialization golden files ----
Check criterion_9() {
  Check check;
  Record row = {{"age", true, "", 27.0},
                {"workclass", false, "Private", 0.0},
                {"hours-per-week", true, "", 46.0},
                {"sex", false, "male", 0.0},
                {"education", false, "HS-grad", 0.0},
                {"occupation", false, "Sales", 0.0}};
  FeatureOrder ranking;
  for (const char* name :
       {"workclass", "hours-per-week", "sex", "age", "education", "occupation"}) {
    ranking.ranked.push_back(name);
    ranking.scores[name] = double(6 - ranking.ranked.size());
  }
  std::string text = serialize_record(row, ranking);
  const std::string prefix =
      "workclass is Private. hours-per-week is 46. sex is male. age is 27.";
  check.expect(text.rfind(prefix, 0) == 0, "golden prefix mismatch: " + text);

  // truncation keeps exactly the top-ranked statements for every budget
  auto words = [](const std::string& s) {
    std::size_t n = 0;
    std::istringstream ss(s);
    std::string w;
    while (ss >> w) ++n;
    return n;
  };
  std::vector<std::string> statements = split_statements(text);
  std::size_t total = words(text);
  for (std::size_t budget = words(statements[0]); budget <= total; ++budget) {
    std::string kept = truncate_to_budget(text, budget, words);
    std::vector<std::string> kept_statements = split_statements(kept);
    // maximal prefix that fits
    std::string rebuilt;
    std::size_t expect_count = 0;
    for (const auto& statement : statements) {
      std::string candidate = rebuilt.empty() ? statement : rebuilt + " " + statement;
      if (words(candidate) > budget) break;
      rebuilt = candidate;
      ++expect_count;
    }
    check.expect(kept_statements.size() == expect_count,
                 "budget " + std::to_string(budget) + " kept " +
                     std::to_string(kept_statements.size()) + " statements");
    for (std::size_t i = 0; i < kept_statements.size(); ++i) {
      check.expect(kept_statements[i] == statements[i], "kept a non-prefix statement");
    }
    if (!check.ok) break;
  }
  return check;
}

// ---- criterion 10: end-to-end determinism ----
Check criterion_10() {
  Check check;
  auto run_twice = [&check](const std::string& config_path, const std::string& tag,
                            ClassifierPath path) {
    for (int round = 0; round < 2; ++round) {
      ExperimentConfig cfg = load_experiment_config(config_path);
      cfg.path = path;
      cfg.split.n_repeats = 2;
      cfg.unlearn.epochs = 3;
      cfg.out_dir = "out/acceptance_det_" + tag + "_" + std::to_string(round);
      run_stage(cfg);
    }
    std::ifstream a("out/acceptance_det_" + tag + "_0/report.json", std::ios::binary);
    std::ifstream b("out/acceptance_det_" + tag + "_1/report.json", std::ios::binary);
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    check.expect(!sa.str().empty() && sa.str() == sb.str(),
                 tag + " report.json not byte-identical");
  };
  run_twice("data/configs/toy_tabular.json", "tabular", ClassifierPath::kTabular);
  run_twice("data/configs/toy_embed.json", "embed", ClassifierPath::kEmbed);
  return check;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  if (selected.empty()) {
    for (int i = 1; i <= 10; ++i) selected.push_back(i);
  }

  const char* names[11] = {"",
                           "metric oracle equivalence",
                           "benchmark logistic baselines",
                           "intrinsic-gap arithmetic and uniform perplexity",
                           "loss gradients vs finite differences",
                           "toy unlearning efficacy",
                           "bias-flip ablation",
                           "CDA invariants on training splits",
                           "classifier contracts",
                           "serialization golden files",
                           "end-to-end determinism"};
  using CriterionFn = Check (*)();
  CriterionFn fns[11] = {nullptr,      criterion_1, criterion_2, criterion_3,
                         criterion_4,  criterion_5, criterion_6, criterion_7,
                         criterion_8,  criterion_9, criterion_10};

  int failures = 0;
  for (int id : selected) {
    if (id < 1 || id > 10) {
      std::cerr << "unknown criterion " << id << "\n";
      ++failures;
      continue;
    }
    auto start = std::chrono::steady_clock::now();
    Check check;
    try {
      check = fns[id]();
    } catch (const std::exception& e) {
      check.ok = false;
      check.detail = std::string("exception: ") + e.what();
    }
    double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << (check.ok ? "[PASS]" : "[FAIL]") << " criterion " << id << ": "
              << names[id] << " (" << fmt(seconds) << "s)";
    if (!check.ok) std::cout << " -- " << check.detail;
    std::cout << "\n";
    if (!check.ok) ++failures;
  }
  return failures;
}
