#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "fairpipe/pipeline.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace fairpipe;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cmd_run(const std::string& config_path, int stage_override, bool cda_flag,
            const std::string& path_override, const std::string& out_override) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  if (stage_override > 0) cfg.stage = stage_override;
  if (cda_flag) {
    if (cfg.stage == 1) cfg.stage = 2;
    if (cfg.stage == 3) cfg.stage = 4;
  }
  if (!path_override.empty()) cfg.path = parse_path(path_override);
  if (!out_override.empty()) cfg.out_dir = out_override;

  StageReport report = run_stage(cfg);
  std::cout << "dataset=" << report.dataset << " path=" << path_name(report.path)
            << " stage=" << report.stage << (report.partial ? " (partial)" : "") << "\n";
  std::cout << "  acc=" << report.aggregate.acc << " accp=" << report.aggregate.accp
            << " dp=" << report.aggregate.dp << " eqodds=" << report.aggregate.eqodds
            << "\n";
  for (const auto& s : report.splits) {
    if (!s.ok) std::cerr << "  split " << s.repeat << " failed: " << s.error << "\n";
  }
  std::cout << "wrote " << cfg.out_dir << "/report.json\n";
  return report.partial ? 1 : 0;
}

int cmd_intrinsic(const std::string& config_path, const std::string& out_override) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  if (!out_override.empty()) cfg.out_dir = out_override;
  IntrinsicReport report = run_intrinsic_eval(cfg);
  std::cout << "poverty: anti=" << report.poverty.mean_anti
            << " stereo=" << report.poverty.mean_stereo << " gap=" << report.poverty.gap
            << "\n";
  std::cout << "wealth:  anti=" << report.wealth.mean_anti
            << " stereo=" << report.wealth.mean_stereo << " gap=" << report.wealth.gap
            << "\n";
  std::cout << "perplexity: " << report.perplexity << "\n";
  std::cout << "wrote " << cfg.out_dir << "/intrinsic.json\n";
  return 0;
}

int cmd_grid(const std::string& config_path, const std::string& out_override) {
  nlohmann::json j = nlohmann::json::parse(slurp(config_path));
  ExperimentConfig backend_cfg;
  backend_cfg.config_file = config_path;
  if (j.contains("toy")) backend_cfg.toy = toy_config_from_json(j.at("toy").dump());
  backend_cfg.backend = j.value("backend", "toy");
  std::string out_dir = out_override.empty() ? j.value("out_dir", "out") : out_override;

  std::vector<QAPair> qa = load_qa_dataset(j.at("qa").get<std::string>());
  std::vector<std::string> neutral =
      neutral_texts(load_neutral_corpus(j.at("neutral").get<std::string>()));

  UnlearnRunConfig base;
  if (j.contains("base")) {
    base.learning_rate = j["base"].value("learning_rate", base.learning_rate);
    base.epochs = j["base"].value("epochs", base.epochs);
    base.batch_size = j["base"].value("batch_size", base.batch_size);
    base.neutral_batch_size = j["base"].value("neutral_batch_size", base.neutral_batch_size);
    base.seed = j["base"].value("seed", base.seed);
    base.validation_fraction =
        j["base"].value("validation_fraction", base.validation_fraction);
  }
  auto axis = [&](const char* key, std::vector<double> fallback) {
    return j.contains(key) ? j.at(key).get<std::vector<double>>() : fallback;
  };
  // The full sweep defaults: rates {1e-5,1e-6,1e-7}, weights
  // {1.0,0.75,0.5,0.25,0.15} per term. Configs usually subset these.
  std::vector<double> rates = axis("learning_rates", {1e-5, 1e-6, 1e-7});
  std::vector<double> wvals = {1.0, 0.75, 0.5, 0.25, 0.15};
  std::vector<double> u = axis("unlearn_values", wvals);
  std::vector<double> l = axis("learn_values", wvals);
  std::vector<double> g = axis("gap_values", wvals);
  std::vector<double> n = axis("norm_values", wvals);

  std::vector<UnlearnRunConfig> space = make_grid(base, rates, u, l, g, n);
  std::cout << "grid: " << space.size() << " configurations\n";
  auto factory = [&backend_cfg]() -> std::unique_ptr<CausalLM> {
    return make_backend(backend_cfg);
  };
  std::vector<GridResult> results = grid_search(factory, qa, neutral, space);

  fs::create_directories(out_dir);
  std::ofstream out(out_dir + "/grid.csv");
  out << grid_results_csv(results);
  const GridResult& best = results.front();
  std::cout << "best: lr=" << best.config.learning_rate << " weights=("
            << best.config.weights.unlearn << "," << best.config.weights.learn << ","
            << best.config.weights.gap << "," << best.config.weights.norm
            << ") mean_gap=" << best.mean_gap << " ppl=" << best.perplexity << "\n";
  std::cout << "wrote " << out_dir << "/grid.csv\n";
  return 0;
}

int cmd_report(const std::string& in_dir, bool plots) {
  std::vector<StageReport> reports;
  for (const auto& entry : fs::recursive_directory_iterator(in_dir)) {
    if (entry.is_regular_file() && entry.path().filename() == "report.json") {
      reports.push_back(stage_report_from_json(slurp(entry.path().string())));
    }
  }
  if (reports.empty()) {
    std::cerr << "no report.json files under " << in_dir << "\n";
    return 1;
  }
  // Directory iteration order is filesystem-dependent; sort for determinism.
  std::sort(reports.begin(), reports.end(), [](const StageReport& a, const StageReport& b) {
    return std::tie(a.dataset, a.path, a.model, a.stage) <
           std::tie(b.dataset, b.path, b.model, b.stage);
  });
  emit_report_table(reports, in_dir, plots);
  std::cout << "wrote " << in_dir << "/table.csv and table.md (" << reports.size()
            << " rows)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bias-mitigation pipeline: serialization, CDA, unlearning, fairness"};
  app.require_subcommand(1);

  std::string config_path, out_dir, path_override, in_dir;
  int stage = 0;
  bool cda = false, plots = false;

  auto* run = app.add_subcommand("run", "Run one dataset/path/stage cell");
  run->add_option("--config", config_path, "experiment config JSON")->required();
  run->add_option("--stage", stage, "override stage 1..4");
  run->add_flag("--cda", cda, "switch on counterfactual augmentation (stage 1->2, 3->4)");
  run->add_option("--path", path_override, "tabular|embed|lm");
  run->add_option("--out", out_dir, "output directory");

  auto* intrinsic = app.add_subcommand("intrinsic", "Intrinsic probability-gap probe");
  intrinsic->add_option("--config", config_path, "probe config JSON")->required();
  intrinsic->add_option("--out", out_dir, "output directory");

  auto* grid = app.add_subcommand("grid", "Hyperparameter grid search");
  grid->add_option("--config", config_path, "grid config JSON")->required();
  grid->add_option("--out", out_dir, "output directory");

  auto* report = app.add_subcommand("report", "Tabulate stage reports");
  report->add_option("--in", in_dir, "directory holding report.json files")->required();
  report->add_flag("--plots", plots, "emit SVG bar charts");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, stage, cda, path_override, out_dir);
    if (intrinsic->parsed()) return cmd_intrinsic(config_path, out_dir);
    if (grid->parsed()) return cmd_grid(config_path, out_dir);
    if (report->parsed()) return cmd_report(in_dir, plots);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
