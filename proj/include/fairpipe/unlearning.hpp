#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fairpipe/lm.hpp"
#include "fairpipe/metrics.hpp"

namespace fairpipe {

enum class QAContext { kPoverty, kWealth };

struct QAPair {
  std::string prompt;
  std::string stereo;  // answer historically favored by the model
  std::string anti;    // counterpart from the same gender pair
  QAContext context = QAContext::kPoverty;
};

// JSONL, one {"prompt", "stereotype", "antistereotype", "context"} per line.
// Requires at least one pair per context.
std::vector<QAPair> load_qa_dataset(const std::string& path);

// Coefficients of the four-term objective, in order: unlearn, learn, gap, norm.
struct LossWeights {
  double unlearn = 0.0;
  double learn = 0.0;
  double gap = 0.0;
  double norm = 0.0;
};

// The gap loss can compare pairwise-normalized probabilities (default,
// matching the evaluation metric) or raw sequence probabilities.
enum class GapMode { kNormalized, kRaw };

// Which checkpoint a run returns: the epoch with the best validation gap
// (default) or the final epoch (used by ablations that study end-state
// behavior such as bias flips).
enum class CheckpointSelection { kBestGap, kFinal };

struct UnlearnRunConfig {
  LossWeights weights;
  double learning_rate = 1e-3;
  int epochs = 20;
  int batch_size = 8;
  int neutral_batch_size = 4;
  uint64_t seed = 0;
  double validation_fraction = 0.25;
  GapMode gap_mode = GapMode::kNormalized;
  double log_prob_floor = -30.0;  // keeps the unlearn term finite
  CheckpointSelection selection = CheckpointSelection::kBestGap;
};

// Softmax over the two answers' sequence log-probabilities: (p_stereo,
// p_anti), summing to 1 by construction.
std::pair<double, double> pair_probabilities(const CausalLM& model, const QAPair& pair);

// --- loss components (values only) ---
double loss_unlearn(const CausalLM& model, std::span<const QAPair> batch,
                    double log_prob_floor = -30.0);
double loss_learn(const CausalLM& model, std::span<const QAPair> batch);
double loss_gap(const CausalLM& model, std::span<const QAPair> batch,
                GapMode mode = GapMode::kNormalized);
double loss_norm(const CausalLM& model, const CausalLM& reference,
                 std::span<const std::string> neutral_texts);
double total_loss(const LossWeights& weights, double l_unlearn, double l_learn,
                  double l_gap, double l_norm);

// --- loss components with gradients ---
// Each returns the component value and accumulates scale * d(component)/dθ
// into the model's trainable gradients.
double backward_loss_unlearn(CausalLM& model, std::span<const QAPair> batch, double scale,
                             double log_prob_floor = -30.0);
double backward_loss_learn(CausalLM& model, std::span<const QAPair> batch, double scale);
double backward_loss_gap(CausalLM& model, std::span<const QAPair> batch, double scale,
                         GapMode mode = GapMode::kNormalized);
double backward_loss_norm(CausalLM& model, const CausalLM& reference,
                          std::span<const std::string> neutral_texts, double scale);

struct EpochLog {
  int epoch = 0;
  double l_unlearn = 0, l_learn = 0, l_gap = 0, l_norm = 0, total = 0;
  double gap_poverty = 0, gap_wealth = 0;
  double perplexity = 0;
};
std::string epoch_log_jsonl(std::span<const EpochLog> log);

struct UnlearnResult {
  std::unique_ptr<CausalLM> model;  // checkpoint with the best validation gap
  std::vector<EpochLog> log;
  int best_epoch = -1;
  bool aborted = false;  // divergence: returned model is the last finite checkpoint
};

// Minibatch unlearning against a reference snapshot taken before step 0. QA
// and neutral batches are drawn independently per step. Checkpoint selection
// minimizes the mean validation gap across contexts.
UnlearnResult train_unlearn(const CausalLM& start, std::span<const QAPair> qa,
                            std::span<const std::string> neutral_texts,
                            const UnlearnRunConfig& cfg);

struct GridResult {
  UnlearnRunConfig config;
  double anti_poverty = 0, stereo_poverty = 0;
  double anti_wealth = 0, stereo_wealth = 0;
  double gap_poverty = 0, gap_wealth = 0;
  double mean_gap = 0;
  double perplexity = 0;
  int best_epoch = -1;
  bool aborted = false;
};

// Trains each configuration from the same seeded initialization (fresh model
// per config from the factory); ranked ascending by mean validation gap with
// perplexity as the tie-break.
std::vector<GridResult> grid_search(
    const std::function<std::unique_ptr<CausalLM>()>& model_factory,
    std::span<const QAPair> qa, std::span<const std::string> neutral_texts,
    std::span<const UnlearnRunConfig> space);

// Cartesian grid over learning rates and per-term weight lists.
std::vector<UnlearnRunConfig> make_grid(const UnlearnRunConfig& base,
                                        std::span<const double> learning_rates,
                                        std::span<const double> unlearn_vals,
                                        std::span<const double> learn_vals,
                                        std::span<const double> gap_vals,
                                        std::span<const double> norm_vals);

std::string grid_results_csv(std::span<const GridResult> results);

// Mean pair probabilities per context; used for validation and reports.
struct ContextProbes {
  PairProbability poverty;
  PairProbability wealth;
  double gap_poverty = 0;
  double gap_wealth = 0;
};
ContextProbes probe_contexts(const CausalLM& model, std::span<const QAPair> pairs);

// Per-context means of the pairwise-normalized probabilities, the gap of
// those means, and perplexity on the neutral corpus. Requires at least one
// pair per context.
IntrinsicReport intrinsic_gap_report(const CausalLM& model, std::span<const QAPair> qa,
                                     std::span<const std::string> neutral_texts);

}  // namespace fairpipe
