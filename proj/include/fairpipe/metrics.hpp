#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace fairpipe {

// Binary ground truth, binary predictions and a binary group label,
// row-aligned.
struct GroupedOutcomes {
  std::vector<int> y_true;
  std::vector<int> y_pred;
  std::vector<int> group;
};

// The displayed equation sums the TPR and FPR gaps; the prose says average.
// Both conventions are available and the one used is recorded in reports.
enum class EqOddsConvention { kSum, kMean };

// What to do when a group lacks one true-label stratum, which leaves a rate
// undefined. Zero-filling is deliberately not an option.
enum class EmptyStratumPolicy { kError, kDropAndFlag };

struct FairnessReport {
  double acc = 0.0;
  double accp = 0.0;
  double dp = 0.0;
  double eqodds = 0.0;
  EqOddsConvention convention = EqOddsConvention::kSum;
  bool dropped_stratum = false;
  std::size_t n = 0;
  std::array<std::size_t, 2> group_sizes{};
  // strata[group][true label] counts.
  std::array<std::array<std::size_t, 2>, 2> strata{};
};

double accuracy(const GroupedOutcomes& o);
double accuracy_parity(const GroupedOutcomes& o);
double demographic_parity(const GroupedOutcomes& o);
double equality_of_odds(const GroupedOutcomes& o,
                        EqOddsConvention convention = EqOddsConvention::kSum,
                        EmptyStratumPolicy policy = EmptyStratumPolicy::kError,
                        bool* dropped = nullptr);

FairnessReport fairness_report(const GroupedOutcomes& o,
                               EqOddsConvention convention = EqOddsConvention::kSum,
                               EmptyStratumPolicy policy = EmptyStratumPolicy::kError);

// Independent counting-loop oracle over the same contracts. Shares no code
// with the implementations above; intended for tests only. Input capped at
// 10,000 rows.
FairnessReport brute_force_fairness(const GroupedOutcomes& o,
                                    EqOddsConvention convention = EqOddsConvention::kSum,
                                    EmptyStratumPolicy policy = EmptyStratumPolicy::kError);

// --- intrinsic side ---

// Pairwise-normalized probabilities of one stereotype/antistereotype pair.
struct PairProbability {
  double stereo = 0.0;
  double anti = 0.0;
};

struct ContextIntrinsic {
  double mean_anti = 0.0;
  double mean_stereo = 0.0;
  double gap = 0.0;  // |mean_stereo - mean_anti|
  std::size_t n_pairs = 0;
};

struct IntrinsicReport {
  ContextIntrinsic poverty;
  ContextIntrinsic wealth;
  double perplexity = 0.0;
};

// Gap of means: averages the pair probabilities per context first, then takes
// the absolute difference.
ContextIntrinsic aggregate_context(std::span<const PairProbability> pairs);

IntrinsicReport aggregate_intrinsic(std::span<const PairProbability> poverty,
                                    std::span<const PairProbability> wealth,
                                    double perplexity);

}  // namespace fairpipe
