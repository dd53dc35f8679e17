#include "fairpipe/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace fairpipe {
namespace {

void validate(const GroupedOutcomes& o) {
  if (o.y_true.empty()) throw std::invalid_argument("outcomes are empty");
  if (o.y_true.size() != o.y_pred.size() || o.y_true.size() != o.group.size()) {
    throw std::invalid_argument("outcome vectors have mismatched lengths");
  }
  for (std::size_t i = 0; i < o.y_true.size(); ++i) {
    if ((o.y_true[i] & ~1) || (o.y_pred[i] & ~1) || (o.group[i] & ~1)) {
      throw std::invalid_argument("outcomes must be binary (0/1)");
    }
  }
}

void require_both_groups(const GroupedOutcomes& o) {
  bool seen[2] = {false, false};
  for (int g : o.group) seen[g] = true;
  if (!seen[0] || !seen[1]) {
    throw std::invalid_argument("both groups must be present for parity metrics");
  }
}

}  // namespace

double accuracy(const GroupedOutcomes& o) {
  validate(o);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < o.y_true.size(); ++i) {
    correct += std::size_t(o.y_pred[i] == o.y_true[i]);
  }
  return double(correct) / double(o.y_true.size());
}

double accuracy_parity(const GroupedOutcomes& o) {
  validate(o);
  require_both_groups(o);
  std::size_t correct[2] = {0, 0};
  std::size_t count[2] = {0, 0};
  for (std::size_t i = 0; i < o.y_true.size(); ++i) {
    int g = o.group[i];
    ++count[g];
    correct[g] += std::size_t(o.y_pred[i] == o.y_true[i]);
  }
  return std::abs(double(correct[0]) / double(count[0]) -
                  double(correct[1]) / double(count[1]));
}

double demographic_parity(const GroupedOutcomes& o) {
  validate(o);
  require_both_groups(o);
  std::size_t positive[2] = {0, 0};
  std::size_t count[2] = {0, 0};
  for (std::size_t i = 0; i < o.y_true.size(); ++i) {
    int g = o.group[i];
    ++count[g];
    positive[g] += std::size_t(o.y_pred[i] == 1);
  }
  return std::abs(double(positive[0]) / double(count[0]) -
                  double(positive[1]) / double(count[1]));
}

double equality_of_odds(const GroupedOutcomes& o, EqOddsConvention convention,
                        EmptyStratumPolicy policy, bool* dropped) {
  validate(o);
  require_both_groups(o);
  // predicted_pos[group][true label], stratum[group][true label]
  std::size_t predicted_pos[2][2] = {{0, 0}, {0, 0}};
  std::size_t stratum[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t i = 0; i < o.y_true.size(); ++i) {
    int g = o.group[i];
    int y = o.y_true[i];
    ++stratum[g][y];
    predicted_pos[g][y] += std::size_t(o.y_pred[i] == 1);
  }
  if (dropped) *dropped = false;
  double sum = 0.0;
  int terms = 0;
  for (int y = 0; y < 2; ++y) {  // y=0 gives the FPR gap, y=1 the TPR gap
    if (stratum[0][y] == 0 || stratum[1][y] == 0) {
      if (policy == EmptyStratumPolicy::kError) {
        throw std::invalid_argument(
            "equality of odds undefined: a group has no true label " +
            std::to_string(y));
      }
      if (dropped) *dropped = true;
      continue;
    }
    double r0 = double(predicted_pos[0][y]) / double(stratum[0][y]);
    double r1 = double(predicted_pos[1][y]) / double(stratum[1][y]);
    sum += std::abs(r0 - r1);
    ++terms;
  }
  if (terms == 0) {
    throw std::invalid_argument("equality of odds undefined: no valid strata");
  }
  return convention == EqOddsConvention::kSum ? sum : sum / double(terms);
}

FairnessReport fairness_report(const GroupedOutcomes& o, EqOddsConvention convention,
                               EmptyStratumPolicy policy) {
  FairnessReport r;
  r.acc = accuracy(o);
  r.accp = accuracy_parity(o);
  r.dp = demographic_parity(o);
  r.eqodds = equality_of_odds(o, convention, policy, &r.dropped_stratum);
  r.convention = convention;
  r.n = o.y_true.size();
  for (std::size_t i = 0; i < o.y_true.size(); ++i) {
    ++r.group_sizes[o.group[i]];
    ++r.strata[o.group[i]][o.y_true[i]];
  }
  return r;
}

ContextIntrinsic aggregate_context(std::span<const PairProbability> pairs) {
  if (pairs.empty()) throw std::invalid_argument("context has no pairs");
  ContextIntrinsic c;
  for (const auto& p : pairs) {
    c.mean_anti += p.anti;
    c.mean_stereo += p.stereo;
  }
  c.mean_anti /= double(pairs.size());
  c.mean_stereo /= double(pairs.size());
  c.gap = std::abs(c.mean_stereo - c.mean_anti);
  c.n_pairs = pairs.size();
  return c;
}

IntrinsicReport aggregate_intrinsic(std::span<const PairProbability> poverty,
                                    std::span<const PairProbability> wealth,
                                    double perplexity) {
  IntrinsicReport r;
  r.poverty = aggregate_context(poverty);
  r.wealth = aggregate_context(wealth);
  r.perplexity = perplexity;
  return r;
}

}  // namespace fairpipe
