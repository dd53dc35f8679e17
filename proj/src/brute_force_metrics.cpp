// Testing oracle: every metric recomputed with plain counting loops, no code
// shared with metrics.cpp.

#include <cmath>
#include <stdexcept>

#include "fairpipe/metrics.hpp"

namespace fairpipe {

FairnessReport brute_force_fairness(const GroupedOutcomes& o,
                                    EqOddsConvention convention,
                                    EmptyStratumPolicy policy) {
  const std::size_t n = o.y_true.size();
  if (n == 0) throw std::invalid_argument("outcomes are empty");
  if (n > 10000) throw std::invalid_argument("brute-force oracle capped at 10,000 rows");
  if (o.y_pred.size() != n || o.group.size() != n) {
    throw std::invalid_argument("outcome vectors have mismatched lengths");
  }
  for (std::size_t i = 0; i < n; ++i) {
    bool ok = (o.y_true[i] == 0 || o.y_true[i] == 1) &&
              (o.y_pred[i] == 0 || o.y_pred[i] == 1) &&
              (o.group[i] == 0 || o.group[i] == 1);
    if (!ok) throw std::invalid_argument("outcomes must be binary (0/1)");
  }

  FairnessReport r;
  r.convention = convention;
  r.n = n;

  long correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (o.y_pred[i] == o.y_true[i]) ++correct;
  }
  r.acc = double(correct) / double(n);

  long in_group[2] = {0, 0};
  for (std::size_t i = 0; i < n; ++i) ++in_group[o.group[i]];
  if (in_group[0] == 0 || in_group[1] == 0) {
    throw std::invalid_argument("both groups must be present for parity metrics");
  }
  r.group_sizes = {std::size_t(in_group[0]), std::size_t(in_group[1])};

  double group_acc[2];
  for (int g = 0; g < 2; ++g) {
    long ok = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (o.group[i] == g && o.y_pred[i] == o.y_true[i]) ++ok;
    }
    group_acc[g] = double(ok) / double(in_group[g]);
  }
  r.accp = group_acc[0] >= group_acc[1] ? group_acc[0] - group_acc[1]
                                        : group_acc[1] - group_acc[0];

  double pos_rate[2];
  for (int g = 0; g < 2; ++g) {
    long pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (o.group[i] == g && o.y_pred[i] == 1) ++pos;
    }
    pos_rate[g] = double(pos) / double(in_group[g]);
  }
  r.dp = pos_rate[0] >= pos_rate[1] ? pos_rate[0] - pos_rate[1]
                                    : pos_rate[1] - pos_rate[0];

  // TP / FP / TN / FN per group by explicit enumeration.
  long tp[2] = {0, 0}, fp[2] = {0, 0}, tn[2] = {0, 0}, fn[2] = {0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    int g = o.group[i];
    if (o.y_true[i] == 1 && o.y_pred[i] == 1) ++tp[g];
    if (o.y_true[i] == 0 && o.y_pred[i] == 1) ++fp[g];
    if (o.y_true[i] == 0 && o.y_pred[i] == 0) ++tn[g];
    if (o.y_true[i] == 1 && o.y_pred[i] == 0) ++fn[g];
  }
  for (int g = 0; g < 2; ++g) {
    r.strata[g][0] = std::size_t(fp[g] + tn[g]);
    r.strata[g][1] = std::size_t(tp[g] + fn[g]);
  }

  double eq = 0.0;
  int terms = 0;
  bool dropped = false;
  if (fp[0] + tn[0] > 0 && fp[1] + tn[1] > 0) {
    double fpr0 = double(fp[0]) / double(fp[0] + tn[0]);
    double fpr1 = double(fp[1]) / double(fp[1] + tn[1]);
    eq += fpr0 >= fpr1 ? fpr0 - fpr1 : fpr1 - fpr0;
    ++terms;
  } else {
    dropped = true;
  }
  if (tp[0] + fn[0] > 0 && tp[1] + fn[1] > 0) {
    double tpr0 = double(tp[0]) / double(tp[0] + fn[0]);
    double tpr1 = double(tp[1]) / double(tp[1] + fn[1]);
    eq += tpr0 >= tpr1 ? tpr0 - tpr1 : tpr1 - tpr0;
    ++terms;
  } else {
    dropped = true;
  }
  if (dropped && policy == EmptyStratumPolicy::kError) {
    throw std::invalid_argument("equality of odds undefined: empty stratum");
  }
  if (terms == 0) {
    throw std::invalid_argument("equality of odds undefined: no valid strata");
  }
  r.eqodds = convention == EqOddsConvention::kSum ? eq : eq / double(terms);
  r.dropped_stratum = dropped;
  return r;
}

}  // namespace fairpipe
