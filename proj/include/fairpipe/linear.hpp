#pragma once

#include <cstdint>
#include <vector>

#include "fairpipe/matrix.hpp"

namespace fairpipe {

struct LinearModel {
  std::vector<double> weights;
  double bias = 0.0;
  double reg_strength = 0.0;
  uint64_t seed = 0;
};

struct LinearTrainConfig {
  double reg_strength = 1e-4;
  uint64_t seed = 0;
  int max_iters = 500;
  double grad_tol = 1e-6;
  // Reweights examples by n / (2 * class count); used for the benchmark
  // reproduction configs.
  bool balanced = false;
};

struct LinearTrainResult {
  LinearModel model;
  std::vector<double> loss_history;  // loss after each accepted step
  int iterations = 0;
  double final_grad_norm = 0.0;
};

// L2-regularized binary cross-entropy minimized by deterministic full-batch
// gradient descent with backtracking line search (monotone by construction).
// Weights start at zero; `seed` is recorded for provenance.
LinearTrainResult train_linear(const Matrix& x, const std::vector<int>& labels,
                               const LinearTrainConfig& cfg = {});

struct LinearPrediction {
  std::vector<int> labels;
  std::vector<double> probabilities;
};

// probability = logistic(w.x + b); label = 1 iff probability >= 0.5.
LinearPrediction predict_linear(const LinearModel& model, const Matrix& x);

}  // namespace fairpipe
