#include "fairpipe/linear.hpp"

#include <cmath>
#include <stdexcept>

namespace fairpipe {
namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + e^z) without overflow
double log1p_exp(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

struct Objective {
  const Matrix& x;
  const std::vector<int>& y;
  std::vector<double> example_weight;  // normalized to mean 1
  double reg;

  double value(const std::vector<double>& w, double b) const {
    double loss = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double z = b;
      auto row = x.row(i);
      for (std::size_t c = 0; c < row.size(); ++c) z += w[c] * row[c];
      // BCE: -y log p - (1-y) log(1-p) = log(1+e^z) - y z
      loss += example_weight[i] * (log1p_exp(z) - double(y[i]) * z);
    }
    loss /= double(x.rows());
    double ss = 0.0;
    for (double v : w) ss += v * v;
    return loss + 0.5 * reg * ss;
  }

  void gradient(const std::vector<double>& w, double b, std::vector<double>* gw,
                double* gb) const {
    std::fill(gw->begin(), gw->end(), 0.0);
    *gb = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double z = b;
      auto row = x.row(i);
      for (std::size_t c = 0; c < row.size(); ++c) z += w[c] * row[c];
      double err = example_weight[i] * (sigmoid(z) - double(y[i]));
      for (std::size_t c = 0; c < row.size(); ++c) (*gw)[c] += err * row[c];
      *gb += err;
    }
    double inv_n = 1.0 / double(x.rows());
    for (std::size_t c = 0; c < gw->size(); ++c) (*gw)[c] = (*gw)[c] * inv_n + reg * w[c];
    *gb *= inv_n;
  }
};

}  // namespace

LinearTrainResult train_linear(const Matrix& x, const std::vector<int>& labels,
                               const LinearTrainConfig& cfg) {
  if (x.rows() < 2) throw std::invalid_argument("need at least two training rows");
  if (labels.size() != x.rows()) throw std::invalid_argument("label count mismatch");
  std::size_t pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw std::invalid_argument("labels must be 0/1");
    pos += std::size_t(y);
  }
  if (pos == 0 || pos == labels.size()) {
    throw std::invalid_argument("training labels are single-class");
  }
  for (double v : x.data()) {
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite feature value");
  }

  Objective obj{x, labels, {}, cfg.reg_strength};
  obj.example_weight.assign(x.rows(), 1.0);
  if (cfg.balanced) {
    double n = double(labels.size());
    double w1 = n / (2.0 * double(pos));
    double w0 = n / (2.0 * double(labels.size() - pos));
    for (std::size_t i = 0; i < labels.size(); ++i) {
      obj.example_weight[i] = labels[i] ? w1 : w0;
    }
  }

  LinearTrainResult result;
  std::vector<double> w(x.cols(), 0.0);
  double b = 0.0;
  std::vector<double> gw(x.cols());
  double gb = 0.0;
  double loss = obj.value(w, b);
  double step = 1.0;
  std::vector<double> w_try(x.cols());

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    obj.gradient(w, b, &gw, &gb);
    double gnorm = gb * gb;
    for (double g : gw) gnorm += g * g;
    gnorm = std::sqrt(gnorm);
    result.final_grad_norm = gnorm;
    if (gnorm <= cfg.grad_tol) break;

    // Backtracking: halve the step until the loss does not increase.
    bool accepted = false;
    for (int back = 0; back < 60; ++back) {
      for (std::size_t c = 0; c < w.size(); ++c) w_try[c] = w[c] - step * gw[c];
      double b_try = b - step * gb;
      double loss_try = obj.value(w_try, b_try);
      if (loss_try <= loss) {
        w = w_try;
        b = b_try;
        loss = loss_try;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // step underflow; treat as converged
    result.loss_history.push_back(loss);
    result.iterations = iter + 1;
    step *= 1.25;
  }

  result.model.weights = std::move(w);
  result.model.bias = b;
  result.model.reg_strength = cfg.reg_strength;
  result.model.seed = cfg.seed;
  return result;
}

LinearPrediction predict_linear(const LinearModel& model, const Matrix& x) {
  if (x.cols() != model.weights.size()) {
    throw std::invalid_argument("feature width does not match model weights");
  }
  LinearPrediction pred;
  pred.labels.resize(x.rows());
  pred.probabilities.resize(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double z = model.bias;
    auto row = x.row(i);
    for (std::size_t c = 0; c < row.size(); ++c) z += model.weights[c] * row[c];
    double p = sigmoid(z);
    pred.probabilities[i] = p;
    pred.labels[i] = p >= 0.5 ? 1 : 0;
  }
  return pred;
}

}  // namespace fairpipe
