#pragma once

// Central finite-difference checks of the analytic loss gradients on the toy
// model, h = 1e-4, sampled parameter subset.

#include <cmath>
#include <functional>
#include <random>

#include "fairpipe/lm.hpp"

namespace grad_check {

struct Result {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

// `loss_value` evaluates the component; `loss_backward` accumulates its
// gradient (scale 1) into the model grads and returns the same value.
inline Result check(fairpipe::CausalLM& model,
                    const std::function<double()>& loss_value,
                    const std::function<double()>& loss_backward,
                    std::size_t n_samples, uint64_t seed, double h = 1e-4) {
  model.zero_grads();
  loss_backward();
  std::vector<double> grad(model.trainable_grads().begin(), model.trainable_grads().end());

  std::mt19937_64 rng(seed);
  auto params = model.trainable_params();
  Result result;
  for (std::size_t s = 0; s < n_samples; ++s) {
    std::size_t idx = rng() % params.size();
    double saved = params[idx];
    params[idx] = saved + h;
    double plus = loss_value();
    params[idx] = saved - h;
    double minus = loss_value();
    params[idx] = saved;
    double fd = (plus - minus) / (2.0 * h);
    double denom = std::max({std::abs(grad[idx]), std::abs(fd), 1e-8});
    double rel = std::abs(grad[idx] - fd) / denom;
    result.max_rel_err = std::max(result.max_rel_err, rel);
    ++result.checked;
  }
  return result;
}

}  // namespace grad_check
