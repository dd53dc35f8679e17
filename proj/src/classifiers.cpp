#include "fairpipe/classifiers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <stdexcept>

#include "fairpipe/optimizer.hpp"

namespace fairpipe {

void AdamOptimizer::step(std::span<double> params, std::span<const double> grads) {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, double(t_));
  double bc2 = 1.0 - std::pow(beta2_, double(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
    params[i] -= lr_ * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + eps_);
  }
}

FeatureMatrix embed_dataset(const CausalLM& model,
                            std::span<const SerializedExample> examples) {
  if (!model.frozen()) {
    throw std::invalid_argument("embed_dataset requires a frozen snapshot");
  }
  FeatureMatrix m;
  const int width = model.hidden_width();
  m.x = Matrix(examples.size(), std::size_t(width));
  for (std::size_t i = 0; i < examples.size(); ++i) {
    std::vector<double> h = embed(model, examples[i].text);
    for (int c = 0; c < width; ++c) m.x(i, std::size_t(c)) = h[std::size_t(c)];
    m.labels.push_back(examples[i].label);
    m.groups.push_back(examples[i].group);
  }
  for (int c = 0; c < width; ++c) m.column_names.push_back("z" + std::to_string(c));
  for (int c = 0; c < width; ++c) m.column_source.push_back(c);
  for (int c = 0; c < width; ++c) m.feature_names.push_back("z" + std::to_string(c));
  return m;
}

namespace {

int require_single_token(const CausalLM& model, const std::string& word) {
  auto id = model.tokenizer().single_token_id(word);
  if (!id) throw std::invalid_argument("answer token not in vocabulary: " + word);
  return *id;
}

// CE on the gold token at the last prompt position; fills dL/dlogits.
double gold_token_ce(const Matrix& logits, Matrix* dlogits, int gold, double scale) {
  const std::size_t pos = logits.rows() - 1;
  std::vector<double> p(logits.row(pos).begin(), logits.row(pos).end());
  softmax_inplace(p);
  auto drow = dlogits->row(pos);
  for (std::size_t v = 0; v < p.size(); ++v) {
    drow[v] = scale * (p[v] - (int(v) == gold ? 1.0 : 0.0));
  }
  return -std::log(std::max(p[std::size_t(gold)], 1e-300));
}

}  // namespace

FinetuneResult finetune_lm_classifier(const CausalLM& model,
                                      std::span<const std::string> prompts,
                                      std::span<const int> labels,
                                      const TaskTemplate& task, const AdapterConfig& cfg,
                                      uint64_t seed) {
  if (prompts.size() != labels.size() || prompts.empty()) {
    throw std::invalid_argument("prompts and labels must be non-empty and aligned");
  }
  bool has[2] = {false, false};
  for (int y : labels) has[y] = true;
  if (!has[0] || !has[1]) {
    throw std::invalid_argument("fine-tuning needs both classes present");
  }

  FinetuneResult result;
  std::unique_ptr<CausalLM> work = model.clone();
  auto* host = dynamic_cast<AdapterHost*>(work.get());
  if (!host) throw std::invalid_argument("model does not support adapters");
  host->attach_adapters(cfg, seed);

  const int yes_id = require_single_token(*work, task.yes_token);
  const int no_id = require_single_token(*work, task.no_token);
  auto gold_id = [&](int label) {
    bool yes = task.positive_means_yes ? label == 1 : label == 0;
    return yes ? yes_id : no_id;
  };

  // Seeded validation split for checkpoint selection.
  std::mt19937_64 rng(seed ^ 0x5eedf00dULL);
  std::vector<std::size_t> order(prompts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  std::size_t n_val = std::size_t(double(order.size()) * cfg.validation_fraction);
  if (order.size() - n_val < 2) n_val = 0;  // tiny sets train on everything
  std::vector<std::size_t> val(order.begin(), order.begin() + long(n_val));
  std::vector<std::size_t> train(order.begin() + long(n_val), order.end());

  // accuracy for checkpoint selection, mean gold-token CE as the tie-break
  auto validate = [&](double* ce_out) {
    const auto& eval_set = val.empty() ? train : val;
    std::size_t hit = 0;
    double ce = 0.0;
    for (std::size_t i : eval_set) {
      int pred = predict_yes_no(*work, prompts[i], task.yes_token, task.no_token,
                                task.positive_means_yes);
      hit += std::size_t(pred == labels[i]);
      std::vector<double> p = work->next_token_logits(work->tokenize(prompts[i]));
      softmax_inplace(p);
      ce -= std::log(std::max(p[std::size_t(gold_id(labels[i]))], 1e-300));
    }
    *ce_out = ce / double(eval_set.size());
    return double(hit) / double(eval_set.size());
  };

  AdamOptimizer opt(work->param_count(), cfg.learning_rate);
  host->set_train_mode(true, seed ^ 0xd10d10ULL);
  std::vector<double> best_params(work->trainable_params().begin(),
                                  work->trainable_params().end());
  double best_acc = -1.0;
  double best_ce = std::numeric_limits<double>::infinity();
  const int batch = std::max(1, cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = train.size(); i > 1; --i) std::swap(train[i - 1], train[rng() % i]);
    for (std::size_t at = 0; at < train.size(); at += std::size_t(batch)) {
      std::size_t end = std::min(train.size(), at + std::size_t(batch));
      work->zero_grads();
      double loss = 0.0;
      for (std::size_t i = at; i < end; ++i) {
        std::size_t idx = train[i];
        std::vector<int> tokens = work->tokenize(prompts[idx]);
        int gold = gold_id(labels[idx]);
        double scale = 1.0 / double(end - at);
        loss += scale * work->backward_with(tokens,
                                            [&](const Matrix& lg, Matrix* dlg) {
                                              return gold_token_ce(lg, dlg, gold, scale);
                                            });
      }
      result.step_loss.push_back(loss);
      opt.step(work->trainable_params(), work->trainable_grads());
    }
    host->set_train_mode(false, 0);
    double ce = 0.0;
    double acc = validate(&ce);
    host->set_train_mode(true, seed ^ (0xd10d10ULL + uint64_t(epoch) + 1));
    result.epoch_val_accuracy.push_back(acc);
    if (acc > best_acc || (acc == best_acc && ce < best_ce)) {
      best_acc = acc;
      best_ce = ce;
      best_params.assign(work->trainable_params().begin(), work->trainable_params().end());
      result.best_epoch = epoch;
    }
  }
  host->set_train_mode(false, 0);
  std::copy(best_params.begin(), best_params.end(), work->trainable_params().begin());
  result.model = std::move(work);
  return result;
}

int predict_yes_no(const CausalLM& model, const std::string& prompt,
                   const std::string& yes_token, const std::string& no_token,
                   bool positive_means_yes) {
  const int yes_id = require_single_token(model, yes_token);
  const int no_id = require_single_token(model, no_token);
  std::vector<int> tokens = model.tokenize(prompt);
  std::vector<double> logits = model.next_token_logits(tokens);
  bool yes = logits[std::size_t(yes_id)] >= logits[std::size_t(no_id)];
  if (positive_means_yes) return yes ? 1 : 0;
  return yes ? 0 : 1;
}

uint64_t param_hash(std::span<const double> params) {
  uint64_t h = 1469598103934665603ULL;
  for (double v : params) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace fairpipe
