#pragma once

// Test double: a CausalLM whose logits are a fixed per-position table. Row t
// of the table is served for position t (the last row repeats beyond). The
// table entries are the trainable parameters, which makes logit-level
// finite-difference checks possible.

#include <algorithm>
#include <memory>
#include <stdexcept>

#include "fairpipe/lm.hpp"

namespace test_lm {

class FixedLogitsLm final : public fairpipe::CausalLM {
 public:
  FixedLogitsLm(std::vector<std::string> words, fairpipe::Matrix table)
      : tokenizer_(std::move(words)), table_(std::move(table)),
        grads_(table_.data().size(), 0.0) {
    if (int(table_.cols()) != tokenizer_.vocab_size()) {
      throw std::invalid_argument("table width must equal the vocab size");
    }
  }

  const fairpipe::Tokenizer& tokenizer() const override { return tokenizer_; }
  int vocab_size() const override { return tokenizer_.vocab_size(); }
  int context_size() const override { return 64; }
  int hidden_width() const override { return 4; }

  std::vector<double> next_token_logits(std::span<const int> tokens) const override {
    auto row = table_.row(row_for(tokens.size() - 1));
    return {row.begin(), row.end()};
  }

  fairpipe::Matrix all_logits(std::span<const int> tokens) const override {
    fairpipe::Matrix out(tokens.size(), table_.cols());
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      auto row = table_.row(row_for(t));
      std::copy(row.begin(), row.end(), out.row(t).begin());
    }
    return out;
  }

  std::vector<double> hidden_state(std::span<const int>) const override {
    return std::vector<double>(4, 0.0);
  }

  bool frozen() const override { return frozen_; }
  std::size_t param_count() const override { return table_.data().size(); }
  std::span<double> trainable_params() override { return table_.data(); }
  std::span<const double> trainable_params() const override { return table_.data(); }
  std::span<double> trainable_grads() override { return grads_; }
  void zero_grads() override { std::fill(grads_.begin(), grads_.end(), 0.0); }

  double backward_with(std::span<const int> tokens, const LogitLossFn& fn) override {
    fairpipe::Matrix logits = all_logits(tokens);
    fairpipe::Matrix dlogits(logits.rows(), logits.cols());
    double loss = fn(logits, &dlogits);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      std::size_t r = row_for(t);
      for (std::size_t v = 0; v < table_.cols(); ++v) {
        grads_[r * table_.cols() + v] += dlogits(t, v);
      }
    }
    return loss;
  }

  std::unique_ptr<CausalLM> snapshot() const override {
    auto copy = std::make_unique<FixedLogitsLm>(*this);
    copy->frozen_ = true;
    return copy;
  }
  std::unique_ptr<CausalLM> clone() const override {
    auto copy = std::make_unique<FixedLogitsLm>(*this);
    copy->frozen_ = false;
    return copy;
  }

 private:
  std::size_t row_for(std::size_t position) const {
    return std::min(position, table_.rows() - 1);
  }

  fairpipe::Tokenizer tokenizer_;
  fairpipe::Matrix table_;
  std::vector<double> grads_;
  bool frozen_ = false;
};

}  // namespace test_lm
