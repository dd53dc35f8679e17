#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fairpipe/matrix.hpp"

namespace fairpipe {

// Whitespace tokenizer over a fixed vocabulary. Text is lowercased and the
// characters . , ? ! are split off as single-character tokens. Unknown words
// map to <unk>. Token 0 is <bos>, token 1 is <unk>.
class Tokenizer {
 public:
  static constexpr int kBos = 0;
  static constexpr int kUnk = 1;

  explicit Tokenizer(std::vector<std::string> words);

  int vocab_size() const { return int(tokens_.size()); }
  std::vector<int> encode(std::string_view text, bool add_bos) const;
  const std::string& token_text(int id) const { return tokens_.at(std::size_t(id)); }
  // id of a word that encodes to exactly one token; nullopt otherwise.
  std::optional<int> single_token_id(const std::string& word) const;

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
};

// Causal language model abstraction: next-token distributions, hidden states,
// flat trainable parameters with gradient access, and a freezable snapshot.
class CausalLM {
 public:
  virtual ~CausalLM() = default;

  virtual const Tokenizer& tokenizer() const = 0;
  virtual int vocab_size() const = 0;
  virtual int context_size() const = 0;
  virtual int hidden_width() const = 0;

  // Token sequence for a text, BOS-prefixed.
  std::vector<int> tokenize(const std::string& text) const {
    return tokenizer().encode(text, /*add_bos=*/true);
  }

  // Logits over the vocabulary for the token following `tokens`.
  virtual std::vector<double> next_token_logits(std::span<const int> tokens) const = 0;
  // Row t = logits for the token following tokens[0..t]. Shape T x V.
  virtual Matrix all_logits(std::span<const int> tokens) const = 0;
  // Final-layer hidden state at the last position.
  virtual std::vector<double> hidden_state(std::span<const int> tokens) const = 0;

  // --- training surface (single writer; throws on frozen models) ---
  virtual bool frozen() const = 0;
  virtual std::size_t param_count() const = 0;
  virtual std::span<double> trainable_params() = 0;
  virtual std::span<const double> trainable_params() const = 0;
  virtual std::span<double> trainable_grads() = 0;
  virtual void zero_grads() = 0;

  // Runs one forward pass, hands the logits to `fn` which fills dL/dlogits
  // (same shape) and returns the loss value, then accumulates dL/dparams
  // into the trainable gradients. Returns fn's loss.
  using LogitLossFn = std::function<double(const Matrix& logits, Matrix* dlogits)>;
  virtual double backward_with(std::span<const int> tokens, const LogitLossFn& fn) = 0;

  // Deep copies. snapshot() marks the copy frozen: its parameters never
  // change afterwards and mutating calls throw.
  virtual std::unique_ptr<CausalLM> snapshot() const = 0;
  virtual std::unique_ptr<CausalLM> clone() const = 0;
};

// Sum over answer tokens of log P(token | prompt + preceding answer tokens).
double sequence_log_prob(const CausalLM& model, const std::string& prompt,
                         const std::string& answer);

// Log probabilities of two answers after the same prompt. The prompt forward
// pass is shared when both answers are single tokens.
std::pair<double, double> answer_pair_log_probs(const CausalLM& model,
                                                const std::string& prompt,
                                                const std::string& answer_a,
                                                const std::string& answer_b);

// exp of the mean negative log-likelihood over all predicted token positions,
// pooled across documents.
double perplexity(const CausalLM& model, std::span<const std::string> corpus);

std::vector<double> embed(const CausalLM& model, const std::string& text);

// Neutral reference corpus, JSONL {"question": ..., "best_answer": ...}.
struct NeutralExample {
  std::string question;
  std::string best_answer;
};
std::vector<NeutralExample> load_neutral_corpus(const std::string& path);
// Teacher-forced text per example: question + " " + best answer.
std::vector<std::string> neutral_texts(std::span<const NeutralExample> corpus);

// Numerics shared by the LM-adjacent modules.
void log_softmax_inplace(std::span<double> logits);
void softmax_inplace(std::span<double> logits);

}  // namespace fairpipe
