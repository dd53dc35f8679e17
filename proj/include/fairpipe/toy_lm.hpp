#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fairpipe/adapters.hpp"
#include "fairpipe/lm.hpp"

namespace fairpipe {

// Bias planted into the model weights at construction: on token sequences
// containing the pattern, the favored token's logit is raised by a trainable
// scalar initialized to `log_odds`. The favored token must belong to a tied
// pair so that the margin over its counterpart equals the scalar exactly.
struct PlantedBias {
  std::string prompt_pattern;
  std::string favored_token;
  double log_odds = 0.0;
};

struct ToyLMConfig {
  int vocab_size = 0;  // 0: builtin word list size; otherwise exact (<= 256)
  int layers = 2;
  int hidden = 32;
  int context = 64;
  uint64_t seed = 0;
  double init_scale = 0.08;    // 0 gives the uniform model (all logits zero)
  double unembed_scale = -1;   // output-layer init; < 0 means init_scale. The
                               // unembedding is frozen under adapters, so
                               // adapter tasks need enough output range here.
  std::vector<std::string> extra_words;  // prepended to the builtin word list
  std::vector<std::array<std::string, 2>> tied_pairs;  // init-identical logits
  std::optional<PlantedBias> planted_bias;
  bool mean_pool_embedding = false;
};

ToyLMConfig toy_config_from_json(const std::string& json_text);
std::string toy_config_to_json(const ToyLMConfig& config);

std::vector<std::string> builtin_word_list();

// Deterministic decoder-only transformer in doubles: learned token+position
// embeddings, pre-RMSNorm single-head causal attention and SiLU MLP blocks,
// untied unembedding with a vocabulary bias. Small enough (<100k parameters
// at default sizes) for finite-difference gradient checks.
class ToyLm final : public CausalLM, public AdapterHost {
 public:
  ~ToyLm() override;

  const Tokenizer& tokenizer() const override;
  int vocab_size() const override;
  int context_size() const override;
  int hidden_width() const override;

  std::vector<double> next_token_logits(std::span<const int> tokens) const override;
  Matrix all_logits(std::span<const int> tokens) const override;
  std::vector<double> hidden_state(std::span<const int> tokens) const override;

  bool frozen() const override;
  std::size_t param_count() const override;
  std::span<double> trainable_params() override;
  std::span<const double> trainable_params() const override;
  std::span<double> trainable_grads() override;
  void zero_grads() override;
  double backward_with(std::span<const int> tokens, const LogitLossFn& fn) override;

  std::unique_ptr<CausalLM> snapshot() const override;
  std::unique_ptr<CausalLM> clone() const override;

  // AdapterHost
  void attach_adapters(const AdapterConfig& cfg, uint64_t seed) override;
  bool has_adapters() const override;
  std::span<const double> base_params() const override;
  void set_train_mode(bool on, uint64_t dropout_seed) override;
  void save_adapters(const std::string& path) const override;
  void load_adapters(const std::string& path) override;

  const ToyLMConfig& config() const;

  // Named views of the base parameters, for golden-value cross checks.
  struct WeightViews {
    std::span<const double> tok_emb;   // V x d
    std::span<const double> pos_emb;   // C x d
    struct Layer {
      std::span<const double> rms1, wq, wk, wv, wo, rms2, w1, b1, w2, b2;
    };
    std::vector<Layer> layers;
    std::span<const double> rms_final;
    std::span<const double> unembed;    // V x d
    std::span<const double> vocab_bias; // V
    double planted_scale = 0.0;
    bool has_planted = false;
    int mlp_width = 0;
  };
  WeightViews weights() const;

  void save(const std::string& path) const;
  static std::unique_ptr<ToyLm> load(const std::string& path);

  struct Impl;  // opaque; defined in toy_lm.cpp

 private:
  friend std::unique_ptr<ToyLm> make_toy_model(const ToyLMConfig&);
  explicit ToyLm(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

// Builds, initializes from the seed, applies tied pairs and the planted bias,
// and verifies the planted log-odds margin post-construction.
std::unique_ptr<ToyLm> make_toy_model(const ToyLMConfig& config);

}  // namespace fairpipe
