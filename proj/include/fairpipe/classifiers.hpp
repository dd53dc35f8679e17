#pragma once

#include <memory>
#include <span>
#include <vector>

#include "fairpipe/adapters.hpp"
#include "fairpipe/encode.hpp"
#include "fairpipe/lm.hpp"
#include "fairpipe/serializer.hpp"

namespace fairpipe {

// Embeds every example text through a frozen model; labels and groups are
// carried through. Row i = hidden state of examples[i].text.
FeatureMatrix embed_dataset(const CausalLM& model,
                            std::span<const SerializedExample> examples);

struct FinetuneResult {
  std::unique_ptr<CausalLM> model;  // adapters attached and trained
  std::vector<double> step_loss;    // full-vocab CE per optimizer step
  std::vector<double> epoch_val_accuracy;
  int best_epoch = 0;
};

// Low-rank adapter fine-tuning of the yes/no classification head. The
// objective is full-vocabulary cross-entropy on the gold answer token at the
// answer position; base parameters stay bit-identical. The checkpoint with
// the best validation accuracy across epochs is returned.
FinetuneResult finetune_lm_classifier(const CausalLM& model,
                                      std::span<const std::string> prompts,
                                      std::span<const int> labels,
                                      const TaskTemplate& task, const AdapterConfig& cfg,
                                      uint64_t seed);

// Restricted argmax between the yes/no tokens after the prompt; ties go to
// yes. Returns the task label (1 iff the chosen token means the positive
// class under positive_means_yes).
int predict_yes_no(const CausalLM& model, const std::string& prompt,
                   const std::string& yes_token, const std::string& no_token,
                   bool positive_means_yes = true);

// FNV-1a over the raw bytes of a parameter span; used for freeze checks.
uint64_t param_hash(std::span<const double> params);

}  // namespace fairpipe
