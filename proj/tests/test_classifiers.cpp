#include <cmath>

#include "doctest.h"
#include "fairpipe/classifiers.hpp"
#include "fairpipe/linear.hpp"
#include "fairpipe/toy_lm.hpp"
#include "fixed_lm.hpp"
#include "test_util.hpp"

using namespace fairpipe;

namespace {

ToyLMConfig config(uint64_t seed = 5) {
  ToyLMConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 16;
  cfg.context = 64;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_SUITE("classifiers") {

TEST_CASE("embed_dataset carries labels and groups through a frozen model") {
  auto model = make_toy_model(config());
  std::unique_ptr<CausalLM> frozen = model->snapshot();
  std::vector<SerializedExample> examples = {
      {"job is bank.", 1, 0, 0}, {"job is city.", 0, 1, 1}, {"job is bank.", 1, 1, 2}};
  FeatureMatrix m = embed_dataset(*frozen, examples);
  CHECK(m.x.rows() == 3);
  CHECK(m.x.cols() == 16);
  CHECK(m.labels == std::vector<int>{1, 0, 1});
  CHECK(m.groups == std::vector<int>{0, 1, 1});
  // identical texts embed identically; distinct texts differ
  for (std::size_t c = 0; c < m.x.cols(); ++c) {
    CHECK(m.x(0, c) == m.x(2, c));
  }
  bool any_diff = false;
  for (std::size_t c = 0; c < m.x.cols(); ++c) any_diff |= m.x(0, c) != m.x(1, c);
  CHECK(any_diff);
  // golden: rows equal a direct embed call
  std::vector<double> direct = embed(*frozen, "job is bank.");
  for (std::size_t c = 0; c < m.x.cols(); ++c) CHECK(m.x(0, c) == direct[c]);

  CHECK_THROWS_AS(embed_dataset(*model, examples), std::invalid_argument);
}

TEST_CASE("predict_yes_no is a restricted argmax with ties to yes") {
  // vocab: <bos>, <unk>, q, yes, no, other
  auto table_with = [](double yes, double no, double other) {
    Matrix t(1, 6);
    t(0, 3) = yes;
    t(0, 4) = no;
    t(0, 5) = other;
    return t;
  };
  std::vector<std::string> words = {"q", "yes", "no", "other"};

  test_lm::FixedLogitsLm clear(words, table_with(std::log(0.6), std::log(0.1), 0.0));
  CHECK(predict_yes_no(clear, "q", "yes", "no") == 1);

  test_lm::FixedLogitsLm tie(words, table_with(0.7, 0.7, 0.0));
  CHECK(predict_yes_no(tie, "q", "yes", "no") == 1);

  // nearly all mass on an unrelated token; restricted argmax ignores it
  test_lm::FixedLogitsLm other(words, table_with(std::log(0.001), std::log(0.0005), 9.0));
  CHECK(predict_yes_no(other, "q", "yes", "no") == 1);

  // monotone rescaling (adding a constant to all logits) changes nothing
  Matrix shifted = table_with(std::log(0.001) + 30.0, std::log(0.0005) + 30.0, 39.0);
  test_lm::FixedLogitsLm rescaled(words, shifted);
  CHECK(predict_yes_no(rescaled, "q", "yes", "no") ==
        predict_yes_no(other, "q", "yes", "no"));

  // positive_means_yes = false flips the label
  CHECK(predict_yes_no(clear, "q", "yes", "no", false) == 0);

  CHECK_THROWS_AS(predict_yes_no(clear, "q", "maybe", "no"), std::invalid_argument);
}

TEST_CASE("adapter fine-tuning learns a separable two-prompt task") {
  // The unembedding stays frozen under adapters, so the toy needs enough
  // output-layer range for a confident answer.
  ToyLMConfig toy = config(7);
  toy.hidden = 32;
  toy.unembed_scale = 0.6;
  auto model = make_toy_model(toy);
  TaskTemplate task;
  task.instruction = "answer yes or no";
  std::vector<std::string> prompts = {
      build_classification_prompt("color is blue.", task),
      build_classification_prompt("money is debt.", task)};
  std::vector<int> labels = {1, 0};

  AdapterConfig cfg;
  cfg.rank = 4;
  cfg.scaling = 8.0;
  cfg.dropout = 0.0;
  cfg.epochs = 150;  // one full-batch step per epoch
  cfg.batch_size = 2;
  cfg.learning_rate = 0.02;
  cfg.validation_fraction = 0.0;

  uint64_t base_before = param_hash(model->base_params());
  FinetuneResult result = finetune_lm_classifier(*model, prompts, labels, task, cfg, 1);
  REQUIRE(result.step_loss.size() <= 200);

  // base weights of the source and of the returned model are bit-identical
  CHECK(param_hash(model->base_params()) == base_before);
  auto* host = dynamic_cast<AdapterHost*>(result.model.get());
  REQUIRE(host != nullptr);
  CHECK(param_hash(host->base_params()) == base_before);

  // the gold token ends above 0.9 for both prompts
  int yes_id = *result.model->tokenizer().single_token_id("yes");
  int no_id = *result.model->tokenizer().single_token_id("no");
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    std::vector<double> logits =
        result.model->next_token_logits(result.model->tokenize(prompts[i]));
    softmax_inplace(logits);
    double gold = logits[std::size_t(labels[i] == 1 ? yes_id : no_id)];
    CHECK(gold >= 0.9);
  }

  // the loss trend is downward (Adam allows small per-step upticks)
  REQUIRE(result.step_loss.size() >= 100);
  for (std::size_t i = 50; i < result.step_loss.size(); i += 25) {
    CHECK(result.step_loss[i] < result.step_loss[i - 50]);
  }
  CHECK(result.step_loss.back() < 0.1 * result.step_loss.front());
}

TEST_CASE("adapter configuration errors") {
  auto model = make_toy_model(config());
  AdapterConfig absent;
  absent.target_blocks = {"mlp_up"};
  CHECK_THROWS_WITH_AS(model->attach_adapters(absent, 0),
                       doctest::Contains("target block absent"), std::invalid_argument);

  AdapterConfig too_big;
  too_big.rank = 64;  // projection dimension is 16
  CHECK_THROWS_WITH_AS(model->attach_adapters(too_big, 0),
                       doctest::Contains("exceeds projection dimension"),
                       std::invalid_argument);

  AdapterConfig fine;
  fine.rank = 16;  // rank equal to the dimension is allowed
  model->attach_adapters(fine, 0);
  CHECK(model->has_adapters());
  CHECK_THROWS_AS(model->attach_adapters(fine, 0), std::logic_error);
}

TEST_CASE("adapters serialize and restore") {
  auto model = make_toy_model(config(9));
  AdapterConfig cfg;
  cfg.rank = 2;
  model->attach_adapters(cfg, 3);
  // make the adapters non-trivial
  auto params = model->trainable_params();
  for (std::size_t i = 0; i < params.size(); ++i) params[i] += 0.01 * double(i % 7);
  std::string path = test_util::write_temp("adapters.json", "");
  model->save_adapters(path);

  auto fresh = make_toy_model(config(9));
  fresh->load_adapters(path);
  std::vector<int> tokens = model->tokenize("who are poor?");
  CHECK(fresh->next_token_logits(tokens) == model->next_token_logits(tokens));
}

TEST_CASE("embedding path beats raw features when the text carries the signal") {
  auto model = make_toy_model(config(13));
  std::unique_ptr<CausalLM> frozen = model->snapshot();

  std::vector<SerializedExample> examples;
  for (int i = 0; i < 24; ++i) {
    bool positive = i % 2 == 0;
    examples.push_back({positive ? "job is bank." : "job is city.", positive ? 1 : 0,
                        i % 4 < 2 ? 0 : 1, i});
  }
  FeatureMatrix embedded = embed_dataset(*frozen, examples);
  LinearTrainResult emb_fit = train_linear(embedded.x, embedded.labels, {});
  LinearPrediction emb_pred = predict_linear(emb_fit.model, embedded.x);

  // raw features deliberately carry no signal
  Matrix noise(examples.size(), 2);
  uint64_t state = 99;
  for (std::size_t r = 0; r < noise.rows(); ++r) {
    for (std::size_t c = 0; c < 2; ++c) {
      state = state * 6364136223846793005ULL + 1442695040888963407ULL;
      noise(r, c) = double(state >> 11) / double(1ULL << 53) - 0.5;
    }
  }
  LinearTrainResult raw_fit = train_linear(noise, embedded.labels, {});
  LinearPrediction raw_pred = predict_linear(raw_fit.model, noise);

  auto acc = [&](const std::vector<int>& pred) {
    int ok = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == examples[i].label;
    return double(ok) / double(pred.size());
  };
  CHECK(acc(emb_pred.labels) >= acc(raw_pred.labels));
  CHECK(acc(emb_pred.labels) == doctest::Approx(1.0));
}

}  // TEST_SUITE
