#include "fairpipe/unlearning.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "fairpipe/optimizer.hpp"
#include "json.hpp"

namespace fairpipe {
namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

QAContext parse_context(const std::string& s) {
  if (s == "poverty") return QAContext::kPoverty;
  if (s == "wealth") return QAContext::kWealth;
  throw std::runtime_error("unknown context: " + s);
}

// Tokens of prompt + answer and the index of the first answer token.
std::pair<std::vector<int>, std::size_t> qa_tokens(const CausalLM& model,
                                                   const std::string& prompt,
                                                   const std::string& answer) {
  std::vector<int> tokens = model.tokenize(prompt);
  std::size_t first = tokens.size();
  std::vector<int> ans = model.tokenizer().encode(answer, /*add_bos=*/false);
  if (ans.empty()) throw std::invalid_argument("answer tokenizes to nothing: " + answer);
  tokens.insert(tokens.end(), ans.begin(), ans.end());
  if (tokens.size() > std::size_t(model.context_size())) {
    throw std::runtime_error("prompt + answer exceeds the model context size");
  }
  return {std::move(tokens), first};
}

// Accumulates scale * d(log P(answer | prompt))/dθ; returns log P. When
// `floor` is set and log P falls below it, the gradient is zeroed and the
// floor returned.
double backward_answer_log_prob(CausalLM& model, const std::string& prompt,
                                const std::string& answer, double scale,
                                std::optional<double> floor = std::nullopt) {
  auto [tokens, first] = qa_tokens(model, prompt, answer);
  return model.backward_with(tokens, [&](const Matrix& logits, Matrix* dlogits) {
    std::vector<std::vector<double>> probs;
    double lp = 0.0;
    for (std::size_t i = first; i < tokens.size(); ++i) {
      std::vector<double> p(logits.row(i - 1).begin(), logits.row(i - 1).end());
      softmax_inplace(p);
      lp += std::log(std::max(p[std::size_t(tokens[i])], 1e-300));
      probs.push_back(std::move(p));
    }
    if (floor && lp < *floor) return *floor;  // clamped: zero gradient
    for (std::size_t i = first; i < tokens.size(); ++i) {
      const auto& p = probs[i - first];
      auto drow = dlogits->row(i - 1);
      for (std::size_t v = 0; v < p.size(); ++v) {
        drow[v] = scale * ((int(v) == tokens[i] ? 1.0 : 0.0) - p[v]);
      }
    }
    return lp;
  });
}

struct GapGrad {
  double value = 0.0;   // (p_s - p_a)^2 or raw-mode equivalent
  double d_stereo = 0;  // d value / d log P(stereo)
  double d_anti = 0;    // d value / d log P(anti)
};

GapGrad gap_of(double lp_stereo, double lp_anti, GapMode mode) {
  GapGrad g;
  if (mode == GapMode::kNormalized) {
    double ps = sigmoid(lp_stereo - lp_anti);
    double diff = 2.0 * ps - 1.0;  // p_s - p_a
    g.value = diff * diff;
    double d = 4.0 * diff * ps * (1.0 - ps);
    g.d_stereo = d;
    g.d_anti = -d;
  } else {
    double es = std::exp(lp_stereo);
    double ea = std::exp(lp_anti);
    double diff = es - ea;
    g.value = diff * diff;
    g.d_stereo = 2.0 * diff * es;
    g.d_anti = -2.0 * diff * ea;
  }
  return g;
}

void require_batch(std::span<const QAPair> batch) {
  if (batch.empty()) throw std::invalid_argument("batch is empty");
}

}  // namespace

std::vector<QAPair> load_qa_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open QA dataset: " + path);
  std::vector<QAPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  bool seen[2] = {false, false};
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("bad JSON on line " + std::to_string(line_no) + ": " +
                               e.what());
    }
    QAPair pair;
    for (const char* field : {"prompt", "stereotype", "antistereotype", "context"}) {
      if (!j.contains(field)) {
        throw std::runtime_error("line " + std::to_string(line_no) + " missing field '" +
                                 field + "'");
      }
    }
    pair.prompt = j.at("prompt").get<std::string>();
    pair.stereo = j.at("stereotype").get<std::string>();
    pair.anti = j.at("antistereotype").get<std::string>();
    pair.context = parse_context(j.at("context").get<std::string>());
    if (pair.stereo == pair.anti) {
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": stereotype and antistereotype answers are identical");
    }
    seen[pair.context == QAContext::kWealth] = true;
    pairs.push_back(std::move(pair));
  }
  if (pairs.empty()) throw std::runtime_error("QA dataset has no pairs: " + path);
  if (!seen[0] || !seen[1]) {
    throw std::runtime_error("QA dataset needs at least one pair per context");
  }
  return pairs;
}

std::pair<double, double> pair_probabilities(const CausalLM& model, const QAPair& pair) {
  auto [lp_stereo, lp_anti] =
      answer_pair_log_probs(model, pair.prompt, pair.stereo, pair.anti);
  double p_stereo = sigmoid(lp_stereo - lp_anti);
  return {p_stereo, 1.0 - p_stereo};
}

double loss_unlearn(const CausalLM& model, std::span<const QAPair> batch,
                    double log_prob_floor) {
  require_batch(batch);
  double total = 0.0;
  for (const auto& pair : batch) {
    total += std::max(sequence_log_prob(model, pair.prompt, pair.stereo), log_prob_floor);
  }
  return total / double(batch.size());
}

double loss_learn(const CausalLM& model, std::span<const QAPair> batch) {
  require_batch(batch);
  double total = 0.0;
  for (const auto& pair : batch) {
    total -= sequence_log_prob(model, pair.prompt, pair.anti);
  }
  return total / double(batch.size());
}

double loss_gap(const CausalLM& model, std::span<const QAPair> batch, GapMode mode) {
  require_batch(batch);
  double total = 0.0;
  for (const auto& pair : batch) {
    auto [lp_s, lp_a] = answer_pair_log_probs(model, pair.prompt, pair.stereo, pair.anti);
    total += gap_of(lp_s, lp_a, mode).value;
  }
  return total / double(batch.size());
}

namespace {

// Shared by loss_norm and its backward: iterates teacher-forced positions.
template <typename Fn>
double kl_over_corpus(const CausalLM& model, const CausalLM& reference,
                      std::span<const std::string> texts, Fn&& per_text) {
  if (texts.empty()) throw std::invalid_argument("neutral batch is empty");
  if (model.vocab_size() != reference.vocab_size()) {
    throw std::invalid_argument("model and reference vocabularies differ");
  }
  std::size_t total_positions = 0;
  std::vector<std::vector<int>> token_lists;
  for (const auto& text : texts) {
    std::vector<int> tokens = model.tokenize(text);
    if (tokens.size() < 2) continue;
    if (tokens.size() > std::size_t(model.context_size())) {
      throw std::runtime_error("neutral text exceeds the model context size");
    }
    total_positions += tokens.size() - 1;
    token_lists.push_back(std::move(tokens));
  }
  if (total_positions == 0) {
    throw std::invalid_argument("neutral batch has no predictable tokens");
  }
  double kl_sum = 0.0;
  for (const auto& tokens : token_lists) {
    kl_sum += per_text(tokens, total_positions);
  }
  return kl_sum / double(total_positions);
}

// KL(ref || cur) summed over the rows 0..T-2; ref_probs/cur_probs are the
// softmaxed logits of one row.
double kl_row(std::span<const double> ref_probs, std::span<const double> cur_log_probs) {
  double kl = 0.0;
  for (std::size_t v = 0; v < ref_probs.size(); ++v) {
    if (ref_probs[v] <= 0.0) continue;
    kl += ref_probs[v] * (std::log(ref_probs[v]) - cur_log_probs[v]);
  }
  return kl;
}

}  // namespace

double loss_norm(const CausalLM& model, const CausalLM& reference,
                 std::span<const std::string> neutral_texts) {
  return kl_over_corpus(
      model, reference, neutral_texts, [&](const std::vector<int>& tokens, std::size_t) {
        Matrix ref_logits = reference.all_logits(tokens);
        Matrix cur_logits = model.all_logits(tokens);
        double kl = 0.0;
        for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
          std::vector<double> ref_p(ref_logits.row(t).begin(), ref_logits.row(t).end());
          softmax_inplace(ref_p);
          std::vector<double> cur_lp(cur_logits.row(t).begin(), cur_logits.row(t).end());
          log_softmax_inplace(cur_lp);
          kl += kl_row(ref_p, cur_lp);
        }
        return kl;
      });
}

double total_loss(const LossWeights& weights, double l_unlearn, double l_learn,
                  double l_gap, double l_norm) {
  for (double v : {l_unlearn, l_learn, l_gap, l_norm}) {
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite loss component");
  }
  return weights.unlearn * l_unlearn + weights.learn * l_learn + weights.gap * l_gap +
         weights.norm * l_norm;
}

double backward_loss_unlearn(CausalLM& model, std::span<const QAPair> batch, double scale,
                             double log_prob_floor) {
  require_batch(batch);
  double total = 0.0;
  double per = scale / double(batch.size());
  for (const auto& pair : batch) {
    total += backward_answer_log_prob(model, pair.prompt, pair.stereo, per,
                                      log_prob_floor);
  }
  return total / double(batch.size());
}

double backward_loss_learn(CausalLM& model, std::span<const QAPair> batch, double scale) {
  require_batch(batch);
  double total = 0.0;
  double per = -scale / double(batch.size());
  for (const auto& pair : batch) {
    total -= backward_answer_log_prob(model, pair.prompt, pair.anti, per);
  }
  return total / double(batch.size());
}

double backward_loss_gap(CausalLM& model, std::span<const QAPair> batch, double scale,
                         GapMode mode) {
  require_batch(batch);
  double total = 0.0;
  for (const auto& pair : batch) {
    auto [lp_s, lp_a] = answer_pair_log_probs(model, pair.prompt, pair.stereo, pair.anti);
    GapGrad g = gap_of(lp_s, lp_a, mode);
    total += g.value;
    double per = scale / double(batch.size());
    backward_answer_log_prob(model, pair.prompt, pair.stereo, per * g.d_stereo);
    backward_answer_log_prob(model, pair.prompt, pair.anti, per * g.d_anti);
  }
  return total / double(batch.size());
}

double backward_loss_norm(CausalLM& model, const CausalLM& reference,
                          std::span<const std::string> neutral_texts, double scale) {
  return kl_over_corpus(
      model, reference, neutral_texts,
      [&](const std::vector<int>& tokens, std::size_t total_positions) {
        Matrix ref_logits = reference.all_logits(tokens);
        double per = scale / double(total_positions);
        return model.backward_with(tokens, [&](const Matrix& logits, Matrix* dlogits) {
          double kl = 0.0;
          for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
            std::vector<double> ref_p(ref_logits.row(t).begin(), ref_logits.row(t).end());
            softmax_inplace(ref_p);
            std::vector<double> cur_p(logits.row(t).begin(), logits.row(t).end());
            std::vector<double> cur_lp = cur_p;
            log_softmax_inplace(cur_lp);
            softmax_inplace(cur_p);
            kl += kl_row(ref_p, cur_lp);
            auto drow = dlogits->row(t);
            for (std::size_t v = 0; v < cur_p.size(); ++v) {
              drow[v] = per * (cur_p[v] - ref_p[v]);
            }
          }
          return kl;
        });
      });
}

ContextProbes probe_contexts(const CausalLM& model, std::span<const QAPair> pairs) {
  std::vector<PairProbability> poverty, wealth;
  for (const auto& pair : pairs) {
    auto [p_stereo, p_anti] = pair_probabilities(model, pair);
    PairProbability p{p_stereo, p_anti};
    (pair.context == QAContext::kPoverty ? poverty : wealth).push_back(p);
  }
  ContextProbes probes;
  auto summarize = [](std::span<const PairProbability> v, PairProbability* mean,
                      double* gap) {
    if (v.empty()) return;
    ContextIntrinsic c = aggregate_context(v);
    mean->stereo = c.mean_stereo;
    mean->anti = c.mean_anti;
    *gap = c.gap;
  };
  summarize(poverty, &probes.poverty, &probes.gap_poverty);
  summarize(wealth, &probes.wealth, &probes.gap_wealth);
  return probes;
}

IntrinsicReport intrinsic_gap_report(const CausalLM& model, std::span<const QAPair> qa,
                                     std::span<const std::string> neutral_texts) {
  std::vector<PairProbability> poverty, wealth;
  for (const auto& pair : qa) {
    auto [p_stereo, p_anti] = pair_probabilities(model, pair);
    (pair.context == QAContext::kPoverty ? poverty : wealth)
        .push_back({p_stereo, p_anti});
  }
  double ppl = neutral_texts.empty() ? 0.0 : perplexity(model, neutral_texts);
  return aggregate_intrinsic(poverty, wealth, ppl);
}

std::string epoch_log_jsonl(std::span<const EpochLog> log) {
  std::string out;
  for (const auto& e : log) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["L_unlearn"] = e.l_unlearn;
    j["L_learn"] = e.l_learn;
    j["L_gap"] = e.l_gap;
    j["L_norm"] = e.l_norm;
    j["total"] = e.total;
    j["gap_poverty"] = e.gap_poverty;
    j["gap_wealth"] = e.gap_wealth;
    j["perplexity"] = e.perplexity;
    out += j.dump();
    out += '\n';
  }
  return out;
}

UnlearnResult train_unlearn(const CausalLM& start, std::span<const QAPair> qa,
                            std::span<const std::string> neutral_texts,
                            const UnlearnRunConfig& cfg) {
  if (qa.empty()) throw std::invalid_argument("QA set is empty");
  if (cfg.learning_rate <= 0.0) throw std::invalid_argument("learning rate must be > 0");
  if (cfg.batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (neutral_texts.empty() && cfg.weights.norm != 0.0) {
    throw std::invalid_argument("KL term requires a neutral corpus");
  }

  std::unique_ptr<CausalLM> reference = start.snapshot();
  std::unique_ptr<CausalLM> work = start.clone();

  // Stratified validation split per context, seeded.
  std::mt19937_64 rng(cfg.seed ^ 0xab5eed00ULL);
  std::vector<std::size_t> train_idx, val_idx;
  for (QAContext ctx : {QAContext::kPoverty, QAContext::kWealth}) {
    std::vector<std::size_t> bucket;
    for (std::size_t i = 0; i < qa.size(); ++i) {
      if (qa[i].context == ctx) bucket.push_back(i);
    }
    for (std::size_t i = bucket.size(); i > 1; --i) {
      std::swap(bucket[i - 1], bucket[rng() % i]);
    }
    std::size_t n_val = std::size_t(double(bucket.size()) * cfg.validation_fraction);
    if (n_val >= bucket.size()) n_val = bucket.size() > 1 ? bucket.size() - 1 : 0;
    for (std::size_t i = 0; i < bucket.size(); ++i) {
      (i < n_val ? val_idx : train_idx).push_back(bucket[i]);
    }
  }
  if (val_idx.empty()) val_idx = train_idx;  // tiny sets validate on train
  std::vector<QAPair> val_pairs;
  for (std::size_t i : val_idx) val_pairs.push_back(qa[i]);

  UnlearnResult result;
  AdamOptimizer opt(work->param_count(), cfg.learning_rate);
  std::vector<double> best_params(work->trainable_params().begin(),
                                  work->trainable_params().end());
  std::vector<double> last_finite = best_params;
  double best_gap = std::numeric_limits<double>::infinity();

  for (int epoch = 1; epoch <= cfg.epochs && !result.aborted; ++epoch) {
    for (std::size_t i = train_idx.size(); i > 1; --i) {
      std::swap(train_idx[i - 1], train_idx[rng() % i]);
    }
    double sum_unlearn = 0, sum_learn = 0, sum_gap = 0, sum_norm = 0, sum_total = 0;
    std::size_t steps = 0;
    for (std::size_t at = 0; at < train_idx.size();
         at += std::size_t(cfg.batch_size)) {
      std::size_t end = std::min(train_idx.size(), at + std::size_t(cfg.batch_size));
      std::vector<QAPair> batch;
      for (std::size_t i = at; i < end; ++i) batch.push_back(qa[train_idx[i]]);

      // Independent neutral draw per step.
      std::vector<std::string> neutral_batch;
      if (!neutral_texts.empty()) {
        int take = std::max(1, cfg.neutral_batch_size);
        for (int i = 0; i < take; ++i) {
          neutral_batch.push_back(neutral_texts[rng() % neutral_texts.size()]);
        }
      }

      work->zero_grads();
      const double inv_b = 1.0 / double(batch.size());
      double l_unlearn = 0, l_learn = 0, l_gap = 0;
      for (const auto& pair : batch) {
        auto [lp_s, lp_a] =
            answer_pair_log_probs(*work, pair.prompt, pair.stereo, pair.anti);
        GapGrad g = gap_of(lp_s, lp_a, cfg.gap_mode);
        bool clamped = lp_s < cfg.log_prob_floor;
        l_unlearn += clamped ? cfg.log_prob_floor : lp_s;
        l_learn -= lp_a;
        l_gap += g.value;
        double stereo_scale =
            (clamped ? 0.0 : cfg.weights.unlearn) * inv_b + cfg.weights.gap * inv_b * g.d_stereo;
        double anti_scale =
            -cfg.weights.learn * inv_b + cfg.weights.gap * inv_b * g.d_anti;
        if (stereo_scale != 0.0) {
          backward_answer_log_prob(*work, pair.prompt, pair.stereo, stereo_scale);
        }
        if (anti_scale != 0.0) {
          backward_answer_log_prob(*work, pair.prompt, pair.anti, anti_scale);
        }
      }
      l_unlearn *= inv_b;
      l_learn *= inv_b;
      l_gap *= inv_b;
      double l_norm = 0.0;
      if (cfg.weights.norm != 0.0) {
        l_norm = backward_loss_norm(*work, *reference, neutral_batch, cfg.weights.norm);
      } else if (!neutral_batch.empty()) {
        l_norm = loss_norm(*work, *reference, neutral_batch);
      }
      double total =
          total_loss(cfg.weights, l_unlearn, l_learn, l_gap, l_norm);
      if (!std::isfinite(total)) {
        result.aborted = true;
        break;
      }
      opt.step(work->trainable_params(), work->trainable_grads());
      bool params_finite = true;
      for (double v : std::span<const double>(work->trainable_params())) {
        if (!std::isfinite(v)) {
          params_finite = false;
          break;
        }
      }
      if (!params_finite) {
        result.aborted = true;
        break;
      }
      sum_unlearn += l_unlearn;
      sum_learn += l_learn;
      sum_gap += l_gap;
      sum_norm += l_norm;
      sum_total += total;
      ++steps;
    }
    if (result.aborted) {
      std::copy(last_finite.begin(), last_finite.end(),
                work->trainable_params().begin());
      break;
    }
    last_finite.assign(work->trainable_params().begin(), work->trainable_params().end());

    EpochLog log;
    log.epoch = epoch;
    if (steps > 0) {
      log.l_unlearn = sum_unlearn / double(steps);
      log.l_learn = sum_learn / double(steps);
      log.l_gap = sum_gap / double(steps);
      log.l_norm = sum_norm / double(steps);
      log.total = sum_total / double(steps);
    }
    ContextProbes probes = probe_contexts(*work, val_pairs);
    log.gap_poverty = probes.gap_poverty;
    log.gap_wealth = probes.gap_wealth;
    log.perplexity = neutral_texts.empty() ? 0.0 : perplexity(*work, neutral_texts);
    result.log.push_back(log);

    double mean_gap = 0.5 * (log.gap_poverty + log.gap_wealth);
    bool better = cfg.selection == CheckpointSelection::kFinal || mean_gap < best_gap;
    if (better) {
      best_gap = mean_gap;
      best_params.assign(work->trainable_params().begin(),
                         work->trainable_params().end());
      result.best_epoch = epoch;
    }
  }

  if (result.best_epoch >= 0 && !result.aborted) {
    std::copy(best_params.begin(), best_params.end(), work->trainable_params().begin());
  }
  result.model = std::move(work);
  return result;
}

std::vector<GridResult> grid_search(
    const std::function<std::unique_ptr<CausalLM>()>& model_factory,
    std::span<const QAPair> qa, std::span<const std::string> neutral_texts,
    std::span<const UnlearnRunConfig> space) {
  if (space.empty()) throw std::invalid_argument("grid space is empty");
  std::vector<GridResult> results;
  for (const auto& cfg : space) {
    std::unique_ptr<CausalLM> model = model_factory();
    UnlearnResult run = train_unlearn(*model, qa, neutral_texts, cfg);
    GridResult r;
    r.config = cfg;
    ContextProbes probes = probe_contexts(*run.model, qa);
    r.anti_poverty = probes.poverty.anti;
    r.stereo_poverty = probes.poverty.stereo;
    r.anti_wealth = probes.wealth.anti;
    r.stereo_wealth = probes.wealth.stereo;
    r.gap_poverty = probes.gap_poverty;
    r.gap_wealth = probes.gap_wealth;
    r.mean_gap = 0.5 * (r.gap_poverty + r.gap_wealth);
    r.perplexity = neutral_texts.empty() ? 0.0 : perplexity(*run.model, neutral_texts);
    r.best_epoch = run.best_epoch;
    r.aborted = run.aborted;
    results.push_back(r);
  }
  std::stable_sort(results.begin(), results.end(),
                   [](const GridResult& a, const GridResult& b) {
                     if (a.mean_gap != b.mean_gap) return a.mean_gap < b.mean_gap;
                     return a.perplexity < b.perplexity;
                   });
  return results;
}

std::vector<UnlearnRunConfig> make_grid(const UnlearnRunConfig& base,
                                        std::span<const double> learning_rates,
                                        std::span<const double> unlearn_vals,
                                        std::span<const double> learn_vals,
                                        std::span<const double> gap_vals,
                                        std::span<const double> norm_vals) {
  std::vector<UnlearnRunConfig> grid;
  for (double lr : learning_rates) {
    for (double u : unlearn_vals) {
      for (double l : learn_vals) {
        for (double g : gap_vals) {
          for (double n : norm_vals) {
            UnlearnRunConfig cfg = base;
            cfg.learning_rate = lr;
            cfg.weights = {u, l, g, n};
            grid.push_back(cfg);
          }
        }
      }
    }
  }
  return grid;
}

std::string grid_results_csv(std::span<const GridResult> results) {
  std::ostringstream out;
  out << "learning_rate,lambda_unlearn,lambda_learn,lambda_gap,lambda_norm,"
         "antistereotype_prob_poverty,stereotype_prob_poverty,"
         "antistereotype_prob_wealth,stereotype_prob_wealth,"
         "gap_poverty,gap_wealth,mean_gap,perplexity,best_epoch,aborted\n";
  for (const auto& r : results) {
    out << r.config.learning_rate << ',' << r.config.weights.unlearn << ','
        << r.config.weights.learn << ',' << r.config.weights.gap << ','
        << r.config.weights.norm << ',' << r.anti_poverty << ',' << r.stereo_poverty
        << ',' << r.anti_wealth << ',' << r.stereo_wealth << ',' << r.gap_poverty << ','
        << r.gap_wealth << ',' << r.mean_gap << ',' << r.perplexity << ','
        << r.best_epoch << ',' << (r.aborted ? 1 : 0) << '\n';
  }
  return out.str();
}

}  // namespace fairpipe
