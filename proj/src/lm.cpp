#include "fairpipe/lm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace fairpipe {

Tokenizer::Tokenizer(std::vector<std::string> words) {
  tokens_ = {"<bos>", "<unk>"};
  for (auto& w : words) {
    if (w.empty()) throw std::invalid_argument("empty vocabulary word");
    if (ids_.count(w) || w == "<bos>" || w == "<unk>") continue;
    ids_[w] = int(tokens_.size());
    tokens_.push_back(std::move(w));
  }
}

std::vector<int> Tokenizer::encode(std::string_view text, bool add_bos) const {
  std::vector<int> out;
  if (add_bos) out.push_back(kBos);
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    auto it = ids_.find(word);
    out.push_back(it == ids_.end() ? kUnk : it->second);
    word.clear();
  };
  for (char raw : text) {
    unsigned char c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      flush();
    } else if (c == '.' || c == ',' || c == '?' || c == '!') {
      flush();
      word.push_back(char(c));
      flush();
    } else {
      word.push_back(char(std::tolower(c)));
    }
  }
  flush();
  return out;
}

std::optional<int> Tokenizer::single_token_id(const std::string& word) const {
  std::vector<int> toks = encode(word, /*add_bos=*/false);
  if (toks.size() != 1 || toks[0] == kUnk) return std::nullopt;
  return toks[0];
}

void log_softmax_inplace(std::span<double> logits) {
  double max = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - max);
  double log_z = max + std::log(sum);
  for (double& v : logits) v -= log_z;
}

void softmax_inplace(std::span<double> logits) {
  log_softmax_inplace(logits);
  for (double& v : logits) v = std::exp(v);
}

namespace {

// Appends the answer tokens (no BOS) to the prompt tokens and returns the
// index of the first answer token.
std::size_t append_answer(const CausalLM& model, std::vector<int>* tokens,
                          const std::string& answer) {
  std::size_t first = tokens->size();
  std::vector<int> ans = model.tokenizer().encode(answer, /*add_bos=*/false);
  if (ans.empty()) throw std::invalid_argument("answer tokenizes to nothing: " + answer);
  tokens->insert(tokens->end(), ans.begin(), ans.end());
  if (tokens->size() > std::size_t(model.context_size())) {
    throw std::runtime_error("prompt + answer exceeds the model context size");
  }
  return first;
}

double answer_log_prob_from_logits(const Matrix& logits, std::span<const int> tokens,
                                   std::size_t first_answer) {
  double total = 0.0;
  std::vector<double> row;
  for (std::size_t i = first_answer; i < tokens.size(); ++i) {
    row.assign(logits.row(i - 1).begin(), logits.row(i - 1).end());
    log_softmax_inplace(row);
    total += row[std::size_t(tokens[i])];
  }
  return total;
}

}  // namespace

double sequence_log_prob(const CausalLM& model, const std::string& prompt,
                         const std::string& answer) {
  std::vector<int> tokens = model.tokenize(prompt);
  std::size_t first = append_answer(model, &tokens, answer);
  Matrix logits = model.all_logits(tokens);
  return answer_log_prob_from_logits(logits, tokens, first);
}

std::pair<double, double> answer_pair_log_probs(const CausalLM& model,
                                                const std::string& prompt,
                                                const std::string& answer_a,
                                                const std::string& answer_b) {
  const Tokenizer& tok = model.tokenizer();
  std::vector<int> a = tok.encode(answer_a, false);
  std::vector<int> b = tok.encode(answer_b, false);
  if (a.size() == 1 && b.size() == 1) {
    std::vector<int> prompt_tokens = model.tokenize(prompt);
    if (prompt_tokens.size() + 1 > std::size_t(model.context_size())) {
      throw std::runtime_error("prompt + answer exceeds the model context size");
    }
    std::vector<double> row = model.next_token_logits(prompt_tokens);
    log_softmax_inplace(row);
    return {row[std::size_t(a[0])], row[std::size_t(b[0])]};
  }
  return {sequence_log_prob(model, prompt, answer_a),
          sequence_log_prob(model, prompt, answer_b)};
}

double perplexity(const CausalLM& model, std::span<const std::string> corpus) {
  if (corpus.empty()) throw std::invalid_argument("perplexity corpus is empty");
  double nll = 0.0;
  std::size_t positions = 0;
  std::vector<double> row;
  for (const std::string& doc : corpus) {
    std::vector<int> tokens = model.tokenize(doc);
    if (tokens.size() < 2) continue;  // nothing predicted
    if (tokens.size() > std::size_t(model.context_size())) {
      throw std::runtime_error("document exceeds the model context size");
    }
    Matrix logits = model.all_logits(tokens);
    for (std::size_t i = 1; i < tokens.size(); ++i) {
      row.assign(logits.row(i - 1).begin(), logits.row(i - 1).end());
      log_softmax_inplace(row);
      nll -= row[std::size_t(tokens[i])];
      ++positions;
    }
  }
  if (positions == 0) throw std::invalid_argument("corpus has no predictable tokens");
  return std::exp(nll / double(positions));
}

std::vector<double> embed(const CausalLM& model, const std::string& text) {
  std::vector<int> tokens = model.tokenize(text);
  if (tokens.size() < 2) {  // BOS only
    throw std::invalid_argument("text tokenizes to nothing: " + text);
  }
  if (tokens.size() > std::size_t(model.context_size())) {
    throw std::runtime_error("text exceeds the model context size");
  }
  return model.hidden_state(tokens);
}

std::vector<NeutralExample> load_neutral_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open neutral corpus: " + path);
  std::vector<NeutralExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    NeutralExample ex;
    try {
      ex.question = j.at("question").get<std::string>();
      ex.best_answer = j.at("best_answer").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw std::runtime_error("bad neutral corpus line " + std::to_string(line_no) +
                               " in " + path);
    }
    out.push_back(std::move(ex));
  }
  if (out.empty()) throw std::runtime_error("neutral corpus is empty: " + path);
  return out;
}

std::vector<std::string> neutral_texts(std::span<const NeutralExample> corpus) {
  std::vector<std::string> out;
  out.reserve(corpus.size());
  for (const auto& ex : corpus) out.push_back(ex.question + " " + ex.best_answer);
  return out;
}

}  // namespace fairpipe
