#include "fairpipe/serializer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "fairpipe/linear.hpp"
#include "json.hpp"

namespace fairpipe {

FeatureOrder rank_features(const FeatureMatrix& train, const std::vector<int>& labels,
                           uint64_t seed, double reg_strength) {
  LinearTrainConfig cfg;
  cfg.seed = seed;
  cfg.reg_strength = reg_strength;
  LinearTrainResult trained = train_linear(train.x, labels, cfg);

  // Fold one-hot columns back onto their source feature by max |coefficient|.
  std::vector<double> score(train.feature_names.size(), 0.0);
  for (std::size_t c = 0; c < train.column_source.size(); ++c) {
    int fidx = train.column_source[c];
    score[std::size_t(fidx)] =
        std::max(score[std::size_t(fidx)], std::abs(trained.model.weights[c]));
  }

  FeatureOrder order;
  std::vector<std::size_t> idx(train.feature_names.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  for (std::size_t i : idx) {
    order.ranked.push_back(train.feature_names[i]);
    order.scores[train.feature_names[i]] = score[i];
  }
  return order;
}

Record materialize_row(const TabularDataset& data, std::size_t row,
                       const Imputer& imputer) {
  Record record;
  const auto& cols = data.schema.columns;
  for (std::size_t c = 0; c < cols.size(); ++c) {
    if (cols[c].role == ColumnRole::kTarget) continue;
    const Cell& cell = data.rows[row][c];
    FieldValue fv;
    fv.name = cols[c].name;
    if (cols[c].kind == ColumnKind::kNumeric) {
      fv.is_numeric = true;
      if (cell.missing) {
        auto it = imputer.numeric_median.find(fv.name);
        fv.number = it == imputer.numeric_median.end() ? 0.0 : it->second;
      } else {
        fv.number = cell.number;
      }
    } else {
      fv.text = cell.missing ? imputer.unknown_category : cell.text;
    }
    record.push_back(std::move(fv));
  }
  return record;
}

std::string format_number(double value) {
  if (std::isfinite(value) && value == std::floor(value) && std::abs(value) < 1e15) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.0f", value);
    return buf;
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", value);
  return buf;
}

std::string serialize_record(const Record& row, const FeatureOrder& order) {
  std::string out;
  bool first = true;
  for (const std::string& name : order.ranked) {
    auto it = std::find_if(row.begin(), row.end(),
                           [&](const FieldValue& fv) { return fv.name == name; });
    if (it == row.end()) {
      throw std::invalid_argument("row has no value for feature '" + name + "'");
    }
    if (!first) out += ' ';
    first = false;
    out += name;
    out += " is ";
    out += it->is_numeric ? format_number(it->number) : it->text;
    out += '.';
  }
  return out;
}

std::vector<std::string> split_statements(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t dot = text.find(". ", start);
    if (dot == std::string::npos) {
      out.push_back(text.substr(start));
      break;
    }
    out.push_back(text.substr(start, dot - start + 1));
    start = dot + 2;
  }
  return out;
}

std::string truncate_to_budget(const std::string& text, std::size_t token_budget,
                               const TokenCounter& count_tokens) {
  if (count_tokens(text) <= token_budget) return text;
  std::vector<std::string> statements = split_statements(text);
  std::string kept;
  std::string best;
  bool any = false;
  for (std::size_t i = 0; i < statements.size(); ++i) {
    if (i > 0) kept += ' ';
    kept += statements[i];
    if (count_tokens(kept) <= token_budget) {
      best = kept;
      any = true;
    } else {
      break;
    }
  }
  if (!any) {
    throw std::invalid_argument("token budget smaller than the first statement");
  }
  return best;
}

std::string truncate_to_budget(const std::string& text, std::size_t token_budget,
                               const CausalLM& model) {
  return truncate_to_budget(text, token_budget, [&model](const std::string& s) {
    return model.tokenizer().encode(s, /*add_bos=*/false).size();
  });
}

TaskTemplate load_task_template(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open task template: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  TaskTemplate t;
  t.instruction = j.at("instruction").get<std::string>();
  t.yes_token = j.value("yes_token", "yes");
  t.no_token = j.value("no_token", "no");
  t.positive_means_yes = j.value("positive_means_yes", true);
  return t;
}

std::string build_classification_prompt(const std::string& serialized,
                                        const TaskTemplate& task) {
  return task.instruction + "\n" + serialized + "\nAnswer:";
}

std::vector<SerializedExample> serialize_dataset(const TabularDataset& data,
                                                 const FeatureOrder& order,
                                                 const Imputer& imputer,
                                                 std::size_t token_budget,
                                                 const TokenCounter& count_tokens) {
  std::vector<SerializedExample> out;
  out.reserve(data.size());
  for (std::size_t r = 0; r < data.size(); ++r) {
    SerializedExample ex;
    ex.text = serialize_record(materialize_row(data, r, imputer), order);
    if (token_budget > 0 && count_tokens) {
      ex.text = truncate_to_budget(ex.text, token_budget, count_tokens);
    }
    ex.label = data.label_of(r);
    ex.group = data.group_of(r);
    ex.source_row_id = int(r);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace fairpipe
