#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fairpipe/encode.hpp"
#include "fairpipe/lm.hpp"

namespace fairpipe {

struct FeatureOrder {
  std::vector<std::string> ranked;        // descending importance
  std::map<std::string, double> scores;   // feature -> importance
};

// Importance of a feature = |coefficient| of a regularized logistic model on
// the training matrix (max over one-hot levels for categoricals). Ties break
// by the matrix's feature order. The matrix must already carry every feature
// to rank, sensitive attribute included.
FeatureOrder rank_features(const FeatureMatrix& train, const std::vector<int>& labels,
                           uint64_t seed = 0, double reg_strength = 1e-3);

// One row's final (imputed) values, ready for text rendering.
struct FieldValue {
  std::string name;
  bool is_numeric = false;
  std::string text;    // categorical value, verbatim
  double number = 0.0;
};
using Record = std::vector<FieldValue>;

// Applies the imputer: missing categoricals become the unknown category,
// missing numerics the train median.
Record materialize_row(const TabularDataset& data, std::size_t row,
                       const Imputer& imputer);

// Numeric rendering without trailing zeros.
std::string format_number(double value);

// "«name» is «value»." statements joined by single spaces in ranked order.
std::string serialize_record(const Record& row, const FeatureOrder& order);

// Splits serialized text back into its statements (inverse of the join).
std::vector<std::string> split_statements(const std::string& text);

// Drops whole trailing statements until the tokenized length fits the
// budget. Errors if even the first statement exceeds it.
using TokenCounter = std::function<std::size_t(const std::string&)>;
std::string truncate_to_budget(const std::string& text, std::size_t token_budget,
                               const TokenCounter& count_tokens);
std::string truncate_to_budget(const std::string& text, std::size_t token_budget,
                               const CausalLM& model);

struct TaskTemplate {
  std::string instruction;
  std::string yes_token = "yes";
  std::string no_token = "no";
  bool positive_means_yes = true;
};
TaskTemplate load_task_template(const std::string& path);

// instruction + serialized text + answer cue, byte-deterministic.
std::string build_classification_prompt(const std::string& serialized,
                                        const TaskTemplate& task);

struct SerializedExample {
  std::string text;
  int label = 0;
  int group = 0;
  int source_row_id = 0;
};

// Serializes every row of a dataset in ranked order, truncating to the token
// budget when a counter is supplied (0 budget disables truncation).
std::vector<SerializedExample> serialize_dataset(const TabularDataset& data,
                                                 const FeatureOrder& order,
                                                 const Imputer& imputer,
                                                 std::size_t token_budget = 0,
                                                 const TokenCounter& count_tokens = {});

}  // namespace fairpipe
