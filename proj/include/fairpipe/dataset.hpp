#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace fairpipe {

enum class ColumnKind { kCategorical, kNumeric };
enum class ColumnRole { kFeature, kTarget, kSensitive };

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::kCategorical;
  ColumnRole role = ColumnRole::kFeature;
};

// Schema file contract: {"columns": [{name, kind, role}], "positive_label",
// "privileged_group", optional "delimiter", optional "missing_values"}.
struct DatasetSchema {
  std::vector<ColumnSpec> columns;
  std::string positive_label;    // target value coded as 1
  std::string privileged_group;  // sensitive value coded as group 1
  char delimiter = ',';
  std::vector<std::string> missing_values = {"", "?", "NA"};
};

DatasetSchema load_schema(const std::string& path);

struct Cell {
  bool missing = false;
  std::string text;      // verbatim value as read (categorical or numeric)
  double number = 0.0;   // parsed value for numeric, valid when !missing
};

struct TabularDataset {
  std::string name;
  DatasetSchema schema;
  std::vector<std::vector<Cell>> rows;  // aligned with schema.columns

  int target_index = -1;
  int sensitive_index = -1;
  std::array<std::string, 2> target_values;     // [coded 0, coded 1]
  std::array<std::string, 2> sensitive_values;  // [group 0, group 1]

  // Augmentation provenance; empty unless the set came out of cda::augment.
  std::vector<int> provenance_original_id;
  std::vector<uint8_t> provenance_is_counterfactual;

  std::size_t size() const { return rows.size(); }
  int label_of(std::size_t row) const;
  int group_of(std::size_t row) const;
  std::vector<int> labels() const;
  std::vector<int> groups() const;
};

// Loads and validates a delimiter-separated file against the schema. Header
// names must cover every schema column (extra file columns are ignored).
TabularDataset load_dataset(const std::string& path, const DatasetSchema& schema,
                            const std::string& name = "");

struct SplitSpec {
  uint64_t seed = 0;
  double train_fraction = 0.8;
  int n_repeats = 3;
};

// Deterministic shuffle-split: row indices are Fisher-Yates shuffled with an
// mt19937_64 seeded by seed * 0x9e3779b97f4a7c15 + repeat_index, the first
// round(train_fraction * n) shuffled rows form the train partition. Errors if
// a partition misses a target class or sensitive group.
std::pair<TabularDataset, TabularDataset> split(const TabularDataset& data,
                                                const SplitSpec& spec,
                                                int repeat_index);

// Re-serializes to delimiter-separated text (values verbatim; numerics as
// read). Provenance columns are appended when present.
std::string to_csv(const TabularDataset& data);

}  // namespace fairpipe
