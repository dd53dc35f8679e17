#include "fairpipe/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <stdexcept>

#include "fairpipe/csv.hpp"
#include "json.hpp"

namespace fairpipe {
namespace {

ColumnKind parse_kind(const std::string& s) {
  if (s == "categorical") return ColumnKind::kCategorical;
  if (s == "numeric") return ColumnKind::kNumeric;
  throw std::runtime_error("unknown column kind: " + s);
}

ColumnRole parse_role(const std::string& s) {
  if (s == "feature") return ColumnRole::kFeature;
  if (s == "target") return ColumnRole::kTarget;
  if (s == "sensitive") return ColumnRole::kSensitive;
  throw std::runtime_error("unknown column role: " + s);
}

bool parse_number(const std::string& text, double* out) {
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, *out);
  return ec == std::errc() && ptr == end && std::isfinite(*out);
}

void check_roles(const std::vector<ColumnSpec>& columns) {
  int targets = 0, sensitives = 0;
  for (const auto& c : columns) {
    targets += c.role == ColumnRole::kTarget;
    sensitives += c.role == ColumnRole::kSensitive;
  }
  if (targets != 1) throw std::runtime_error("schema must have exactly one target column");
  if (sensitives != 1) {
    throw std::runtime_error("schema must have exactly one sensitive column");
  }
}

// Maps the two observed values of a binary column to {0,1}. `preferred_one`
// picks the value coded 1 when it is observed; otherwise the
// lexicographically larger value is coded 1.
std::array<std::string, 2> binary_coding(const std::set<std::string>& observed,
                                         const std::string& preferred_one,
                                         const std::string& column) {
  if (observed.size() != 2) {
    throw std::runtime_error("column '" + column + "' must take exactly two values, saw " +
                             std::to_string(observed.size()));
  }
  std::vector<std::string> values(observed.begin(), observed.end());
  if (!preferred_one.empty()) {
    if (values[0] == preferred_one) std::swap(values[0], values[1]);
    if (values[1] != preferred_one) {
      throw std::runtime_error("configured value '" + preferred_one +
                               "' not observed in column '" + column + "'");
    }
  }
  return {values[0], values[1]};
}

}  // namespace

DatasetSchema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open schema file: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  DatasetSchema schema;
  for (const auto& col : j.at("columns")) {
    schema.columns.push_back({col.at("name").get<std::string>(),
                              parse_kind(col.at("kind").get<std::string>()),
                              parse_role(col.at("role").get<std::string>())});
  }
  check_roles(schema.columns);
  schema.positive_label = j.value("positive_label", "");
  schema.privileged_group = j.value("privileged_group", "");
  std::string delim = j.value("delimiter", ",");
  if (delim.size() != 1) throw std::runtime_error("delimiter must be a single character");
  schema.delimiter = delim[0];
  if (j.contains("missing_values")) {
    schema.missing_values = j.at("missing_values").get<std::vector<std::string>>();
  }
  return schema;
}

int TabularDataset::label_of(std::size_t row) const {
  return rows[row][target_index].text == target_values[1] ? 1 : 0;
}

int TabularDataset::group_of(std::size_t row) const {
  return rows[row][sensitive_index].text == sensitive_values[1] ? 1 : 0;
}

std::vector<int> TabularDataset::labels() const {
  std::vector<int> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = label_of(i);
  return out;
}

std::vector<int> TabularDataset::groups() const {
  std::vector<int> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = group_of(i);
  return out;
}

TabularDataset load_dataset(const std::string& path, const DatasetSchema& schema,
                            const std::string& name) {
  check_roles(schema.columns);
  CsvTable table = read_csv(path, schema.delimiter);
  if (table.rows.empty()) throw std::runtime_error("dataset has no data rows: " + path);

  std::vector<int> file_index(schema.columns.size(), -1);
  for (std::size_t c = 0; c < schema.columns.size(); ++c) {
    for (std::size_t h = 0; h < table.header.size(); ++h) {
      if (table.header[h] == schema.columns[c].name) {
        file_index[c] = int(h);
        break;
      }
    }
    if (file_index[c] < 0) {
      throw std::runtime_error("schema column '" + schema.columns[c].name +
                               "' absent from file header");
    }
  }

  TabularDataset data;
  data.name = name.empty() ? path : name;
  data.schema = schema;
  const auto& missing = schema.missing_values;
  data.rows.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& raw = table.rows[r];
    std::vector<Cell> row(schema.columns.size());
    for (std::size_t c = 0; c < schema.columns.size(); ++c) {
      if (std::size_t(file_index[c]) >= raw.size()) {
        throw std::runtime_error("row " + std::to_string(r + 1) + " is short");
      }
      const std::string& value = raw[file_index[c]];
      Cell& cell = row[c];
      cell.text = value;
      cell.missing = std::find(missing.begin(), missing.end(), value) != missing.end();
      if (!cell.missing && schema.columns[c].kind == ColumnKind::kNumeric) {
        if (!parse_number(value, &cell.number)) {
          throw std::runtime_error("unparseable numeric cell '" + value + "' in column '" +
                                   schema.columns[c].name + "', row " + std::to_string(r + 1));
        }
      }
    }
    data.rows.push_back(std::move(row));
  }

  for (std::size_t c = 0; c < schema.columns.size(); ++c) {
    if (schema.columns[c].role == ColumnRole::kTarget) data.target_index = int(c);
    if (schema.columns[c].role == ColumnRole::kSensitive) data.sensitive_index = int(c);
  }

  std::set<std::string> target_observed, sensitive_observed;
  for (const auto& row : data.rows) {
    if (row[data.target_index].missing) {
      throw std::runtime_error("missing value in target column");
    }
    if (row[data.sensitive_index].missing) {
      throw std::runtime_error("missing value in sensitive column");
    }
    target_observed.insert(row[data.target_index].text);
    sensitive_observed.insert(row[data.sensitive_index].text);
  }
  data.target_values = binary_coding(target_observed, schema.positive_label,
                                     schema.columns[data.target_index].name);
  data.sensitive_values = binary_coding(sensitive_observed, schema.privileged_group,
                                        schema.columns[data.sensitive_index].name);
  return data;
}

std::pair<TabularDataset, TabularDataset> split(const TabularDataset& data,
                                                const SplitSpec& spec, int repeat_index) {
  if (spec.n_repeats < 1) throw std::invalid_argument("n_repeats must be >= 1");
  if (repeat_index < 0 || repeat_index >= spec.n_repeats) {
    throw std::invalid_argument("repeat_index out of range");
  }
  if (spec.train_fraction <= 0.0 || spec.train_fraction >= 1.0) {
    throw std::invalid_argument("train_fraction must be in (0,1)");
  }
  const std::size_t n = data.rows.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(spec.seed * 0x9e3779b97f4a7c15ULL + uint64_t(repeat_index));
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = rng() % i;
    std::swap(order[i - 1], order[j]);
  }
  std::size_t n_train = std::size_t(std::llround(spec.train_fraction * double(n)));
  if (n_train == 0 || n_train == n) {
    throw std::invalid_argument("split leaves a partition empty");
  }

  auto take = [&](std::size_t begin, std::size_t end) {
    TabularDataset part;
    part.name = data.name;
    part.schema = data.schema;
    part.target_index = data.target_index;
    part.sensitive_index = data.sensitive_index;
    part.target_values = data.target_values;
    part.sensitive_values = data.sensitive_values;
    part.rows.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) part.rows.push_back(data.rows[order[i]]);
    return part;
  };
  TabularDataset train = take(0, n_train);
  TabularDataset test = take(n_train, n);

  for (const TabularDataset* part : {&train, &test}) {
    bool label_seen[2] = {false, false};
    bool group_seen[2] = {false, false};
    for (std::size_t i = 0; i < part->size(); ++i) {
      label_seen[part->label_of(i)] = true;
      group_seen[part->group_of(i)] = true;
    }
    if (!label_seen[0] || !label_seen[1] || !group_seen[0] || !group_seen[1]) {
      throw std::runtime_error(
          "split unusable for fairness evaluation: a partition lacks a target "
          "class or sensitive group");
    }
  }
  return {std::move(train), std::move(test)};
}

std::string to_csv(const TabularDataset& data) {
  CsvTable table;
  for (const auto& col : data.schema.columns) table.header.push_back(col.name);
  const bool provenance = !data.provenance_original_id.empty();
  if (provenance) {
    table.header.push_back("original_id");
    table.header.push_back("is_counterfactual");
  }
  for (std::size_t r = 0; r < data.rows.size(); ++r) {
    std::vector<std::string> row;
    row.reserve(table.header.size());
    for (const auto& cell : data.rows[r]) row.push_back(cell.text);
    if (provenance) {
      row.push_back(std::to_string(data.provenance_original_id[r]));
      row.push_back(data.provenance_is_counterfactual[r] ? "1" : "0");
    }
    table.rows.push_back(std::move(row));
  }
  return write_csv(table, data.schema.delimiter);
}

}  // namespace fairpipe
