#include "fairpipe/encode.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace fairpipe {
namespace {

double median_of(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

Encoder Encoder::fit(const TabularDataset& train) {
  if (train.rows.empty()) throw std::invalid_argument("cannot fit encoder on empty train set");
  Encoder enc;
  const auto& cols = train.schema.columns;
  for (std::size_t c = 0; c < cols.size(); ++c) {
    if (cols[c].role != ColumnRole::kFeature) continue;
    FeatureEncoding fe;
    fe.name = cols[c].name;
    fe.kind = cols[c].kind;
    fe.column_index = int(c);
    if (fe.kind == ColumnKind::kCategorical) {
      std::set<std::string> seen;
      for (const auto& row : train.rows) {
        seen.insert(row[c].missing ? enc.imputer_.unknown_category : row[c].text);
      }
      fe.categories.assign(seen.begin(), seen.end());
    } else {
      std::vector<double> present;
      for (const auto& row : train.rows) {
        if (!row[c].missing) present.push_back(row[c].number);
      }
      fe.stats.median = median_of(present);
      enc.imputer_.numeric_median[fe.name] = fe.stats.median;
      double sum = 0.0;
      for (const auto& row : train.rows) {
        sum += row[c].missing ? fe.stats.median : row[c].number;
      }
      fe.stats.mean = sum / double(train.rows.size());
      double ss = 0.0;
      for (const auto& row : train.rows) {
        double v = row[c].missing ? fe.stats.median : row[c].number;
        ss += (v - fe.stats.mean) * (v - fe.stats.mean);
      }
      fe.stats.stddev = std::sqrt(ss / double(train.rows.size()));
    }
    enc.features_.push_back(std::move(fe));
  }
  return enc;
}

FeatureMatrix Encoder::encode(const TabularDataset& data) const {
  FeatureMatrix m;
  std::size_t width = 0;
  for (const auto& fe : features_) {
    width += fe.kind == ColumnKind::kCategorical ? fe.categories.size() : 1;
  }
  m.x = Matrix(data.rows.size(), width);
  for (std::size_t f = 0; f < features_.size(); ++f) {
    const auto& fe = features_[f];
    m.feature_names.push_back(fe.name);
    if (fe.kind == ColumnKind::kCategorical) {
      for (const auto& cat : fe.categories) {
        m.column_names.push_back(fe.name + "=" + cat);
        m.column_source.push_back(int(f));
      }
    } else {
      m.column_names.push_back(fe.name);
      m.column_source.push_back(int(f));
    }
  }
  for (std::size_t r = 0; r < data.rows.size(); ++r) {
    std::size_t col = 0;
    for (const auto& fe : features_) {
      const Cell& cell = data.rows[r][fe.column_index];
      if (fe.kind == ColumnKind::kCategorical) {
        const std::string& value = cell.missing ? imputer_.unknown_category : cell.text;
        auto it = std::lower_bound(fe.categories.begin(), fe.categories.end(), value);
        if (it != fe.categories.end() && *it == value) {
          m.x(r, col + std::size_t(it - fe.categories.begin())) = 1.0;
        }
        // unseen category: whole block stays zero
        col += fe.categories.size();
      } else {
        double v = cell.missing ? fe.stats.median : cell.number;
        m.x(r, col) = fe.stats.stddev > 0.0 ? (v - fe.stats.mean) / fe.stats.stddev : 0.0;
        ++col;
      }
    }
  }
  m.labels = data.labels();
  m.groups = data.groups();
  return m;
}

std::string Encoder::describe() const {
  nlohmann::ordered_json j;
  j["columns"] = nlohmann::ordered_json::array();
  for (const auto& fe : features_) {
    nlohmann::ordered_json col;
    col["feature"] = fe.name;
    if (fe.kind == ColumnKind::kCategorical) {
      col["kind"] = "categorical";
      col["categories"] = fe.categories;
    } else {
      col["kind"] = "numeric";
      col["mean"] = fe.stats.mean;
      col["stddev"] = fe.stats.stddev;
      col["median"] = fe.stats.median;
      col["zero_variance"] = fe.stats.stddev == 0.0;
    }
    j["columns"].push_back(col);
  }
  j["unknown_category"] = imputer_.unknown_category;
  return j.dump();
}

std::tuple<FeatureMatrix, FeatureMatrix, std::string> encode_features(
    const TabularDataset& train, const TabularDataset& test) {
  for (std::size_t c = 0; c < train.schema.columns.size(); ++c) {
    const auto& a = train.schema.columns[c];
    if (c >= test.schema.columns.size() || test.schema.columns[c].name != a.name) {
      throw std::invalid_argument("train/test schemas differ");
    }
  }
  Encoder enc = Encoder::fit(train);
  return {enc.encode(train), enc.encode(test), enc.describe()};
}

FeatureMatrix append_group_column(const FeatureMatrix& m, const std::string& name) {
  FeatureMatrix out = m;
  out.x = Matrix(m.x.rows(), m.x.cols() + 1);
  for (std::size_t r = 0; r < m.x.rows(); ++r) {
    for (std::size_t c = 0; c < m.x.cols(); ++c) out.x(r, c) = m.x(r, c);
    out.x(r, m.x.cols()) = double(m.groups[r]);
  }
  out.column_names.push_back(name);
  out.column_source.push_back(int(m.feature_names.size()));
  out.feature_names.push_back(name);
  return out;
}

Imputer fit_imputer(const TabularDataset& train) {
  return Encoder::fit(train).imputer();
}

}  // namespace fairpipe
