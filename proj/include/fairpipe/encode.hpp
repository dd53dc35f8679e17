#pragma once

#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "fairpipe/dataset.hpp"
#include "fairpipe/matrix.hpp"

namespace fairpipe {

struct FeatureMatrix {
  Matrix x;
  std::vector<int> labels;
  std::vector<int> groups;
  std::vector<std::string> column_names;  // encoded columns, e.g. "workclass=Private"
  std::vector<int> column_source;         // encoded column -> index into feature_names
  std::vector<std::string> feature_names; // original features in schema order
};

// Train-time imputation values; also used when serializing rows to text.
struct Imputer {
  std::map<std::string, double> numeric_median;  // feature -> train median
  std::string unknown_category = "unknown";
};

// One-hot + standardization encoder fit on a train split. Categorical levels
// are the values observed in train, sorted; unseen test values encode to an
// all-zero block. Numerics are centered by train mean and scaled by train
// population stddev; zero-variance columns encode to constant 0.
class Encoder {
 public:
  static Encoder fit(const TabularDataset& train);

  FeatureMatrix encode(const TabularDataset& data) const;
  const Imputer& imputer() const { return imputer_; }
  // Human/machine readable description of every column transform (JSON text).
  std::string describe() const;

 private:
  struct NumericStats {
    double mean = 0.0;
    double stddev = 0.0;  // population stddev; 0 marks zero variance
    double median = 0.0;
  };
  struct FeatureEncoding {
    std::string name;
    ColumnKind kind = ColumnKind::kCategorical;
    int column_index = -1;                  // into schema
    std::vector<std::string> categories;    // sorted, train-observed
    NumericStats stats;
  };
  std::vector<FeatureEncoding> features_;
  Imputer imputer_;
};

// Spec-shaped convenience wrapper: fits on train, encodes both splits and
// returns the encoder description.
std::tuple<FeatureMatrix, FeatureMatrix, std::string> encode_features(
    const TabularDataset& train, const TabularDataset& test);

// Appends the 0/1 sensitive-group indicator as one more feature column (the
// downstream feature set includes the sensitive attribute).
FeatureMatrix append_group_column(const FeatureMatrix& m, const std::string& name);

Imputer fit_imputer(const TabularDataset& train);

}  // namespace fairpipe
