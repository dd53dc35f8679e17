#include "fairpipe/cda.hpp"

#include <stdexcept>

namespace fairpipe {

FlipSpec flip_spec_from(const TabularDataset& data) {
  if (data.sensitive_index < 0) throw std::invalid_argument("dataset has no sensitive column");
  return {data.schema.columns[data.sensitive_index].name, data.sensitive_values};
}

std::string flip_value(const std::string& v, const FlipSpec& flip) {
  if (v == flip.value_pair[0]) return flip.value_pair[1];
  if (v == flip.value_pair[1]) return flip.value_pair[0];
  throw std::invalid_argument("sensitive value '" + v + "' outside the flip pair");
}

TabularDataset augment(const TabularDataset& train, const FlipSpec& flip) {
  if (train.sensitive_index < 0 ||
      train.schema.columns[train.sensitive_index].name != flip.column) {
    throw std::invalid_argument("flip column '" + flip.column +
                                "' is not the dataset's sensitive column");
  }
  TabularDataset out = train;
  out.provenance_original_id.clear();
  out.provenance_is_counterfactual.clear();
  out.rows.reserve(2 * train.rows.size());
  for (std::size_t i = 0; i < train.rows.size(); ++i) {
    out.provenance_original_id.push_back(int(i));
    out.provenance_is_counterfactual.push_back(0);
  }
  for (std::size_t i = 0; i < train.rows.size(); ++i) {
    std::vector<Cell> copy = train.rows[i];
    Cell& cell = copy[train.sensitive_index];
    cell.text = flip_value(cell.text, flip);
    out.rows.push_back(std::move(copy));
    out.provenance_original_id.push_back(int(i));
    out.provenance_is_counterfactual.push_back(1);
  }
  return out;
}

}  // namespace fairpipe
