#pragma once

#include <array>
#include <string>

#include "fairpipe/dataset.hpp"

namespace fairpipe {

struct FlipSpec {
  std::string column;                     // role must be sensitive
  std::array<std::string, 2> value_pair;  // the two observed sensitive values
};

// Flip spec derived from a dataset's observed sensitive pair.
FlipSpec flip_spec_from(const TabularDataset& data);

// Returns the other element of the pair; an involution on value_pair.
std::string flip_value(const std::string& v, const FlipSpec& flip);

// Duplicates every row with the sensitive value swapped. Output is the
// original rows followed by their counterfactual copies, with provenance
// (original_id, is_counterfactual) recorded. Training data only; never
// applied to test sets.
TabularDataset augment(const TabularDataset& train, const FlipSpec& flip);

}  // namespace fairpipe
