#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fairpipe {

// Low-rank adapter settings for the attention projections.
struct AdapterConfig {
  int rank = 16;
  double scaling = 32.0;
  double dropout = 0.05;
  std::vector<std::string> target_blocks = {"q_proj", "k_proj", "v_proj", "o_proj"};
  int epochs = 10;
  double learning_rate = 0.02;
  int batch_size = 8;
  double validation_fraction = 0.1;
};

// Models that can host low-rank adapters on their attention projections.
// Once attached, only adapter parameters are trainable; the base weights are
// left bit-identical.
class AdapterHost {
 public:
  virtual ~AdapterHost() = default;

  virtual void attach_adapters(const AdapterConfig& cfg, uint64_t seed) = 0;
  virtual bool has_adapters() const = 0;
  virtual std::span<const double> base_params() const = 0;
  // Enables adapter dropout during backward passes.
  virtual void set_train_mode(bool on, uint64_t dropout_seed) = 0;
  virtual void save_adapters(const std::string& path) const = 0;
  virtual void load_adapters(const std::string& path) = 0;
};

}  // namespace fairpipe
