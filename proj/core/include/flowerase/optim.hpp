#pragma once

#include <cstdint>
#include <vector>

#include "flowerase/autograd.hpp"
#include "flowerase/binary_io.hpp"

namespace flowerase::engine {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double grad_clip = 0.0;  // global L2 norm clip; 0 disables
};

/// Decoupled weight decay Adam over a fixed list of leaf tensors.
class AdamW {
 public:
  AdamW() = default;
  AdamW(std::vector<ag::Tensor> params, AdamWConfig config);

  /// Applies one update from the accumulated gradients (missing grads count
  /// as zero) and returns the pre-clip gradient norm.
  double step();
  void zero_grad();

  const AdamWConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }
  std::uint64_t steps() const { return t_; }

  void save_state(io::Writer& w) const;
  void load_state(io::Reader& r);

 private:
  std::vector<ag::Tensor> params_;
  AdamWConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace flowerase::engine
