#pragma once

#include <cstdint>
#include <vector>

#include "mein/tensor.hpp"

namespace mein {

struct AdamConfig {
  double learning_rate = 0.001;
  double decay = 0.9998;  // applied per step: lr_t = learning_rate * decay^t
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 0.0;  // global L2 clip; 0 disables
};

/// Bias-corrected Adam over a fixed parameter list. Moment buffers are
/// allocated to match each parameter at construction.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config);

  /// Applies one update from the accumulated gradients, then clears them.
  /// Throws GraphError if a parameter has no gradient buffer.
  void step();

  double effective_learning_rate() const;
  std::int64_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> first_;
  std::vector<std::vector<float>> second_;
  AdamConfig config_;
  std::int64_t step_ = 0;
};

}  // namespace mein
