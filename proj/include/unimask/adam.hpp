#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "unimask/tensor.hpp"

namespace unimask {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  double weight_decay = 0.01;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  std::int64_t step = 0;
};

struct AdamStepReport {
  double grad_norm = 0.0;  // global norm before clipping
  double clip_scale = 1.0;
};

// One AdamW update over every parameter in `params`, reading each tensor's
// grad buffer (a missing buffer counts as zero). The global gradient norm is
// clipped to config.clip_norm first; weight decay is decoupled and applied
// only to parameters flagged `decay`. A non-finite gradient throws
// NumericError naming the tensor and leaves parameters and state untouched.
template <typename T>
AdamStepReport adam_step(std::span<NamedTensor<T>> params, AdamState<T>& state,
                         double lr, const AdamConfig& config);

extern template AdamStepReport adam_step(std::span<NamedTensor<float>>,
                                         AdamState<float>&, double,
                                         const AdamConfig&);
extern template AdamStepReport adam_step(std::span<NamedTensor<double>>,
                                         AdamState<double>&, double,
                                         const AdamConfig&);

}  // namespace unimask
