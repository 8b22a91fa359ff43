#pragma once

// AdamW with decoupled weight decay and a warmup + cosine learning-rate schedule.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tempo/tensor.hpp"

namespace tempo::train {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;

  void validate() const;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;
};

/// Zero moments shaped like params.
AdamState make_adam_state(const std::vector<const Tensor*>& params);

/// One update of every tensor in params:
///   w <- w * (1 - lr * wd) - lr * mhat / (sqrt(vhat) + eps)
/// decay[i] selects which tensors are decayed.
void adamw_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, const std::vector<bool>& decay,
                AdamState& state, double lr, const AdamConfig& cfg);

struct Schedule {
  double base_lr = 1e-3;
  double warmup_fraction = 0.01;
  std::int64_t total_steps = 1000;

  std::int64_t warmup_steps() const;
};

/// Linear ramp from 0 to base_lr over the warmup steps, then
/// base_lr * (1 + cos(pi * progress)) / 2 down to 0 at total_steps.
double cosine_lr(std::int64_t step, const Schedule& s);

}  // namespace tempo::train
