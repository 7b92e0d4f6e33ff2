#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mmttt/tensor.hpp"

namespace mmttt {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamOptions&) const = default;
};

// Moment buffers for one ordered parameter list. Buffers are created lazily
// on the first step, zero-initialized and shaped like the parameters.
struct AdamState {
  AdamOptions options;
  std::uint64_t t = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  explicit AdamState(AdamOptions opts = {}) : options(opts) {}
};

// Bias-corrected Adam update applied in place; increments state.t once.
void adam_step(std::span<Tensor> params, std::span<const std::span<const double>> grads,
               AdamState& state);

// Same, reading each parameter's accumulated gradient.
void adam_step(std::span<Tensor> params, AdamState& state);

}  // namespace mmttt
