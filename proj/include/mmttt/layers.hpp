#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mmttt/tensor.hpp"

namespace mmttt {

using Rng = std::mt19937_64;

// Leaf with entries drawn from U(−bound, bound).
Tensor uniform_parameter(Shape shape, double bound, Rng& rng);

// y = x·W + b, W is in×out, b is 1×out.
struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear init(std::size_t in, std::size_t out, Rng& rng);
  std::size_t in_features() const { return weight.rows(); }
  std::size_t out_features() const { return weight.cols(); }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};
Tensor linear(const Tensor& x, const Linear& layer);

struct LayerNormParams {
  Tensor gain;
  Tensor bias;

  static LayerNormParams init(std::size_t width);
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};
Tensor layer_norm(const Tensor& x, const LayerNormParams& p);

// Position-wise two-layer ReLU network, d → d_ff → d.
struct FeedForward {
  Linear in;
  Linear out;

  static FeedForward init(std::size_t d_model, std::size_t d_ff, Rng& rng);
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};
Tensor feed_forward(const Tensor& x, const FeedForward& ff);

// Fixed sinusoidal encoding, l×d.
Tensor positional_encoding(std::size_t length, std::size_t d_model);

}  // namespace mmttt
