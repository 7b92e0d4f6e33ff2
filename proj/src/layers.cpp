#include "mmttt/layers.hpp"

#include <cmath>

#include "mmttt/ops.hpp"

namespace mmttt {

Tensor uniform_parameter(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(values), true);
}

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l;
  l.weight = uniform_parameter({in, out}, bound, rng);
  l.bias = uniform_parameter({1, out}, bound, rng);
  return l;
}

void Linear::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Tensor linear(const Tensor& x, const Linear& layer) {
  return add_row(matmul(x, layer.weight), layer.bias);
}

LayerNormParams LayerNormParams::init(std::size_t width) {
  return {Tensor::full({1, width}, 1.0, true), Tensor::zeros({1, width}, true)};
}

void LayerNormParams::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

Tensor layer_norm(const Tensor& x, const LayerNormParams& p) { return layer_norm(x, p.gain, p.bias); }

FeedForward FeedForward::init(std::size_t d_model, std::size_t d_ff, Rng& rng) {
  FeedForward ff;
  ff.in = Linear::init(d_model, d_ff, rng);
  ff.out = Linear::init(d_ff, d_model, rng);
  return ff;
}

void FeedForward::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  in.collect(prefix + ".in", out);
  this->out.collect(prefix + ".out", out);
}

Tensor feed_forward(const Tensor& x, const FeedForward& ff) {
  return linear(relu(linear(x, ff.in)), ff.out);
}

Tensor positional_encoding(std::size_t length, std::size_t d_model) {
  std::vector<double> values(length * d_model);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < d_model; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model));
      const double angle = static_cast<double>(pos) * freq;
      values[pos * d_model + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor::from({length, d_model}, std::move(values));
}

}  // namespace mmttt
