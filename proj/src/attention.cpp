#include "mmttt/attention.hpp"

#include <algorithm>
#include <cmath>

#include "mmttt/errors.hpp"
#include "mmttt/ops.hpp"

namespace mmttt {

MultiHeadAttentionParams MultiHeadAttentionParams::init(std::size_t d_model, std::size_t heads,
                                                        Rng& rng) {
  if (heads == 0 || d_model % heads != 0) {
    throw DimensionError("d_model " + std::to_string(d_model) + " is not divisible by " +
                         std::to_string(heads) + " heads");
  }
  MultiHeadAttentionParams p;
  p.query = Linear::init(d_model, d_model, rng);
  p.key = Linear::init(d_model, d_model, rng);
  p.value = Linear::init(d_model, d_model, rng);
  p.output = Linear::init(d_model, d_model, rng);
  p.heads = heads;
  return p;
}

void MultiHeadAttentionParams::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  query.collect(prefix + ".query", out);
  key.collect(prefix + ".key", out);
  value.collect(prefix + ".value", out);
  output.collect(prefix + ".output", out);
}

Tensor multi_head_attention(const Tensor& query_seq, const Tensor& kv_seq,
                            const MultiHeadAttentionParams& params,
                            std::span<const bool> key_valid, AttentionTrace* trace) {
  const std::size_t d_model = params.d_model();
  if (query_seq.cols() != d_model || kv_seq.cols() != d_model) {
    throw DimensionError("attention: query " + shape_str(query_seq.shape()) + " / kv " +
                         shape_str(kv_seq.shape()) + " do not match d_model " +
                         std::to_string(d_model));
  }
  if (!key_valid.empty() && key_valid.size() != kv_seq.rows())
    throw DimensionError("attention: kv pad mask length does not match kv rows");
  if (!key_valid.empty() && std::find(key_valid.begin(), key_valid.end(), true) == key_valid.end())
    throw UsageError("attention: every key/value row is padded");

  const std::size_t head_width = d_model / params.heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(head_width));
  const Tensor q = linear(query_seq, params.query);
  const Tensor k = linear(kv_seq, params.key);
  const Tensor v = linear(kv_seq, params.value);

  std::vector<Tensor> heads;
  heads.reserve(params.heads);
  for (std::size_t h = 0; h < params.heads; ++h) {
    const std::size_t start = h * head_width;
    const Tensor qh = slice_cols(q, start, head_width);
    const Tensor kh = slice_cols(k, start, head_width);
    const Tensor vh = slice_cols(v, start, head_width);
    const Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_d);
    const Tensor weights = key_valid.empty() ? softmax(scores) : masked_softmax(scores, key_valid);
    if (trace) trace->weights.push_back(weights);
    heads.push_back(matmul(weights, vh));
  }
  return linear(params.heads == 1 ? heads[0] : concat_cols(heads), params.output);
}

TransformerUnitParams TransformerUnitParams::init(std::size_t d_model, std::size_t heads,
                                                  std::size_t d_ff, Rng& rng) {
  TransformerUnitParams p;
  p.attention_norm = LayerNormParams::init(d_model);
  p.attention = MultiHeadAttentionParams::init(d_model, heads, rng);
  p.ff_norm = LayerNormParams::init(d_model);
  p.ff = FeedForward::init(d_model, d_ff, rng);
  return p;
}

void TransformerUnitParams::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  attention_norm.collect(prefix + ".attention_norm", out);
  attention.collect(prefix + ".attention", out);
  ff_norm.collect(prefix + ".ff_norm", out);
  ff.collect(prefix + ".ff", out);
}

Tensor cross_attention_unit(const Tensor& query_seq, const Tensor& kv_seq,
                            const TransformerUnitParams& params, std::span<const bool> kv_valid,
                            UnitOptions options, AttentionTrace* trace) {
  const Tensor attended =
      multi_head_attention(layer_norm(query_seq, params.attention_norm), kv_seq, params.attention,
                           kv_valid, trace);
  Tensor h = add(query_seq, attended);
  if (options.feed_forward) h = add(h, feed_forward(layer_norm(h, params.ff_norm), params.ff));
  return h;
}

Tensor self_attention_unit(const Tensor& seq, const TransformerUnitParams& params,
                           std::span<const bool> valid) {
  const Tensor normed = layer_norm(seq, params.attention_norm);
  Tensor h = add(seq, multi_head_attention(normed, normed, params.attention, valid));
  return add(h, feed_forward(layer_norm(h, params.ff_norm), params.ff));
}

}  // namespace mmttt
