#pragma once

#include <span>
#include <string>
#include <vector>

#include "mmttt/layers.hpp"

namespace mmttt {

// Multi-head scaled dot-product attention with separate query and key/value
// sources. Head width d = d_model / heads; scores are scaled by 1/√d.
struct MultiHeadAttentionParams {
  Linear query;
  Linear key;
  Linear value;
  Linear output;  // maps the concatenated heads back to d_model
  std::size_t heads = 1;

  static MultiHeadAttentionParams init(std::size_t d_model, std::size_t heads, Rng& rng);
  std::size_t d_model() const { return query.in_features(); }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

// Optional capture of per-head attention weights (l×s each).
struct AttentionTrace {
  std::vector<Tensor> weights;
};

// (‖ₙ softmax(Q Kᵀ/√d) V) W_out. `key_valid` marks usable kv rows; empty
// means all rows are valid. Throws UsageError if every kv row is padded.
Tensor multi_head_attention(const Tensor& query_seq, const Tensor& kv_seq,
                            const MultiHeadAttentionParams& params,
                            std::span<const bool> key_valid = {}, AttentionTrace* trace = nullptr);

// One Transformer unit: attention and feed-forward sub-layers, each wrapped
// as x + f(LayerNorm(x)).
struct TransformerUnitParams {
  LayerNormParams attention_norm;
  MultiHeadAttentionParams attention;
  LayerNormParams ff_norm;
  FeedForward ff;

  static TransformerUnitParams init(std::size_t d_model, std::size_t heads, std::size_t d_ff,
                                    Rng& rng);
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

struct UnitOptions {
  bool feed_forward = true;
};

// Queries come from `query_seq`, keys and values from `kv_seq`.
Tensor cross_attention_unit(const Tensor& query_seq, const Tensor& kv_seq,
                            const TransformerUnitParams& params,
                            std::span<const bool> kv_valid = {}, UnitOptions options = {},
                            AttentionTrace* trace = nullptr);

// Self-attention variant: keys and values are the normalized input itself.
Tensor self_attention_unit(const Tensor& seq, const TransformerUnitParams& params,
                           std::span<const bool> valid = {});

}  // namespace mmttt
