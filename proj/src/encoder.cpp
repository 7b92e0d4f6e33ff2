#include "mmttt/encoder.hpp"

#include <cmath>

#include "mmttt/errors.hpp"
#include "mmttt/ops.hpp"

namespace mmttt {

EncoderParams EncoderParams::init(const ModelDims& dims, const ModelConfig& cfg, Rng& rng) {
  EncoderParams p;
  p.text_proj = Linear::init(dims.d_text, cfg.d_model, rng);
  p.audio_proj = Linear::init(dims.d_audio, cfg.d_model, rng);
  p.keyframe_proj = Linear::init(dims.d_keyframe, cfg.d_model, rng);
  p.mask_embedding =
      uniform_parameter({1, cfg.d_model}, 1.0 / std::sqrt(static_cast<double>(cfg.d_model)), rng);
  for (std::size_t i = 0; i < cfg.depth; ++i)
    p.audio_text.push_back(TransformerUnitParams::init(cfg.d_model, cfg.heads, cfg.d_ff, rng));
  for (std::size_t i = 0; i < cfg.depth; ++i)
    p.visual_text.push_back(TransformerUnitParams::init(cfg.d_model, cfg.heads, cfg.d_ff, rng));
  return p;
}

void EncoderParams::collect(std::vector<NamedTensor>& out) const {
  text_proj.collect("encoder.text_proj", out);
  audio_proj.collect("encoder.audio_proj", out);
  keyframe_proj.collect("encoder.keyframe_proj", out);
  out.push_back({"encoder.mask_embedding", mask_embedding});
  for (std::size_t i = 0; i < audio_text.size(); ++i)
    audio_text[i].collect("encoder.audio_text." + std::to_string(i), out);
  for (std::size_t i = 0; i < visual_text.size(); ++i)
    visual_text[i].collect("encoder.visual_text." + std::to_string(i), out);
}

Tensor project_text(const Tensor& text_feat, const EncoderParams& params) {
  return linear(text_feat, params.text_proj);
}

Tensor text_query(const MaskedBatch& masked) {
  const Tensor& text = masked.masked_text_feat;
  return add(text, positional_encoding(text.rows(), text.cols()));
}

namespace {

Tensor run_units(const Tensor& query, const Tensor& kv, const std::vector<TransformerUnitParams>& units,
                 std::span<const bool> kv_valid) {
  Tensor h = query;
  for (const auto& unit : units) h = cross_attention_unit(h, kv, unit, kv_valid);
  return h;
}

}  // namespace

EncoderOutput encode(const MaskedBatch& masked, const Tensor& audio_feat,
                     const Tensor& keyframe_feat, const EncoderParams& params,
                     const EncodeOptions& options) {
  const Tensor query = text_query(masked);
  EncoderOutput out;
  if (options.audio_branch)
    out.audio_text = run_units(query, linear(audio_feat, params.audio_proj), params.audio_text,
                               options.audio_valid);
  if (options.visual_branch)
    out.visual_text = run_units(query, linear(keyframe_feat, params.keyframe_proj),
                                params.visual_text, options.keyframe_valid);
  return out;
}

DecoderParams DecoderParams::init(const ModelDims& dims, const ModelConfig& cfg, Rng& rng) {
  DecoderParams d;
  d.blocks.push_back(TransformerUnitParams::init(cfg.d_model, cfg.heads, cfg.d_ff, rng));
  d.output = Linear::init(cfg.d_model, dims.vocab, rng);
  return d;
}

void DecoderParams::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".block." + std::to_string(i), out);
  output.collect(prefix + ".output", out);
}

Tensor decode_masked(const Tensor& enhanced_seq, std::span<const std::size_t> mask_positions,
                     const DecoderParams& dec) {
  if (mask_positions.empty()) throw UsageError("decode_masked: no masked positions");
  Tensor h = enhanced_seq;
  for (const auto& block : dec.blocks) h = self_attention_unit(h, block);
  return linear(gather_rows(h, mask_positions), dec.output);
}

Tensor mlm_loss(const Tensor& h_at, const Tensor& h_it, std::span<const std::size_t> mask_positions,
                std::span<const std::size_t> target_ids, const DecoderParams& dec_at,
                const DecoderParams& dec_it) {
  if (mask_positions.empty()) throw UsageError("mlm_loss: no masked positions");
  if (!h_at.defined() && !h_it.defined()) throw UsageError("mlm_loss: both branches disabled");
  Tensor total;
  if (h_at.defined()) total = cross_entropy_logits(decode_masked(h_at, mask_positions, dec_at), target_ids);
  if (h_it.defined()) {
    Tensor term = cross_entropy_logits(decode_masked(h_it, mask_positions, dec_it), target_ids);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

}  // namespace mmttt
