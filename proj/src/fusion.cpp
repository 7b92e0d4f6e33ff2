#include "mmttt/fusion.hpp"

#include "mmttt/errors.hpp"
#include "mmttt/features.hpp"
#include "mmttt/ops.hpp"

namespace mmttt {

FusionParams FusionParams::init(const ModelDims& dims, const ModelConfig& cfg, Rng& rng) {
  FusionParams p;
  p.motion_proj = Linear::init(dims.d_motion, cfg.d_model, rng);
  p.comment_proj = Linear::init(dims.d_text, cfg.d_model, rng);
  p.publisher_proj = Linear::init(dims.d_text, cfg.d_model, rng);
  p.layer = TransformerUnitParams::init(cfg.d_model, cfg.heads, cfg.d_ff, rng);
  return p;
}

void FusionParams::collect(std::vector<NamedTensor>& out) const {
  motion_proj.collect("fusion.motion_proj", out);
  comment_proj.collect("fusion.comment_proj", out);
  publisher_proj.collect("fusion.publisher_proj", out);
  layer.collect("fusion.layer", out);
}

ClassifierParams ClassifierParams::init(const ModelConfig& cfg, Rng& rng) {
  return {Linear::init(cfg.d_model, 2, rng)};
}

void ClassifierParams::collect(std::vector<NamedTensor>& out) const { head.collect("classifier.head", out); }

Tensor pool_sequence(const Tensor& seq, std::span<const bool> valid) { return mean_rows(seq, valid); }

Tensor fuse_sequence(const Tensor& slots, const FusionParams& params) {
  if (slots.rows() != kFusionSlots)
    throw DimensionError("fuse: expected 5 slots, got " + shape_str(slots.shape()));
  return mean_rows(self_attention_unit(slots, params.layer));
}

Tensor fuse(const FusionInputs& in, const FusionParams& params) {
  const Tensor slots[] = {in.audio_text, in.visual_text, linear(in.motion, params.motion_proj),
                          linear(in.comments, params.comment_proj),
                          linear(in.publisher, params.publisher_proj)};
  return fuse_sequence(concat_rows(slots), params);
}

Tensor class_probabilities(const Tensor& fused, const ClassifierParams& params) {
  return softmax(linear(fused, params.head));
}

Tensor classify(const Tensor& fused, const ClassifierParams& params) {
  return element(class_probabilities(fused, params), kFake);
}

Tensor fnd_loss(const Tensor& p_fake, int label) { return binary_cross_entropy(p_fake, label); }

}  // namespace mmttt
