#pragma once

#include <span>
#include <string>
#include <vector>

#include "mmttt/attention.hpp"
#include "mmttt/masking.hpp"

namespace mmttt {

struct ModelDims {
  std::size_t d_text = 32;
  std::size_t d_keyframe = 32;
  std::size_t d_motion = 16;
  std::size_t d_audio = 24;
  std::size_t vocab = 64;

  bool operator==(const ModelDims&) const = default;
};

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t d_ff = 128;
  std::size_t depth = 1;  // Transformer units per cross-modal branch

  bool operator==(const ModelConfig&) const = default;
};

// Encoder partition: modality projections feeding the cross-modal units,
// the learnable mask embedding, and the audio-text / visual-text unit stacks.
struct EncoderParams {
  Linear text_proj;
  Linear audio_proj;
  Linear keyframe_proj;
  Tensor mask_embedding;  // 1×d_model
  std::vector<TransformerUnitParams> audio_text;
  std::vector<TransformerUnitParams> visual_text;

  static EncoderParams init(const ModelDims& dims, const ModelConfig& cfg, Rng& rng);
  void collect(std::vector<NamedTensor>& out) const;
};

// Projects raw l×d_t text features to l×d_model (before masking).
Tensor project_text(const Tensor& text_feat, const EncoderParams& params);

struct EncodeOptions {
  bool audio_branch = true;
  bool visual_branch = true;
  std::span<const bool> audio_valid = {};
  std::span<const bool> keyframe_valid = {};
};

// H_AT and H_IT, each l×d_model. A disabled branch yields an undefined tensor.
struct EncoderOutput {
  Tensor audio_text;
  Tensor visual_text;
};

// The query sequence fed to both branches: masked text plus positional encoding.
Tensor text_query(const MaskedBatch& masked);

// Runs the audio-text and visual-text units on the masked text. Raw audio
// (n×d_a) and keyframes (m×d_i) are projected here. The branches share no weights.
EncoderOutput encode(const MaskedBatch& masked, const Tensor& audio_feat,
                     const Tensor& keyframe_feat, const EncoderParams& params,
                     const EncodeOptions& options = {});

// Transformer block plus d_model→V output layer.
struct DecoderParams {
  std::vector<TransformerUnitParams> blocks;
  Linear output;

  static DecoderParams init(const ModelDims& dims, const ModelConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

// Runs the decoder block over the whole sequence and returns p×V logits for
// the masked positions. Throws UsageError on an empty position list.
Tensor decode_masked(const Tensor& enhanced_seq, std::span<const std::size_t> mask_positions,
                     const DecoderParams& dec);

// L_MLM = CE(targets, g_at(H_AT)) + CE(targets, g_it(H_IT)). An undefined
// branch input drops that term.
Tensor mlm_loss(const Tensor& h_at, const Tensor& h_it, std::span<const std::size_t> mask_positions,
                std::span<const std::size_t> target_ids, const DecoderParams& dec_at,
                const DecoderParams& dec_it);

}  // namespace mmttt
