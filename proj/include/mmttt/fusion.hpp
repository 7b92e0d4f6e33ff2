#pragma once

#include <span>
#include <string>
#include <vector>

#include "mmttt/attention.hpp"
#include "mmttt/encoder.hpp"

namespace mmttt {

inline constexpr std::size_t kFusionSlots = 5;

// Classifier partition, part one: input maps for the evidence vectors that do
// not come out of the encoder, and one self-attention layer over the 5 slots.
struct FusionParams {
  Linear motion_proj;     // d_v → d_model
  Linear comment_proj;    // d_t → d_model
  Linear publisher_proj;  // d_t → d_model
  TransformerUnitParams layer;

  static FusionParams init(const ModelDims& dims, const ModelConfig& cfg, Rng& rng);
  void collect(std::vector<NamedTensor>& out) const;
};

// Classifier partition, part two: d_model → 2 logits (real, fake).
struct ClassifierParams {
  Linear head;

  static ClassifierParams init(const ModelConfig& cfg, Rng& rng);
  void collect(std::vector<NamedTensor>& out) const;
};

// Mean over valid rows, 1×d.
Tensor pool_sequence(const Tensor& seq, std::span<const bool> valid = {});

struct FusionInputs {
  Tensor audio_text;   // x_AT, 1×d_model
  Tensor visual_text;  // x_IT, 1×d_model
  Tensor motion;       // x_V, 1×d_v
  Tensor comments;     // x_C, 1×d_t
  Tensor publisher;    // x_P, 1×d_t
};

// Applies the fusion self-attention layer to an already projected 5×d
// sequence and mean-pools it.
Tensor fuse_sequence(const Tensor& slots, const FusionParams& params);
// Projects, stacks [x_AT, x_IT, x_V, x_C, x_P] and fuses them into 1×d.
Tensor fuse(const FusionInputs& inputs, const FusionParams& params);

// Softmax over the two logits; 1×2 probabilities (real, fake).
Tensor class_probabilities(const Tensor& fused, const ClassifierParams& params);
// Fake-class probability as a 1×1 tensor.
Tensor classify(const Tensor& fused, const ClassifierParams& params);

// Binary cross-entropy on the fake probability.
Tensor fnd_loss(const Tensor& p_fake, int label);

}  // namespace mmttt
