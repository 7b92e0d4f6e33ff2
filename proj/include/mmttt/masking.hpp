#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mmttt/layers.hpp"

namespace mmttt {

struct MaskedBatch {
  Tensor masked_text_feat;                 // l×d_model
  std::vector<std::size_t> mask_positions;  // strictly increasing
  std::vector<std::size_t> target_ids;      // original token ids at mask_positions
  double ratio_used = 0.0;
};

// Number of positions masked out of `length` candidates:
// max(1, round(ratio·length)) when ratio > 0, else 0.
std::size_t mask_count(double ratio, std::size_t length);

// Replaces a uniformly chosen subset of rows with the shared mask embedding.
// Only positions with valid[p] == true are candidates (all when empty).
MaskedBatch apply_mask(const Tensor& text_feat, std::span<const std::int64_t> token_ids,
                       double ratio, const Tensor& mask_embedding, Rng& rng,
                       std::span<const bool> valid = {});

}  // namespace mmttt
