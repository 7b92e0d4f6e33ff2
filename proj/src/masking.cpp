#include "mmttt/masking.hpp"

#include <algorithm>
#include <cmath>

#include "mmttt/errors.hpp"
#include "mmttt/ops.hpp"

namespace mmttt {

std::size_t mask_count(double ratio, std::size_t length) {
  if (ratio <= 0.0 || length == 0) return 0;
  const auto rounded = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(length)));
  return std::clamp<std::size_t>(rounded, 1, length);
}

MaskedBatch apply_mask(const Tensor& text_feat, std::span<const std::int64_t> token_ids,
                       double ratio, const Tensor& mask_embedding, Rng& rng,
                       std::span<const bool> valid) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw UsageError("apply_mask: ratio must lie in [0, 1]");
  const std::size_t l = text_feat.rows();
  if (l == 0) throw UsageError("apply_mask: empty text");
  if (token_ids.size() != l) throw DimensionError("apply_mask: token_ids length does not match text rows");
  if (!valid.empty() && valid.size() != l) throw DimensionError("apply_mask: valid mask length does not match text rows");

  std::vector<std::size_t> candidates;
  for (std::size_t p = 0; p < l; ++p)
    if (valid.empty() || valid[p]) candidates.push_back(p);

  const std::size_t count = mask_count(ratio, candidates.size());
  // Partial Fisher-Yates: the first `count` slots become a uniform sample.
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, candidates.size() - 1);
    std::swap(candidates[i], candidates[pick(rng)]);
  }
  std::vector<std::size_t> positions(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(positions.begin(), positions.end());

  MaskedBatch batch;
  batch.ratio_used = ratio;
  batch.mask_positions = positions;
  for (auto p : positions) batch.target_ids.push_back(static_cast<std::size_t>(token_ids[p]));
  batch.masked_text_feat = positions.empty() ? text_feat : replace_rows(text_feat, positions, mask_embedding);
  return batch;
}

}  // namespace mmttt
