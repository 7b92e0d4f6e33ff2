#include <gtest/gtest.h>

#include <numeric>

#include "mmttt/masking.hpp"
#include "mmttt/ops.hpp"
#include "test_util.hpp"

using namespace mmttt;
using mmttt::testing::random_tensor;

namespace {

std::vector<std::int64_t> ids(std::size_t l) {
  std::vector<std::int64_t> v(l);
  std::iota(v.begin(), v.end(), 100);
  return v;
}

}  // namespace

TEST(MaskCount, RoundingRule) {
  EXPECT_EQ(mask_count(0.15, 20), 3u);
  EXPECT_EQ(mask_count(0.15, 32), 5u);
  EXPECT_EQ(mask_count(0.15, 2), 1u);
  EXPECT_EQ(mask_count(0.0, 10), 0u);
  EXPECT_EQ(mask_count(1.0, 7), 7u);
}

TEST(ApplyMask, TwentyTokensGetThreeMasks) {
  Rng rng(30);
  auto x = random_tensor({20, 4}, rng);
  auto emb = random_tensor({1, 4}, rng);
  auto tok = ids(20);
  auto m = apply_mask(x, tok, 0.15, emb, rng);
  ASSERT_EQ(m.mask_positions.size(), 3u);
  EXPECT_TRUE(std::is_sorted(m.mask_positions.begin(), m.mask_positions.end()));
  EXPECT_EQ(std::adjacent_find(m.mask_positions.begin(), m.mask_positions.end()), m.mask_positions.end());
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(m.target_ids[i], static_cast<std::size_t>(tok[m.mask_positions[i]]));
  for (std::size_t r = 0; r < 20; ++r) {
    const bool masked = std::binary_search(m.mask_positions.begin(), m.mask_positions.end(), r);
    for (std::size_t c = 0; c < 4; ++c)
      EXPECT_EQ(m.masked_text_feat.at(r, c), masked ? emb.at(0, c) : x.at(r, c));
  }
  EXPECT_EQ(m.ratio_used, 0.15);
}

TEST(ApplyMask, ZeroAndFullRatio) {
  Rng rng(31);
  auto x = random_tensor({6, 3}, rng);
  auto emb = random_tensor({1, 3}, rng);
  auto none = apply_mask(x, ids(6), 0.0, emb, rng);
  EXPECT_TRUE(none.mask_positions.empty());
  EXPECT_TRUE(std::equal(x.values().begin(), x.values().end(), none.masked_text_feat.values().begin()));

  auto all = apply_mask(x, ids(6), 1.0, emb, rng);
  EXPECT_EQ(all.mask_positions.size(), 6u);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(all.masked_text_feat.at(r, c), emb.at(0, c));
}

TEST(ApplyMask, DeterministicGivenSeed) {
  Rng data(32);
  auto x = random_tensor({12, 3}, data);
  auto emb = random_tensor({1, 3}, data);
  Rng a(7), b(7);
  EXPECT_EQ(apply_mask(x, ids(12), 0.3, emb, a).mask_positions, apply_mask(x, ids(12), 0.3, emb, b).mask_positions);
}

TEST(ApplyMask, PaddingIsNeverMasked) {
  Rng rng(33);
  auto x = random_tensor({8, 2}, rng);
  auto emb = random_tensor({1, 2}, rng);
  const bool valid[] = {true, true, true, false, true, false, false, true};
  for (int i = 0; i < 200; ++i) {
    auto m = apply_mask(x, ids(8), 0.5, emb, rng, valid);
    EXPECT_EQ(m.mask_positions.size(), 3u);  // round(0.5 · 5 valid) = 3 (half away from zero)
    for (auto p : m.mask_positions) EXPECT_TRUE(valid[p]);
  }
}

TEST(ApplyMask, GradientFlowsToMaskEmbeddingAndUnmaskedRows) {
  Rng rng(34);
  auto x = random_tensor({5, 2}, rng, -1, 1, true);
  auto emb = random_tensor({1, 2}, rng, -1, 1, true);
  auto m = apply_mask(x, ids(5), 0.4, emb, rng);
  backward(sum(m.masked_text_feat));
  for (std::size_t r = 0; r < 5; ++r) {
    const bool masked = std::binary_search(m.mask_positions.begin(), m.mask_positions.end(), r);
    EXPECT_EQ(x.grad()[r * 2], masked ? 0.0 : 1.0);
  }
  EXPECT_EQ(emb.grad()[0], static_cast<double>(m.mask_positions.size()));
}
