#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mmttt/tensor.hpp"

namespace mmttt {

// Differentiable ops. Unless noted, inputs are rank-2 and row vectors are 1×n.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
// a[r×c] + bias[1×c] broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& bias);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);

// Softmax over the last axis of any-rank input, max-subtracted.
Tensor softmax(const Tensor& x);
// Row softmax where columns with key_valid[c] == false get exactly zero weight.
Tensor masked_softmax(const Tensor& x, std::span<const bool> key_valid);

// Row-wise layer normalization with gain/bias of shape 1×c.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);
Tensor concat_cols(std::span<const Tensor> parts);
// Stacks tensors with equal column counts vertically.
Tensor concat_rows(std::span<const Tensor> parts);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> indices);
// Copies `a` and overwrites rows at `indices` with the 1×c `row`. Gradient for
// those rows flows to `row`, for the others to `a`.
Tensor replace_rows(const Tensor& a, std::span<const std::size_t> indices, const Tensor& row);
// Mean over rows (optionally only rows with valid[r] == true), giving 1×c.
Tensor mean_rows(const Tensor& a, std::span<const bool> valid = {});

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Flat element as a 1×1 tensor.
Tensor element(const Tensor& a, std::size_t flat_index);

// Mean over rows of −log softmax(logits)[target]. logits is p×V.
Tensor cross_entropy_logits(const Tensor& logits, std::span<const std::size_t> targets);

inline constexpr double kBceEpsilon = 1e-7;
// −[y ln p + (1−y) ln(1−p)] with p clamped to [ε, 1−ε]. `p` is a 1×1 tensor.
Tensor binary_cross_entropy(const Tensor& p, int label);
double binary_cross_entropy(double p, int label);

}  // namespace mmttt
