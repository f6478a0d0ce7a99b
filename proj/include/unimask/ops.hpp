#pragma once

// Differentiable tensor operations. Every op records a backward closure when
// gradient recording is on and an input requires a gradient; otherwise it is
// a plain computation. Float and double instantiations are provided.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

#include "unimask/tensor.hpp"

namespace unimask {

using TokenId = std::int32_t;

// Matrix product. Rank-2 x rank-2, rank-3 x rank-3 (matching batch), and
// rank-3 x rank-2 / rank-2 x rank-3 (the rank-2 side is shared by every batch
// entry). With transpose_b the last two axes of b are swapped first.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b,
                 bool transpose_b = false);

// Elementwise sum. b may also be a trailing suffix of a's shape (a bias row),
// in which case it is broadcast over the leading axes.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

// Exact (erf) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

// Normalizes over the last axis, then applies gain and bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps = T(1e-12));

// Row softmax of x + additive_mask, where mask entries are 0 or -inf.
// x is [R, C] with a [R, C] mask, or [N, R, C] with a [M, R, C] mask where
// M divides N and batch entry n uses mask n / (N / M) (per-head broadcast).
// A row with no finite entry throws ContractViolation.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, const Tensor<T>& additive_mask);

// Rows of a [V, d] table selected by ids -> [n, d].
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const TokenId> ids);

// Rows of a rank-2 tensor -> [rows.size(), d].
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows);

// [m, d] ++ [k, d] -> [m + k, d].
template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b);

// [batch * L, heads * D] -> [batch * heads, L, D].
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t batch,
                      std::size_t heads);

// [batch * heads, L, D] -> [batch * L, heads * D].
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x, std::size_t batch);

// Inverted dropout. rate == 0 returns x itself.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, std::mt19937_64& rng);

// Mean over rows of -sum_i q_i log softmax(logits)_i, where q puts
// 1 - smoothing on the label and smoothing / (V - 1) on every other token.
template <typename T>
Tensor<T> cross_entropy_smoothed(const Tensor<T>& logits,
                                 std::span<const TokenId> labels,
                                 double smoothing);

// {true -> 0, false -> -inf} additive mask with the given shape.
template <typename T>
Tensor<T> additive_mask(std::span<const std::uint8_t> allowed, Shape shape);

}  // namespace unimask
