#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace unimask::detail {

// Register tile: kRows rows of C by kCols columns, accumulated over all of k.
template <typename T>
struct GemmTile {
  static constexpr std::size_t kRows = 8;
  static constexpr std::size_t kCols = 64 / sizeof(T) * 2;
};

template <typename T>
using GemmVec [[gnu::vector_size(64)]] = T;

template <typename T, std::size_t R, std::size_t C>
inline void gemm_tile(std::size_t k, std::size_t n, const T* __restrict a,
                      std::size_t lda, const T* __restrict b,
                      T* __restrict c) {
  using V = GemmVec<T>;
  constexpr std::size_t W = sizeof(V) / sizeof(T);
  constexpr std::size_t NV = C / W;
  V acc[R][NV];
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t v = 0; v < NV; ++v)
      __builtin_memcpy(&acc[r][v], c + r * n + v * W, sizeof(V));
  for (std::size_t p = 0; p < k; ++p) {
    V bv[NV];
    for (std::size_t v = 0; v < NV; ++v)
      __builtin_memcpy(&bv[v], b + p * n + v * W, sizeof(V));
    for (std::size_t r = 0; r < R; ++r) {
      const T av = a[r * lda + p];
      for (std::size_t v = 0; v < NV; ++v) acc[r][v] += av * bv[v];
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t v = 0; v < NV; ++v)
      __builtin_memcpy(c + r * n + v * W, &acc[r][v], sizeof(V));
}

// Ragged edge of a tile; same per-element summation order.
template <typename T>
inline void gemm_edge(std::size_t rows, std::size_t cols, std::size_t k,
                      std::size_t n, const T* a, std::size_t lda, const T* b,
                      T* c) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* __restrict crow = c + r * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[r * lda + p];
      const T* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < cols; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M,N] (+)= op(A) * op(B). A is [M,K] ([K,M] when trans_a), B is [K,N]
// ([N,K] when trans_b). Each output element accumulates over k in increasing
// order regardless of M and N, so a row's result does not depend on how
// many other rows are computed alongside it.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  if (m == 0 || n == 0 || k == 0) return;
  std::vector<T> at, bt;
  if (trans_b) {
    bt.resize(k * n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    b = bt.data();
  }
  if (trans_a) {
    at.resize(m * k);
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t i = 0; i < m; ++i) at[i * k + p] = a[p * m + i];
    a = at.data();
  }
  constexpr std::size_t R = GemmTile<T>::kRows, C = GemmTile<T>::kCols;
  const std::size_t m_full = m - m % R, n_full = n - n % C;
  for (std::size_t j0 = 0; j0 < n_full; j0 += C) {
    for (std::size_t i0 = 0; i0 < m_full; i0 += R)
      gemm_tile<T, R, C>(k, n, a + i0 * k, k, b + j0, c + i0 * n + j0);
    if (m_full < m)
      gemm_edge(m - m_full, C, k, n, a + m_full * k, k, b + j0,
                c + m_full * n + j0);
  }
  if (n_full < n)
    gemm_edge(m, n - n_full, k, n, a, k, b + n_full, c + n_full);
}

}  // namespace unimask::detail
