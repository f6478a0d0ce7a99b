#include "unimask/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <utility>

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>

#include "gemm.hpp"
#include "unimask/errors.hpp"

namespace unimask {

namespace {

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
using BackwardFn = std::function<void(detail::Node<T>&)>;

// Wraps freshly computed values in a tensor, wiring it into the graph when
// recording is on and some input needs a gradient.
template <typename T>
Tensor<T> make_output(Shape shape, std::vector<T> values,
                      std::initializer_list<const Tensor<T>*> inputs,
                      BackwardFn<T> backward) {
  Tensor<T> out(std::move(shape), std::move(values));
  if (!grad_enabled()) return out;
  auto& node = *out.node();
  for (const Tensor<T>* input : inputs) {
    if (input->requires_grad()) node.parents.push_back(input->node());
  }
  if (!node.parents.empty()) {
    node.requires_grad = true;
    node.backward = std::move(backward);
  }
  return out;
}

// Applies an Eigen array expression chunk by chunk through a fixed-size
// aligned buffer. Every element takes the same packet path, so results do not
// depend on the alignment or length of the surrounding buffer.
template <typename T, typename F>
void map_chunked(std::size_t n, const T* in, T* out, F f) {
  constexpr int kChunk = 16;
  using Chunk = Eigen::Array<T, kChunk, 1>;
  Chunk buf;
  for (std::size_t i = 0; i < n; i += kChunk) {
    const std::size_t len = std::min<std::size_t>(kChunk, n - i);
    buf.setZero();
    std::copy_n(in + i, len, buf.data());
    Chunk res = f(buf);
    std::copy_n(res.data(), len, out + i);
  }
}

std::string shapes_message(const char* op, const Shape& a, const Shape& b) {
  return std::string(op) + ": incompatible shapes " + shape_to_string(a) +
         " and " + shape_to_string(b);
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  const std::size_t ra = a.rank();
  const std::size_t rb = b.rank();
  if (ra < 2 || ra > 3 || rb < 2 || rb > 3) {
    throw ShapeError(shapes_message("matmul", a.shape(), b.shape()));
  }
  const std::size_t m = a.dim(ra - 2);
  const std::size_t k = a.dim(ra - 1);
  const std::size_t bk = transpose_b ? b.dim(rb - 1) : b.dim(rb - 2);
  const std::size_t n = transpose_b ? b.dim(rb - 2) : b.dim(rb - 1);
  if (bk != k || (ra == 3 && rb == 3 && a.dim(0) != b.dim(0))) {
    throw ShapeError(shapes_message("matmul", a.shape(), b.shape()));
  }
  std::size_t batch = 1;
  if (ra == 3) batch = a.dim(0);
  if (rb == 3) batch = b.dim(0);
  const std::size_t a_stride = ra == 3 ? m * k : 0;
  const std::size_t b_stride = rb == 3 ? k * n : 0;

  std::vector<T> out(batch * m * n);
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  if (ra == 3 && rb == 2) {
    detail::gemm(false, transpose_b, batch * m, n, k, ad, bd, out.data(),
                 false);
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      detail::gemm(false, transpose_b, m, n, k, ad + i * a_stride,
                   bd + i * b_stride, out.data() + i * m * n, false);
    }
  }
  Shape shape = (ra == 3 || rb == 3) ? Shape{batch, m, n} : Shape{m, n};

  NodePtr<T> an = a.node();
  NodePtr<T> bn = b.node();
  return make_output<T>(
      std::move(shape), std::move(out), {&a, &b},
      [an, bn, batch, m, n, k, a_stride, b_stride,
       transpose_b](detail::Node<T>& self) {
        const T* dc = self.grad.data();
        if (an->requires_grad) {
          T* da = an->grad_buffer().data();
          for (std::size_t i = 0; i < batch; ++i) {
            // dA = dC * op(B)^T
            detail::gemm(false, !transpose_b, m, k, n, dc + i * m * n,
                         bn->data.data() + i * b_stride, da + i * a_stride,
                         true);
          }
        }
        if (bn->requires_grad) {
          T* db = bn->grad_buffer().data();
          for (std::size_t i = 0; i < batch; ++i) {
            if (!transpose_b) {
              // dB = A^T * dC
              detail::gemm(true, false, k, n, m,
                           an->data.data() + i * a_stride, dc + i * m * n,
                           db + i * b_stride, true);
            } else {
              // dB = dC^T * A
              detail::gemm(true, false, n, k, m, dc + i * m * n,
                           an->data.data() + i * a_stride, db + i * b_stride,
                           true);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  bool suffix = bs.size() <= as.size() &&
                std::equal(bs.rbegin(), bs.rend(), as.rbegin());
  if (!suffix || b.numel() == 0) {
    throw ShapeError(shapes_message("add", as, bs));
  }
  const std::size_t inner = b.numel();
  std::vector<T> out(a.data().begin(), a.data().end());
  const T* bd = b.data().data();
  for (std::size_t base = 0; base < out.size(); base += inner) {
    T* __restrict o = out.data() + base;
    for (std::size_t j = 0; j < inner; ++j) o[j] += bd[j];
  }

  NodePtr<T> an = a.node();
  NodePtr<T> bn = b.node();
  return make_output<T>(Shape(as), std::move(out), {&a, &b},
                        [an, bn, inner](detail::Node<T>& self) {
                          const auto& g = self.grad;
                          if (an->requires_grad) {
                            auto& ga = an->grad_buffer();
                            for (std::size_t i = 0; i < g.size(); ++i)
                              ga[i] += g[i];
                          }
                          if (bn->requires_grad) {
                            T* __restrict gb = bn->grad_buffer().data();
                            for (std::size_t base = 0; base < g.size();
                                 base += inner) {
                              const T* gi = g.data() + base;
                              for (std::size_t j = 0; j < inner; ++j)
                                gb[j] += gi[j];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(shapes_message("mul", a.shape(), b.shape()));
  }
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  NodePtr<T> an = a.node();
  NodePtr<T> bn = b.node();
  return make_output<T>(Shape(a.shape()), std::move(out), {&a, &b},
                        [an, bn](detail::Node<T>& self) {
                          const auto& g = self.grad;
                          if (an->requires_grad) {
                            auto& ga = an->grad_buffer();
                            for (std::size_t i = 0; i < g.size(); ++i)
                              ga[i] += g[i] * bn->data[i];
                          }
                          if (bn->requires_grad) {
                            auto& gb = bn->grad_buffer();
                            for (std::size_t i = 0; i < g.size(); ++i)
                              gb[i] += g[i] * an->data[i];
                          }
                        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (T& v : out) v *= factor;
  NodePtr<T> xn = x.node();
  return make_output<T>(Shape(x.shape()), std::move(out), {&x},
                        [xn, factor](detail::Node<T>& self) {
                          auto& gx = xn->grad_buffer();
                          for (std::size_t i = 0; i < gx.size(); ++i)
                            gx[i] += factor * self.grad[i];
                        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total(0);
  for (T v : x.data()) total += v;
  NodePtr<T> xn = x.node();
  return make_output<T>(Shape{}, std::vector<T>{total}, {&x},
                        [xn](detail::Node<T>& self) {
                          auto& gx = xn->grad_buffer();
                          for (T& g : gx) g += self.grad[0];
                        });
}

template <typename T>
constexpr T kInvSqrt2 = T(1) / std::numbers::sqrt2_v<T>;

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  map_chunked(x.numel(), x.data().data(), out.data(), [](const auto& v) {
    return (T(0.5) * v * (T(1) + (v * kInvSqrt2<T>).erf())).eval();
  });
  NodePtr<T> xn = x.node();
  return make_output<T>(
      Shape(x.shape()), std::move(out), {&x}, [xn](detail::Node<T>& self) {
        const std::size_t n = xn->data.size();
        std::vector<T> slope(n);
        map_chunked(n, xn->data.data(), slope.data(), [](const auto& v) {
          return (T(0.5) * (T(1) + (v * kInvSqrt2<T>).erf()) +
                  v * (std::numbers::inv_sqrtpi_v<T> * kInvSqrt2<T>) * (T(-0.5) * v * v).exp())
              .eval();
        });
        auto& gx = xn->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[i] * slope[i];
      });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps) {
  if (x.rank() == 0 || gain.numel() != x.shape().back() ||
      bias.numel() != x.shape().back()) {
    throw ShapeError("layer_norm: input " + shape_to_string(x.shape()) +
                     " with gain " + shape_to_string(gain.shape()) +
                     " and bias " + shape_to_string(bias.shape()));
  }
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> rstd(rows);
  const auto xs = x.data();
  const auto g = gain.data();
  const auto b = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xs.data() + r * d;
    T mean(0);
    for (std::size_t i = 0; i < d; ++i) mean += row[i];
    mean /= T(d);
    T var(0);
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mean) * (row[i] - mean);
    var /= T(d);
    const T inv = T(1) / std::sqrt(var + eps);
    rstd[r] = inv;
    for (std::size_t i = 0; i < d; ++i) {
      const T h = (row[i] - mean) * inv;
      xhat[r * d + i] = h;
      out[r * d + i] = h * g[i] + b[i];
    }
  }
  NodePtr<T> xn = x.node();
  NodePtr<T> gn = gain.node();
  NodePtr<T> bn = bias.node();
  return make_output<T>(
      Shape(x.shape()), std::move(out), {&x, &gain, &bias},
      [xn, gn, bn, xhat = std::move(xhat), rstd = std::move(rstd), d,
       rows](detail::Node<T>& self) {
        const auto& dy = self.grad;
        if (gn->requires_grad || bn->requires_grad) {
          auto& dg = gn->grad_buffer();
          auto& db = bn->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t i = 0; i < d; ++i) {
              dg[i] += dy[r * d + i] * xhat[r * d + i];
              db[i] += dy[r * d + i];
            }
          }
        }
        if (xn->requires_grad) {
          auto& dx = xn->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_dh(0);
            T mean_dh_h(0);
            for (std::size_t i = 0; i < d; ++i) {
              const T dh = dy[r * d + i] * gn->data[i];
              mean_dh += dh;
              mean_dh_h += dh * xhat[r * d + i];
            }
            mean_dh /= T(d);
            mean_dh_h /= T(d);
            for (std::size_t i = 0; i < d; ++i) {
              const T dh = dy[r * d + i] * gn->data[i];
              dx[r * d + i] +=
                  rstd[r] * (dh - mean_dh - xhat[r * d + i] * mean_dh_h);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, const Tensor<T>& additive_mask) {
  const std::size_t rx = x.rank();
  const std::size_t rm = additive_mask.rank();
  bool ok = (rx == 2 || rx == 3) && rm >= 2 && rm <= rx &&
            x.dim(rx - 1) == additive_mask.dim(rm - 1) &&
            x.dim(rx - 2) == additive_mask.dim(rm - 2);
  std::size_t batch = rx == 3 ? x.dim(0) : 1;
  std::size_t mask_batch = rm == 3 ? additive_mask.dim(0) : 1;
  ok = ok && mask_batch > 0 && batch % mask_batch == 0;
  if (!ok) {
    throw ShapeError(
        shapes_message("softmax_rows", x.shape(), additive_mask.shape()));
  }
  const std::size_t rows = x.dim(rx - 2);
  const std::size_t cols = x.dim(rx - 1);
  const std::size_t group = batch / mask_batch;
  const auto xs = x.data();
  const auto ms = additive_mask.data();
  std::vector<T> out(x.numel());
  for (std::size_t n = 0; n < batch; ++n) {
    const T* mask = ms.data() + (n / group) * rows * cols;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* in = xs.data() + (n * rows + r) * cols;
      const T* mrow = mask + r * cols;
      T* o = out.data() + (n * rows + r) * cols;
      // Non-finite scores propagate; only an all-masked row is an error.
      T max = -std::numeric_limits<T>::infinity();
      bool open = false;
      for (std::size_t c = 0; c < cols; ++c) {
        if (mrow[c] == -std::numeric_limits<T>::infinity()) continue;
        open = true;
        const T v = in[c] + mrow[c];
        if (!(v <= max)) max = v;
      }
      if (!open) {
        throw ContractViolation("softmax_rows: row " + std::to_string(r) +
                                " has no unmasked entry");
      }
      for (std::size_t c = 0; c < cols; ++c) o[c] = in[c] + mrow[c] - max;
    }
  }
  // One vectorized exp over everything; masked entries are then exactly 0.
  map_chunked(out.size(), out.data(), out.data(),
              [](const auto& v) { return v.exp().eval(); });
  for (std::size_t n = 0; n < batch; ++n) {
    const T* mask = ms.data() + (n / group) * rows * cols;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* mrow = mask + r * cols;
      T* o = out.data() + (n * rows + r) * cols;
      T total(0);
      for (std::size_t c = 0; c < cols; ++c) {
        if (mrow[c] == -std::numeric_limits<T>::infinity()) o[c] = T(0);
        total += o[c];
      }
      const T inv = T(1) / total;
      for (std::size_t c = 0; c < cols; ++c) o[c] *= inv;
    }
  }
  NodePtr<T> xn = x.node();
  return make_output<T>(
      Shape(x.shape()), std::move(out), {&x},
      [xn, cols](detail::Node<T>& self) {
        auto& dx = xn->grad_buffer();
        const auto& y = self.data;
        const auto& dy = self.grad;
        const std::size_t total_rows = y.size() / cols;
        for (std::size_t r = 0; r < total_rows; ++r) {
          const std::size_t base = r * cols;
          T dot(0);
          for (std::size_t c = 0; c < cols; ++c) dot += dy[base + c] * y[base + c];
          for (std::size_t c = 0; c < cols; ++c)
            dx[base + c] += y[base + c] * (dy[base + c] - dot);
        }
      });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const TokenId> ids) {
  if (table.rank() != 2) {
    throw ShapeError("embedding: table must be rank 2, got " +
                     shape_to_string(table.shape()));
  }
  const std::size_t vocab = table.dim(0);
  const std::size_t d = table.dim(1);
  std::vector<T> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw IndexError("embedding: id " + std::to_string(ids[i]) +
                       " outside table of " + std::to_string(vocab) + " rows");
    }
    std::copy_n(table.data().data() + ids[i] * d, d, out.data() + i * d);
  }
  NodePtr<T> tn = table.node();
  std::vector<TokenId> saved(ids.begin(), ids.end());
  return make_output<T>(Shape{ids.size(), d}, std::move(out), {&table},
                        [tn, saved = std::move(saved), d](detail::Node<T>& self) {
                          auto& g = tn->grad_buffer();
                          for (std::size_t i = 0; i < saved.size(); ++i) {
                            T* dst = g.data() + saved[i] * d;
                            const T* src = self.grad.data() + i * d;
                            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                          }
                        });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
  if (x.rank() != 2) {
    throw ShapeError("gather_rows: input must be rank 2, got " +
                     shape_to_string(x.shape()));
  }
  const std::size_t d = x.dim(1);
  std::vector<T> out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.dim(0)) {
      throw IndexError("gather_rows: row " + std::to_string(rows[i]) +
                       " outside " + std::to_string(x.dim(0)));
    }
    std::copy_n(x.data().data() + rows[i] * d, d, out.data() + i * d);
  }
  NodePtr<T> xn = x.node();
  std::vector<std::size_t> saved(rows.begin(), rows.end());
  return make_output<T>(Shape{rows.size(), d}, std::move(out), {&x},
                        [xn, saved = std::move(saved), d](detail::Node<T>& self) {
                          auto& g = xn->grad_buffer();
                          for (std::size_t i = 0; i < saved.size(); ++i) {
                            for (std::size_t j = 0; j < d; ++j)
                              g[saved[i] * d + j] += self.grad[i * d + j];
                          }
                        });
}

template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw ShapeError(shapes_message("concat_rows", a.shape(), b.shape()));
  }
  std::vector<T> out;
  out.reserve(a.numel() + b.numel());
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  NodePtr<T> an = a.node();
  NodePtr<T> bn = b.node();
  const std::size_t split = a.numel();
  return make_output<T>(Shape{a.dim(0) + b.dim(0), a.dim(1)}, std::move(out),
                        {&a, &b}, [an, bn, split](detail::Node<T>& self) {
                          if (an->requires_grad) {
                            auto& g = an->grad_buffer();
                            for (std::size_t i = 0; i < split; ++i)
                              g[i] += self.grad[i];
                          }
                          if (bn->requires_grad) {
                            auto& g = bn->grad_buffer();
                            for (std::size_t i = 0; i < g.size(); ++i)
                              g[i] += self.grad[split + i];
                          }
                        });
}

namespace {

// Index of element (b, l, h, d) in the [B*L, H*D] layout, given its index in
// the [B*H, L, D] layout.
struct HeadLayout {
  std::size_t batch, heads, len, depth;
  // Calls fn(split_offset, merged_offset) for each contiguous depth run.
  template <typename Fn>
  void for_each_run(Fn&& fn) const {
    std::size_t split = 0;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t l = 0; l < len; ++l, split += depth)
          fn(split, (b * len + l) * heads * depth + h * depth);
  }
};

}  // namespace

template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t batch,
                      std::size_t heads) {
  if (x.rank() != 2 || batch == 0 || heads == 0 || x.dim(0) % batch != 0 ||
      x.dim(1) % heads != 0) {
    throw ShapeError("split_heads: cannot split " + shape_to_string(x.shape()) +
                     " into batch " + std::to_string(batch) + ", heads " +
                     std::to_string(heads));
  }
  HeadLayout layout{batch, heads, x.dim(0) / batch, x.dim(1) / heads};
  std::vector<T> out(x.numel());
  const T* xd = x.data().data();
  const std::size_t depth = layout.depth;
  layout.for_each_run([&](std::size_t s, std::size_t m) {
    std::copy(xd + m, xd + m + depth, out.data() + s);
  });
  NodePtr<T> xn = x.node();
  return make_output<T>(Shape{batch * heads, layout.len, layout.depth},
                        std::move(out), {&x},
                        [xn, layout](detail::Node<T>& self) {
                          T* g = xn->grad_buffer().data();
                          const T* sg = self.grad.data();
                          layout.for_each_run([&](std::size_t s, std::size_t m) {
                            for (std::size_t d = 0; d < layout.depth; ++d)
                              g[m + d] += sg[s + d];
                          });
                        });
}

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x, std::size_t batch) {
  if (x.rank() != 3 || batch == 0 || x.dim(0) % batch != 0) {
    throw ShapeError("merge_heads: cannot merge " + shape_to_string(x.shape()) +
                     " with batch " + std::to_string(batch));
  }
  HeadLayout layout{batch, x.dim(0) / batch, x.dim(1), x.dim(2)};
  std::vector<T> out(x.numel());
  const T* xd = x.data().data();
  const std::size_t depth = layout.depth;
  layout.for_each_run([&](std::size_t s, std::size_t m) {
    std::copy(xd + s, xd + s + depth, out.data() + m);
  });
  NodePtr<T> xn = x.node();
  return make_output<T>(
      Shape{batch * layout.len, layout.heads * layout.depth}, std::move(out),
      {&x}, [xn, layout](detail::Node<T>& self) {
        T* g = xn->grad_buffer().data();
        const T* sg = self.grad.data();
        layout.for_each_run([&](std::size_t s, std::size_t m) {
          for (std::size_t d = 0; d < layout.depth; ++d) g[s + d] += sg[m + d];
        });
      });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ArgumentError("dropout rate must be in [0, 1), got " +
                        std::to_string(rate));
  }
  if (rate == 0.0) return x;
  const T keep_scale = T(1.0 / (1.0 - rate));
  // One draw from the caller's generator seeds a splitmix64 counter stream.
  const std::uint64_t seed = rng();
  const auto threshold = static_cast<std::uint64_t>(std::ldexp(rate, 64));
  std::vector<T> keep(x.numel());
  std::vector<T> out(x.numel());
  const T* xd = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t z = seed + (i + 1) * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
    keep[i] = z >= threshold ? keep_scale : T(0);
    out[i] = xd[i] * keep[i];
  }
  NodePtr<T> xn = x.node();
  return make_output<T>(Shape(x.shape()), std::move(out), {&x},
                        [xn, keep = std::move(keep)](detail::Node<T>& self) {
                          auto& g = xn->grad_buffer();
                          for (std::size_t i = 0; i < g.size(); ++i)
                            g[i] += self.grad[i] * keep[i];
                        });
}

template <typename T>
Tensor<T> cross_entropy_smoothed(const Tensor<T>& logits,
                                 std::span<const TokenId> labels,
                                 double smoothing) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size() ||
      labels.empty()) {
    throw ShapeError("cross_entropy_smoothed: logits " +
                     shape_to_string(logits.shape()) + " with " +
                     std::to_string(labels.size()) + " labels");
  }
  if (smoothing < 0.0 || smoothing >= 1.0) {
    throw ArgumentError("label smoothing must be in [0, 1), got " +
                        std::to_string(smoothing));
  }
  const std::size_t rows = logits.dim(0);
  const std::size_t vocab = logits.dim(1);
  if (vocab < 2 && smoothing > 0.0) {
    throw ArgumentError("label smoothing needs at least two classes");
  }
  const T on = T(1.0 - smoothing);
  const T off = vocab > 1 ? T(smoothing / double(vocab - 1)) : T(0);
  std::vector<T> probs(logits.numel());
  T total_loss(0);
  const auto xs = logits.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const TokenId label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= vocab) {
      throw IndexError("cross_entropy_smoothed: label " +
                       std::to_string(label) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    const T* row = xs.data() + r * vocab;
    const T max = *std::max_element(row, row + vocab);
    T z(0);
    for (std::size_t c = 0; c < vocab; ++c) z += std::exp(row[c] - max);
    const T log_z = std::log(z) + max;
    T loss(0);
    for (std::size_t c = 0; c < vocab; ++c) {
      const T log_p = row[c] - log_z;
      probs[r * vocab + c] = std::exp(log_p);
      const T q = static_cast<std::size_t>(label) == c ? on : off;
      if (q != T(0)) loss -= q * log_p;
    }
    total_loss += loss;
  }
  total_loss /= T(rows);
  NodePtr<T> ln = logits.node();
  std::vector<TokenId> saved(labels.begin(), labels.end());
  return make_output<T>(
      Shape{}, std::vector<T>{total_loss}, {&logits},
      [ln, probs = std::move(probs), saved = std::move(saved), rows, vocab, on,
       off](detail::Node<T>& self) {
        auto& g = ln->grad_buffer();
        const T scale = self.grad[0] / T(rows);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < vocab; ++c) {
            const T q = static_cast<std::size_t>(saved[r]) == c ? on : off;
            g[r * vocab + c] += scale * (probs[r * vocab + c] - q);
          }
        }
      });
}

template <typename T>
Tensor<T> additive_mask(std::span<const std::uint8_t> allowed, Shape shape) {
  if (shape_numel(shape) != allowed.size()) {
    throw ShapeError("additive_mask: " + std::to_string(allowed.size()) +
                     " entries for shape " + shape_to_string(shape));
  }
  std::vector<T> values(allowed.size());
  for (std::size_t i = 0; i < allowed.size(); ++i) {
    values[i] = allowed[i] ? T(0) : -std::numeric_limits<T>::infinity();
  }
  return Tensor<T>(std::move(shape), std::move(values));
}

#define UNIMASK_INSTANTIATE_OPS(T)                                            \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&, bool);       \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> scale(const Tensor<T>&, T);                             \
  template Tensor<T> sum(const Tensor<T>&);                                  \
  template Tensor<T> gelu(const Tensor<T>&);                                 \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&,          \
                                const Tensor<T>&, T);                        \
  template Tensor<T> softmax_rows(const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const TokenId>);  \
  template Tensor<T> gather_rows(const Tensor<T>&,                           \
                                 std::span<const std::size_t>);              \
  template Tensor<T> concat_rows(const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> split_heads(const Tensor<T>&, std::size_t, std::size_t); \
  template Tensor<T> merge_heads(const Tensor<T>&, std::size_t);             \
  template Tensor<T> dropout(const Tensor<T>&, double, std::mt19937_64&);    \
  template Tensor<T> cross_entropy_smoothed(                                 \
      const Tensor<T>&, std::span<const TokenId>, double);                   \
  template Tensor<T> additive_mask(std::span<const std::uint8_t>, Shape);

UNIMASK_INSTANTIATE_OPS(float)
UNIMASK_INSTANTIATE_OPS(double)

#undef UNIMASK_INSTANTIATE_OPS

}  // namespace unimask
