#include "unimask/model.hpp"

#include <cmath>
#include <string>

#include "unimask/errors.hpp"

namespace unimask {

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError(what); };
  if (vocab_size < 7) fail("vocab_size must cover the 7 special tokens");
  if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0)
    fail("d_model, n_layers, n_heads and d_ff must be positive");
  if (d_model % n_heads != 0) {
    fail("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
         std::to_string(n_heads));
  }
  if (max_positions == 0) fail("max_positions must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
}

SequenceBatch SequenceBatch::single(std::span<const TokenId> token_ids,
                                    std::span<const std::int32_t> position_ids,
                                    std::span<const std::int32_t> segment_ids,
                                    const BoolMatrix& mask) {
  const std::size_t len = token_ids.size();
  if (position_ids.size() != len || segment_ids.size() != len ||
      mask.rows() != len || mask.cols() != len) {
    throw ShapeError("forward: ids and mask disagree on length " +
                     std::to_string(len));
  }
  SequenceBatch b;
  b.batch = 1;
  b.length = len;
  b.token_ids.assign(token_ids.begin(), token_ids.end());
  b.position_ids.assign(position_ids.begin(), position_ids.end());
  b.segment_ids.assign(segment_ids.begin(), segment_ids.end());
  b.attention.assign(mask.cells().begin(), mask.cells().end());
  return b;
}

namespace {

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add(matmul(x, w), b);
}

// Multi-head attention over already projected q [B*Lq, d], k/v [B*Lk, d].
// mask is additive [B, Lq, Lk].
template <typename T>
Tensor<T> attend(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                 const Tensor<T>& mask, std::size_t batch, std::size_t heads,
                 double rate, std::mt19937_64* rng) {
  const std::size_t head_dim = q.dim(1) / heads;
  Tensor<T> qh = split_heads(q, batch, heads);
  Tensor<T> kh = split_heads(k, batch, heads);
  Tensor<T> vh = split_heads(v, batch, heads);
  Tensor<T> scores =
      scale(matmul(qh, kh, true), T(1) / std::sqrt(T(head_dim)));
  Tensor<T> probs = softmax_rows(scores, mask);
  if (rng && rate > 0) probs = dropout(probs, rate, *rng);
  return merge_heads(matmul(probs, vh), batch);
}

// Residual, attention sublayer output and FFN on x; keys/values given.
template <typename T>
Tensor<T> block(const TransformerLayer<T>& p, const Tensor<T>& x,
                const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                const Tensor<T>& mask, std::size_t batch, std::size_t heads,
                double rate, std::mt19937_64* rng) {
  auto drop = [&](const Tensor<T>& t) {
    return (rng && rate > 0) ? dropout(t, rate, *rng) : t;
  };
  Tensor<T> a = attend(q, k, v, mask, batch, heads, rate, rng);
  a = drop(linear(a, p.out_weight, p.out_bias));
  Tensor<T> h = layer_norm(add(x, a), p.attn_ln_gain, p.attn_ln_bias);
  Tensor<T> f = gelu(linear(h, p.ffn_in_weight, p.ffn_in_bias));
  f = drop(linear(f, p.ffn_out_weight, p.ffn_out_bias));
  return layer_norm(add(h, f), p.ffn_ln_gain, p.ffn_ln_bias);
}

void check_rows(std::span<const std::uint8_t> cells, std::size_t rows,
                std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    bool any = false;
    for (std::size_t c = 0; c < cols && !any; ++c) any = cells[r * cols + c];
    if (!any) {
      throw ContractViolation("attention mask row " + std::to_string(r) +
                              " attends nothing");
    }
  }
}

}  // namespace

template <typename T>
void UnifiedTransformer<T>::check_positions(
    std::span<const std::int32_t> position_ids) const {
  for (std::int32_t p : position_ids) {
    if (p < 0 || static_cast<std::size_t>(p) >= config_.max_positions) {
      throw LengthError("position id " + std::to_string(p) +
                        " outside max_positions " +
                        std::to_string(config_.max_positions));
    }
  }
}

template <typename T>
Tensor<T> UnifiedTransformer<T>::embed(
    std::span<const TokenId> token_ids,
    std::span<const std::int32_t> position_ids,
    std::span<const std::int32_t> segment_ids) const {
  check_positions(position_ids);
  Tensor<T> x = add(embedding(token_embedding_, token_ids),
                    embedding(position_embedding_,
                              std::span<const TokenId>(position_ids)));
  if (config_.use_segment_embeddings) {
    x = add(x, embedding(segment_embedding_,
                         std::span<const TokenId>(segment_ids)));
  }
  return layer_norm(x, embed_ln_gain_, embed_ln_bias_);
}

template <typename T>
Tensor<T> UnifiedTransformer<T>::hidden_states(const SequenceBatch& batch,
                                               std::mt19937_64* rng) const {
  const std::size_t b = batch.batch, len = batch.length;
  const std::size_t rows = b * len;
  if (batch.token_ids.size() != rows || batch.position_ids.size() != rows ||
      batch.segment_ids.size() != rows ||
      batch.attention.size() != b * len * len) {
    throw ShapeError("hidden_states: batch fields disagree with " +
                     std::to_string(b) + " x " + std::to_string(len));
  }
  if (len > config_.max_positions) {
    throw LengthError("sequence length " + std::to_string(len) +
                      " exceeds max_positions " +
                      std::to_string(config_.max_positions));
  }
  check_rows(batch.attention, rows, len);
  const double rate = config_.dropout;

  Tensor<T> x = embed(batch.token_ids, batch.position_ids, batch.segment_ids);
  if (rng && rate > 0) x = dropout(x, rate, *rng);
  Tensor<T> mask = additive_mask<T>(batch.attention, {b, len, len});
  for (const auto& p : layers_) {
    Tensor<T> q = linear(x, p.q_weight, p.q_bias);
    Tensor<T> k = linear(x, p.k_weight, p.k_bias);
    Tensor<T> v = linear(x, p.v_weight, p.v_bias);
    x = block(p, x, q, k, v, mask, b, config_.n_heads, rate, rng);
  }
  return x;
}

template <typename T>
Tensor<T> UnifiedTransformer<T>::lm_head(const Tensor<T>& hidden) const {
  Tensor<T> t = gelu(linear(hidden, head_weight_, head_bias_));
  t = layer_norm(t, head_ln_gain_, head_ln_bias_);
  return add(matmul(t, output_weight_, true), output_bias_);
}

template <typename T>
Tensor<T> UnifiedTransformer<T>::forward(
    std::span<const TokenId> token_ids,
    std::span<const std::int32_t> position_ids,
    std::span<const std::int32_t> segment_ids,
    const BoolMatrix& attention_mask) const {
  SequenceBatch b =
      SequenceBatch::single(token_ids, position_ids, segment_ids, attention_mask);
  return lm_head(hidden_states(b));
}

template <typename T>
Tensor<T> UnifiedTransformer<T>::forward(const PackedBatch& packed) const {
  return forward(packed.token_ids, packed.position_ids, packed.segment_ids,
                 packed.attention_mask);
}

template <typename T>
DecodeCache<T> UnifiedTransformer<T>::empty_cache() const {
  DecodeCache<T> cache;
  cache.keys.resize(layers_.size());
  cache.values.resize(layers_.size());
  return cache;
}

template <typename T>
Tensor<T> UnifiedTransformer<T>::forward_incremental(
    DecodeCache<T>& cache, std::span<const TokenId> token_ids,
    std::span<const std::int32_t> position_ids,
    std::span<const std::int32_t> segment_ids, const BoolMatrix& attention_rows,
    std::span<const std::uint8_t> cache_this) const {
  NoGradGuard no_grad;
  const std::size_t k = token_ids.size();
  const std::size_t c = cache.length;
  if (position_ids.size() != k || segment_ids.size() != k ||
      cache_this.size() != k) {
    throw ShapeError("forward_incremental: " + std::to_string(k) +
                     " tokens but mismatched id/flag lengths");
  }
  if (attention_rows.rows() != k || attention_rows.cols() != c + k) {
    throw ShapeError("forward_incremental: attention rows must be " +
                     std::to_string(k) + " x " + std::to_string(c + k));
  }
  if (cache.keys.size() != layers_.size()) {
    throw StateError("decode cache does not match the model's layer count");
  }
  if (k == 0) return Tensor<T>(Shape{0, config_.vocab_size});
  check_rows(attention_rows.cells(), k, c + k);

  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < k; ++i)
    if (cache_this[i]) keep.push_back(i);

  Tensor<T> x = embed(token_ids, position_ids, segment_ids);
  Tensor<T> mask = additive_mask<T>(attention_rows.cells(), {1, k, c + k});
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& p = layers_[l];
    Tensor<T> q = linear(x, p.q_weight, p.q_bias);
    Tensor<T> kn = linear(x, p.k_weight, p.k_bias);
    Tensor<T> vn = linear(x, p.v_weight, p.v_bias);
    Tensor<T> keys = c ? concat_rows(cache.keys[l], kn) : kn;
    Tensor<T> values = c ? concat_rows(cache.values[l], vn) : vn;
    x = block(p, x, q, keys, values, mask, 1, config_.n_heads, 0.0, nullptr);
    if (!keep.empty()) {
      Tensor<T> kk = gather_rows(kn, keep), vk = gather_rows(vn, keep);
      cache.keys[l] = c ? concat_rows(cache.keys[l], kk) : kk;
      cache.values[l] = c ? concat_rows(cache.values[l], vk) : vk;
    }
  }
  cache.length += keep.size();
  return lm_head(x);
}

template <typename T>
std::vector<NamedTensor<T>> UnifiedTransformer<T>::named_parameters() const {
  std::vector<NamedTensor<T>> out;
  auto put = [&](std::string name, const Tensor<T>& t, bool decay) {
    out.push_back({std::move(name), t, decay});
  };
  put("embeddings.token", token_embedding_, true);
  put("embeddings.position", position_embedding_, true);
  if (config_.use_segment_embeddings)
    put("embeddings.segment", segment_embedding_, true);
  put("embeddings.ln.gain", embed_ln_gain_, false);
  put("embeddings.ln.bias", embed_ln_bias_, false);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& p = layers_[i];
    const std::string pre = "layers." + std::to_string(i) + ".";
    put(pre + "attn.q.weight", p.q_weight, true);
    put(pre + "attn.q.bias", p.q_bias, false);
    put(pre + "attn.k.weight", p.k_weight, true);
    put(pre + "attn.k.bias", p.k_bias, false);
    put(pre + "attn.v.weight", p.v_weight, true);
    put(pre + "attn.v.bias", p.v_bias, false);
    put(pre + "attn.out.weight", p.out_weight, true);
    put(pre + "attn.out.bias", p.out_bias, false);
    put(pre + "attn.ln.gain", p.attn_ln_gain, false);
    put(pre + "attn.ln.bias", p.attn_ln_bias, false);
    put(pre + "ffn.in.weight", p.ffn_in_weight, true);
    put(pre + "ffn.in.bias", p.ffn_in_bias, false);
    put(pre + "ffn.out.weight", p.ffn_out_weight, true);
    put(pre + "ffn.out.bias", p.ffn_out_bias, false);
    put(pre + "ffn.ln.gain", p.ffn_ln_gain, false);
    put(pre + "ffn.ln.bias", p.ffn_ln_bias, false);
  }
  put("head.transform.weight", head_weight_, true);
  put("head.transform.bias", head_bias_, false);
  put("head.ln.gain", head_ln_gain_, false);
  put("head.ln.bias", head_ln_bias_, false);
  if (!config_.tie_lm_head) put("head.output.weight", output_weight_, true);
  put("head.output.bias", output_bias_, false);
  return out;
}

template <typename T>
std::size_t UnifiedTransformer<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : named_parameters()) n += p.tensor.numel();
  return n;
}

template <typename T>
UnifiedTransformer<T> init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  // A standard normal cut at +-2 has std 0.8796; scale so the result is 0.02.
  const double sigma = 0.02 / 0.87962566103423978;
  std::normal_distribution<double> normal(0.0, 1.0);
  auto weight = [&](Shape shape) {
    Tensor<T> t(std::move(shape), true);
    for (T& v : t.data()) {
      double z;
      do {
        z = normal(rng);
      } while (std::abs(z) > 2.0);
      v = static_cast<T>(z * sigma);
    }
    return t;
  };
  auto zeros = [](std::size_t n) { return Tensor<T>({n}, true); };
  auto ones = [](std::size_t n) {
    return Tensor<T>({n}, std::vector<T>(n, T(1)), true);
  };

  const std::size_t d = config.d_model, ff = config.d_ff, v = config.vocab_size;
  UnifiedTransformer<T> m;
  m.config_ = config;
  m.token_embedding_ = weight({v, d});
  m.position_embedding_ = weight({config.max_positions, d});
  if (config.use_segment_embeddings) m.segment_embedding_ = weight({2, d});
  m.embed_ln_gain_ = ones(d);
  m.embed_ln_bias_ = zeros(d);
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    TransformerLayer<T> p;
    p.q_weight = weight({d, d});
    p.q_bias = zeros(d);
    p.k_weight = weight({d, d});
    p.k_bias = zeros(d);
    p.v_weight = weight({d, d});
    p.v_bias = zeros(d);
    p.out_weight = weight({d, d});
    p.out_bias = zeros(d);
    p.attn_ln_gain = ones(d);
    p.attn_ln_bias = zeros(d);
    p.ffn_in_weight = weight({d, ff});
    p.ffn_in_bias = zeros(ff);
    p.ffn_out_weight = weight({ff, d});
    p.ffn_out_bias = zeros(d);
    p.ffn_ln_gain = ones(d);
    p.ffn_ln_bias = zeros(d);
    m.layers_.push_back(std::move(p));
  }
  m.head_weight_ = weight({d, d});
  m.head_bias_ = zeros(d);
  m.head_ln_gain_ = ones(d);
  m.head_ln_bias_ = zeros(d);
  m.output_weight_ = config.tie_lm_head ? m.token_embedding_ : weight({v, d});
  m.output_bias_ = zeros(v);
  return m;
}

template class UnifiedTransformer<float>;
template class UnifiedTransformer<double>;
template UnifiedTransformer<float> init_model(const ModelConfig&, std::uint64_t);
template UnifiedTransformer<double> init_model(const ModelConfig&,
                                               std::uint64_t);

}  // namespace unimask
