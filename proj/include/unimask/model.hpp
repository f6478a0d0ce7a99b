#pragma once

// One bidirectional Transformer that encodes and decodes under a mask
// supplied by the caller. Post-LN blocks, exact GELU, BERT-style LM head.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "unimask/ops.hpp"
#include "unimask/packing.hpp"
#include "unimask/tensor.hpp"

namespace unimask {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t max_positions = 128;
  double dropout = 0.1;
  bool use_segment_embeddings = true;
  bool tie_lm_head = true;

  // Throws ConfigError.
  void validate() const;
  std::size_t head_dim() const { return d_model / n_heads; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// B sequences right-padded to a common length L. attention is B x L x L,
// row-major per sequence (query row, key column).
struct SequenceBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<TokenId> token_ids;
  std::vector<std::int32_t> position_ids;
  std::vector<std::int32_t> segment_ids;
  std::vector<std::uint8_t> attention;

  static SequenceBatch single(std::span<const TokenId> token_ids,
                              std::span<const std::int32_t> position_ids,
                              std::span<const std::int32_t> segment_ids,
                              const BoolMatrix& mask);
};

// Projected keys/values of finalized positions, one [length, d] tensor per
// layer. Owned by a single decoding session; copy it to fork a hypothesis.
template <typename T>
struct DecodeCache {
  std::vector<Tensor<T>> keys;
  std::vector<Tensor<T>> values;
  std::size_t length = 0;
  std::size_t source_length = 0;  // set once the source block is encoded
};

template <typename T>
struct TransformerLayer {
  Tensor<T> q_weight, q_bias, k_weight, k_bias, v_weight, v_bias;
  Tensor<T> out_weight, out_bias;
  Tensor<T> attn_ln_gain, attn_ln_bias;
  Tensor<T> ffn_in_weight, ffn_in_bias, ffn_out_weight, ffn_out_bias;
  Tensor<T> ffn_ln_gain, ffn_ln_bias;
};

template <typename T>
class UnifiedTransformer {
 public:
  UnifiedTransformer() = default;

  const ModelConfig& config() const { return config_; }

  // Fixed order; this is also the checkpoint order. With a tied head the
  // output weight is not listed separately.
  std::vector<NamedTensor<T>> named_parameters() const;
  std::size_t parameter_count() const;

  // Logits at every position, [L, V]. Dropout off.
  Tensor<T> forward(std::span<const TokenId> token_ids,
                    std::span<const std::int32_t> position_ids,
                    std::span<const std::int32_t> segment_ids,
                    const BoolMatrix& attention_mask) const;
  Tensor<T> forward(const PackedBatch& packed) const;

  // Final hidden states [B * L, d] for a padded batch. Dropout is applied
  // when dropout_rng is non-null and the configured rate is positive.
  Tensor<T> hidden_states(const SequenceBatch& batch,
                          std::mt19937_64* dropout_rng = nullptr) const;

  // LM head over hidden rows [n, d] -> [n, V].
  Tensor<T> lm_head(const Tensor<T>& hidden) const;

  // Runs the new tokens against the cache. attention_rows is k x (c + k)
  // where c = cache.length: columns 0..c-1 are cached positions and c.. are
  // the new tokens. Rows with cache_this set are appended to the cache
  // (in order) after the pass. Returns logits [k, V]. No gradients.
  Tensor<T> forward_incremental(DecodeCache<T>& cache,
                                std::span<const TokenId> token_ids,
                                std::span<const std::int32_t> position_ids,
                                std::span<const std::int32_t> segment_ids,
                                const BoolMatrix& attention_rows,
                                std::span<const std::uint8_t> cache_this) const;

  DecodeCache<T> empty_cache() const;

  // Parameter access for tests and serialization.
  Tensor<T>& token_embedding() { return token_embedding_; }
  const Tensor<T>& token_embedding() const { return token_embedding_; }
  const Tensor<T>& output_weight() const { return output_weight_; }
  const std::vector<TransformerLayer<T>>& layers() const { return layers_; }

  template <typename U>
  friend UnifiedTransformer<U> init_model(const ModelConfig& config,
                                          std::uint64_t seed);

 private:
  Tensor<T> embed(std::span<const TokenId> token_ids,
                  std::span<const std::int32_t> position_ids,
                  std::span<const std::int32_t> segment_ids) const;
  void check_positions(std::span<const std::int32_t> position_ids) const;

  ModelConfig config_;
  Tensor<T> token_embedding_;
  Tensor<T> position_embedding_;
  Tensor<T> segment_embedding_;
  Tensor<T> embed_ln_gain_, embed_ln_bias_;
  std::vector<TransformerLayer<T>> layers_;
  Tensor<T> head_weight_, head_bias_;
  Tensor<T> head_ln_gain_, head_ln_bias_;
  Tensor<T> output_weight_;  // [V, d]; the token embedding itself when tied
  Tensor<T> output_bias_;
};

// Weights from a normal truncated at two standard deviations and rescaled so
// the realized std is 0.02; gains 1, biases 0. Deterministic per seed.
template <typename T>
UnifiedTransformer<T> init_model(const ModelConfig& config, std::uint64_t seed);

extern template class UnifiedTransformer<float>;
extern template class UnifiedTransformer<double>;
extern template UnifiedTransformer<float> init_model(const ModelConfig&,
                                                     std::uint64_t);
extern template UnifiedTransformer<double> init_model(const ModelConfig&,
                                                      std::uint64_t);

}  // namespace unimask
