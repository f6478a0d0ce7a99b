#pragma once

// Fine-tuning objectives, learning-rate schedule and the training loop.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

#include "unimask/model.hpp"
#include "unimask/packing.hpp"

namespace unimask {

struct TrainParams {
  MaskKind method = MaskKind::kPseudoMasked;
  std::size_t batch_size = 64;
  double learning_rate = 1e-4;
  std::int64_t warmup_steps = 1000;
  std::int64_t total_steps = 0;
  double label_smoothing = 0.1;
  double mask_prob = 0.5;  // kMasked only
  double dropout = 0.1;    // overrides ModelConfig::dropout while training
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;

  // Throws ArgumentError.
  void validate() const;
};

// Linear warmup from 0 to 1 over [0, warmup], then linear decay to 0 at
// total. The k-th optimizer update (1-based) uses lr_multiplier(k, ...).
double lr_multiplier(std::int64_t step, std::int64_t warmup, std::int64_t total);

// Token ids of one training pair (no [CLS]/[SEP] framing).
struct EncodedExample {
  std::vector<TokenId> src;
  std::vector<TokenId> tgt;
};

// Packed examples right-padded with [PAD] to the longest one. Pad rows see
// only themselves; real rows never see pad columns.
struct PaddedBatch {
  SequenceBatch sequences;
  std::vector<std::size_t> prediction_rows;  // flat rows into B * L
  std::vector<TokenId> labels;
};

PaddedBatch pad_batch(std::span<const PackedBatch> examples,
                      const SpecialTokens& specials);

// Mean smoothed cross-entropy over every prediction position in the batch.
// Throws ContractViolation when there is none, ArgumentError when examples
// mix methods.
template <typename T>
Tensor<T> batch_loss(const UnifiedTransformer<T>& model,
                     std::span<const PackedBatch> examples,
                     const SpecialTokens& specials, double smoothing,
                     std::mt19937_64* dropout_rng = nullptr);

struct TrainRecord {
  std::int64_t step = 0;  // 1-based
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  UnifiedTransformer<float> model;
  std::vector<TrainRecord> log;
};

// Runs params.total_steps AdamW updates over seeded shuffles of the data.
// Masked packs are redrawn every time an example is visited. When `log` is
// given each step is written as "step loss lr". A non-finite loss throws
// NumericError naming the step and the batch within its epoch.
TrainResult train(std::span<const EncodedExample> data,
                  const ModelConfig& config, const TrainParams& params,
                  const SpecialTokens& specials, std::ostream* log = nullptr,
                  const std::function<void(const TrainRecord&)>& on_step = {});

extern template Tensor<float> batch_loss(const UnifiedTransformer<float>&,
                                         std::span<const PackedBatch>,
                                         const SpecialTokens&, double,
                                         std::mt19937_64*);
extern template Tensor<double> batch_loss(const UnifiedTransformer<double>&,
                                          std::span<const PackedBatch>,
                                          const SpecialTokens&, double,
                                          std::mt19937_64*);

}  // namespace unimask
