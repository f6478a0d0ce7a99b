#include "unimask/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>

#include "unimask/adam.hpp"
#include "unimask/errors.hpp"

namespace unimask {

void TrainParams::validate() const {
  auto fail = [](const std::string& what) { throw ArgumentError(what); };
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(learning_rate > 0)) fail("learning_rate must be positive");
  if (warmup_steps < 0 || total_steps < 0) fail("step counts must be >= 0");
  if (total_steps > 0 && warmup_steps > total_steps)
    fail("warmup_steps " + std::to_string(warmup_steps) + " exceeds total_steps " +
         std::to_string(total_steps));
  if (!(label_smoothing >= 0 && label_smoothing < 1))
    fail("label_smoothing must be in [0, 1)");
  if (method == MaskKind::kMasked && !(mask_prob > 0 && mask_prob <= 1))
    fail("mask_prob must be in (0, 1]");
  if (!(dropout >= 0 && dropout < 1)) fail("dropout must be in [0, 1)");
  if (weight_decay < 0) fail("weight_decay must be >= 0");
}

double lr_multiplier(std::int64_t step, std::int64_t warmup, std::int64_t total) {
  if (total <= 0) throw ArgumentError("lr schedule needs total > 0");
  if (warmup < 0 || warmup > total)
    throw ArgumentError("lr schedule needs 0 <= warmup <= total");
  if (step < 0 || step > total) {
    throw ArgumentError("step " + std::to_string(step) + " outside [0, " +
                        std::to_string(total) + "]");
  }
  if (step <= warmup) {
    return warmup == 0 ? 1.0 : double(step) / double(warmup);
  }
  return double(total - step) / double(total - warmup);
}

PaddedBatch pad_batch(std::span<const PackedBatch> examples,
                      const SpecialTokens& specials) {
  if (examples.empty()) throw ContractViolation("empty batch");
  std::size_t len = 0;
  for (const auto& e : examples) {
    if (e.kind != examples.front().kind)
      throw ArgumentError("batch mixes fine-tuning methods");
    len = std::max(len, e.size());
  }
  PaddedBatch out;
  SequenceBatch& s = out.sequences;
  s.batch = examples.size();
  s.length = len;
  s.token_ids.assign(s.batch * len, specials.pad);
  s.position_ids.assign(s.batch * len, 0);
  s.segment_ids.assign(s.batch * len, 0);
  s.attention.assign(s.batch * len * len, 0);
  for (std::size_t b = 0; b < s.batch; ++b) {
    const PackedBatch& e = examples[b];
    const std::size_t base = b * len, n = e.size();
    std::copy(e.token_ids.begin(), e.token_ids.end(), s.token_ids.begin() + base);
    std::copy(e.position_ids.begin(), e.position_ids.end(),
              s.position_ids.begin() + base);
    std::copy(e.segment_ids.begin(), e.segment_ids.end(),
              s.segment_ids.begin() + base);
    std::uint8_t* cells = s.attention.data() + b * len * len;
    for (std::size_t r = 0; r < n; ++r) {
      auto row = e.attention_mask.row(r);
      std::copy(row.begin(), row.end(), cells + r * len);
    }
    for (std::size_t r = n; r < len; ++r) cells[r * len + r] = 1;
    for (std::size_t p : e.prediction_positions) out.prediction_rows.push_back(base + p);
    out.labels.insert(out.labels.end(), e.labels.begin(), e.labels.end());
  }
  return out;
}

template <typename T>
Tensor<T> batch_loss(const UnifiedTransformer<T>& model,
                     std::span<const PackedBatch> examples,
                     const SpecialTokens& specials, double smoothing,
                     std::mt19937_64* dropout_rng) {
  PaddedBatch padded = pad_batch(examples, specials);
  if (padded.prediction_rows.empty())
    throw ContractViolation("batch has no prediction positions");
  Tensor<T> hidden = model.hidden_states(padded.sequences, dropout_rng);
  Tensor<T> logits = model.lm_head(gather_rows(hidden, padded.prediction_rows));
  return cross_entropy_smoothed(logits, padded.labels, smoothing);
}

template Tensor<float> batch_loss(const UnifiedTransformer<float>&,
                                  std::span<const PackedBatch>,
                                  const SpecialTokens&, double,
                                  std::mt19937_64*);
template Tensor<double> batch_loss(const UnifiedTransformer<double>&,
                                   std::span<const PackedBatch>,
                                   const SpecialTokens&, double,
                                   std::mt19937_64*);

TrainResult train(std::span<const EncodedExample> data,
                  const ModelConfig& config, const TrainParams& params,
                  const SpecialTokens& specials, std::ostream* log,
                  const std::function<void(const TrainRecord&)>& on_step) {
  params.validate();
  if (data.empty()) throw ArgumentError("training data is empty");
  ModelConfig cfg = config;
  cfg.dropout = params.dropout;

  // The model is initialized from the seed itself; shuffling, masking and
  // dropout get their own derived streams.
  std::seed_seq seq{std::uint32_t(params.seed), std::uint32_t(params.seed >> 32)};
  std::uint64_t seeds[3];
  {
    std::uint32_t words[6];
    seq.generate(std::begin(words), std::end(words));
    for (int i = 0; i < 3; ++i)
      seeds[i] = (std::uint64_t(words[2 * i]) << 32) | words[2 * i + 1];
  }
  TrainResult result{init_model<float>(cfg, params.seed), {}};
  std::mt19937_64 shuffle_rng(seeds[0]), mask_rng(seeds[1]), drop_rng(seeds[2]);

  auto params_list = result.model.named_parameters();
  AdamState<float> state;
  AdamConfig adam;
  adam.weight_decay = params.weight_decay;
  adam.clip_norm = params.clip_norm;

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = data.size();  // forces a shuffle on the first step
  std::size_t batch_in_epoch = 0;
  std::vector<PackedBatch> packed;

  for (std::int64_t step = 1; step <= params.total_steps; ++step) {
    if (cursor >= data.size()) {
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      cursor = 0;
      batch_in_epoch = 0;
    }
    const std::size_t end = std::min(data.size(), cursor + params.batch_size);
    packed.clear();
    for (std::size_t i = cursor; i < end; ++i) {
      const EncodedExample& e = data[order[i]];
      packed.push_back(pack(params.method, e.src, e.tgt, specials,
                            params.mask_prob, mask_rng, cfg.max_positions));
    }
    cursor = end;

    for (auto& p : params_list) p.tensor.zero_grad();
    Tensor<float> loss = batch_loss(result.model, std::span<const PackedBatch>(packed),
                                    specials, params.label_smoothing, &drop_rng);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      throw NumericError("non-finite loss at step " + std::to_string(step) +
                         " (batch " + std::to_string(batch_in_epoch) +
                         " of its epoch)");
    }
    loss.backward();
    const double lr = params.learning_rate *
                      lr_multiplier(step, params.warmup_steps, params.total_steps);
    adam_step(std::span<NamedTensor<float>>(params_list), state, lr, adam);
    ++batch_in_epoch;

    TrainRecord rec{step, value, lr};
    result.log.push_back(rec);
    if (log) *log << step << ' ' << value << ' ' << lr << '\n';
    if (on_step) on_step(rec);
  }
  return result;
}

}  // namespace unimask
