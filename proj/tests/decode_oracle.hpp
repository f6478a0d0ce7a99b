#pragma once

// Cache-free reference for step decoding: every step packs the source and
// the committed prefix the way training does and runs a full forward pass.

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "unimask/model.hpp"
#include "unimask/packing.hpp"

namespace unimask::testing {

// Logits predicting target slot prefix.size() + 1 given the prefix.
template <typename T>
std::vector<T> packed_step_logits(const UnifiedTransformer<T>& model,
                                  std::span<const TokenId> src,
                                  std::span<const TokenId> prefix,
                                  MaskKind method, const SpecialTokens& sp) {
  PackedBatch p;
  std::size_t row = 0;
  switch (method) {
    case MaskKind::kCausal:
      p = pack_causal(src, prefix, sp);
      row = p.prediction_positions.back();
      break;
    case MaskKind::kMasked: {
      // Only the slot being predicted carries [M].
      std::vector<std::uint8_t> slots(prefix.size() + 1, 0);
      slots[prefix.size()] = 1;
      p = pack_masked_at(src, prefix, sp, slots);
      row = p.prediction_positions.back();
      break;
    }
    case MaskKind::kPseudoMasked:
      p = pack_pseudo(src, prefix, sp);
      row = p.prediction_positions.back();
      break;
  }
  NoGradGuard ng;
  Tensor<T> logits = model.forward(p);
  const std::size_t v = model.config().vocab_size;
  auto r = logits.data().subspan(row * v, v);
  return {r.begin(), r.end()};
}

inline std::vector<double> log_softmax(std::span<const double> x) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  double z = 0;
  for (double v : x) z += std::exp(v - mx);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - mx - std::log(z);
  return out;
}

template <typename T>
class RecomputeScorer {
 public:
  using State = std::vector<TokenId>;

  RecomputeScorer(const UnifiedTransformer<T>& model, std::span<const TokenId> src,
                  MaskKind method, const SpecialTokens& sp)
      : model_(model), src_(src.begin(), src.end()), method_(method), sp_(sp) {}

  State start() const { return {}; }
  std::vector<double> step(State& prefix, std::size_t,
                           std::optional<TokenId> prev) const {
    if (prev) prefix.push_back(*prev);
    std::vector<T> logits = packed_step_logits(model_, src_, prefix, method_, sp_);
    std::vector<double> d(logits.begin(), logits.end());
    return log_softmax(d);
  }

 private:
  const UnifiedTransformer<T>& model_;
  std::vector<TokenId> src_;
  MaskKind method_;
  SpecialTokens sp_;
};

}  // namespace unimask::testing
