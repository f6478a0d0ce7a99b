#include "unimask/packing.hpp"

#include <string>

#include "unimask/errors.hpp"

namespace unimask {

std::string_view to_string(MaskKind kind) {
  switch (kind) {
    case MaskKind::kCausal:
      return "causal";
    case MaskKind::kMasked:
      return "masked";
    case MaskKind::kPseudoMasked:
      return "pseudo";
  }
  return "unknown";
}

MaskKind parse_mask_kind(std::string_view name) {
  if (name == "causal") return MaskKind::kCausal;
  if (name == "masked") return MaskKind::kMasked;
  if (name == "pseudo" || name == "pseudo-masked") return MaskKind::kPseudoMasked;
  throw ArgumentError("unknown method '" + std::string(name) +
                      "' (expected causal, masked or pseudo)");
}

std::size_t packed_length(MaskKind kind, std::size_t source_length,
                          std::size_t target_length) {
  if (kind == MaskKind::kPseudoMasked) {
    return source_length + 2 * (target_length + 1);
  }
  return source_length + target_length + 1;
}

BoolMatrix build_attention_mask(MaskKind kind, std::ptrdiff_t source_length,
                                std::ptrdiff_t target_length) {
  if (source_length < 2 || target_length < 0) {
    throw ArgumentError("attention mask needs source_length >= 2 and "
                        "target_length >= 0, got " +
                        std::to_string(source_length) + ", " +
                        std::to_string(target_length));
  }
  const std::size_t ls = static_cast<std::size_t>(source_length);
  const std::size_t slots = static_cast<std::size_t>(target_length) + 1;
  const std::size_t len = packed_length(kind, ls, slots - 1);
  BoolMatrix mask(len, len);

  for (std::size_t r = 0; r < len; ++r) {
    for (std::size_t c = 0; c < ls; ++c) mask.set(r, c, true);
  }
  // Target block: left context and itself.
  for (std::size_t j = 0; j < slots; ++j) {
    for (std::size_t c = 0; c <= j; ++c) mask.set(ls + j, ls + c, true);
  }
  if (kind == MaskKind::kPseudoMasked) {
    const std::size_t pseudo = ls + slots;
    for (std::size_t j = 0; j < slots; ++j) {
      for (std::size_t c = 0; c < j; ++c) mask.set(pseudo + j, ls + c, true);
      mask.set(pseudo + j, pseudo + j, true);
    }
  }
  return mask;
}

namespace {

void check_source(std::span<const TokenId> src) {
  if (src.empty()) throw ArgumentError("source sequence is empty");
}

void check_length(std::size_t len, std::size_t max_positions) {
  if (len > max_positions) {
    throw LengthError("packed length " + std::to_string(len) +
                      " exceeds max_positions " + std::to_string(max_positions));
  }
}

// Source block plus common bookkeeping.
PackedBatch start_pack(MaskKind kind, std::span<const TokenId> src,
                       std::span<const TokenId> tgt,
                       const SpecialTokens& specials,
                       std::size_t max_positions) {
  check_source(src);
  PackedBatch batch;
  batch.kind = kind;
  batch.source_length = src.size() + 2;
  batch.target_length = tgt.size();
  const std::size_t len = packed_length(kind, batch.source_length, tgt.size());
  check_length(len, max_positions);
  batch.token_ids.reserve(len);
  batch.token_ids.push_back(specials.cls);
  batch.token_ids.insert(batch.token_ids.end(), src.begin(), src.end());
  batch.token_ids.push_back(specials.sep);
  for (std::size_t i = 0; i < batch.source_length; ++i) {
    batch.position_ids.push_back(static_cast<std::int32_t>(i));
    batch.segment_ids.push_back(0);
  }
  batch.attention_mask = build_attention_mask(
      kind, static_cast<std::ptrdiff_t>(batch.source_length),
      static_cast<std::ptrdiff_t>(tgt.size()));
  return batch;
}

// Appends n + 1 target-block slots at sequential positions.
void append_target_slots(PackedBatch& batch, std::size_t slots) {
  const std::size_t start = batch.position_ids.size();
  for (std::size_t j = 0; j < slots; ++j) {
    batch.position_ids.push_back(static_cast<std::int32_t>(start + j));
    batch.segment_ids.push_back(1);
  }
}

}  // namespace

PackedBatch pack_causal(std::span<const TokenId> src,
                        std::span<const TokenId> tgt,
                        const SpecialTokens& specials,
                        std::size_t max_positions) {
  PackedBatch batch =
      start_pack(MaskKind::kCausal, src, tgt, specials, max_positions);
  const std::size_t ls = batch.source_length;
  batch.token_ids.push_back(specials.sos);
  batch.token_ids.insert(batch.token_ids.end(), tgt.begin(), tgt.end());
  append_target_slots(batch, tgt.size() + 1);
  // Slot j predicts t_{j+1}; the last slot predicts [SEP].
  for (std::size_t j = 0; j <= tgt.size(); ++j) {
    batch.prediction_positions.push_back(ls + j);
    batch.labels.push_back(j < tgt.size() ? tgt[j] : specials.sep);
  }
  return batch;
}

PackedBatch pack_masked_at(std::span<const TokenId> src,
                           std::span<const TokenId> tgt,
                           const SpecialTokens& specials,
                           std::span<const std::uint8_t> masked_slots,
                           std::size_t max_positions) {
  if (masked_slots.size() != tgt.size() + 1) {
    throw ArgumentError("masked_slots has " +
                        std::to_string(masked_slots.size()) +
                        " entries, expected " + std::to_string(tgt.size() + 1));
  }
  PackedBatch batch =
      start_pack(MaskKind::kMasked, src, tgt, specials, max_positions);
  const std::size_t ls = batch.source_length;
  append_target_slots(batch, tgt.size() + 1);
  for (std::size_t j = 0; j <= tgt.size(); ++j) {
    const TokenId original = j < tgt.size() ? tgt[j] : specials.sep;
    if (masked_slots[j]) {
      batch.token_ids.push_back(specials.mask);
      batch.prediction_positions.push_back(ls + j);
      batch.labels.push_back(original);
    } else {
      batch.token_ids.push_back(original);
    }
  }
  return batch;
}

PackedBatch pack_masked(std::span<const TokenId> src,
                        std::span<const TokenId> tgt,
                        const SpecialTokens& specials, double mask_prob,
                        std::mt19937_64& rng, std::size_t max_positions) {
  if (!(mask_prob > 0.0 && mask_prob <= 1.0)) {
    throw ArgumentError("mask_prob must be in (0, 1], got " +
                        std::to_string(mask_prob));
  }
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<std::uint8_t> slots(tgt.size() + 1);
  bool any = false;
  for (auto& s : slots) {
    s = uniform(rng) < mask_prob ? 1 : 0;
    any = any || s;
  }
  if (!any) slots.back() = 1;
  return pack_masked_at(src, tgt, specials, slots, max_positions);
}

PackedBatch pack_pseudo(std::span<const TokenId> src,
                        std::span<const TokenId> tgt,
                        const SpecialTokens& specials,
                        std::size_t max_positions) {
  PackedBatch batch =
      start_pack(MaskKind::kPseudoMasked, src, tgt, specials, max_positions);
  const std::size_t ls = batch.source_length;
  const std::size_t slots = tgt.size() + 1;
  batch.token_ids.insert(batch.token_ids.end(), tgt.begin(), tgt.end());
  batch.token_ids.push_back(specials.sep);
  append_target_slots(batch, slots);
  for (std::size_t j = 0; j < slots; ++j) {
    batch.token_ids.push_back(specials.pseudo);
    batch.position_ids.push_back(static_cast<std::int32_t>(ls + j));
    batch.segment_ids.push_back(1);
    batch.prediction_positions.push_back(ls + slots + j);
    batch.labels.push_back(j < tgt.size() ? tgt[j] : specials.sep);
  }
  return batch;
}

PackedBatch pack(MaskKind kind, std::span<const TokenId> src,
                 std::span<const TokenId> tgt, const SpecialTokens& specials,
                 double mask_prob, std::mt19937_64& rng,
                 std::size_t max_positions) {
  switch (kind) {
    case MaskKind::kCausal:
      return pack_causal(src, tgt, specials, max_positions);
    case MaskKind::kMasked:
      return pack_masked(src, tgt, specials, mask_prob, rng, max_positions);
    case MaskKind::kPseudoMasked:
      return pack_pseudo(src, tgt, specials, max_positions);
  }
  throw ArgumentError("unknown mask kind");
}

}  // namespace unimask
