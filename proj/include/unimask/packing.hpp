#pragma once

// Packed inputs and self-attention masks for the three fine-tuning methods.
//
// Every packed sequence starts with the source block [CLS] s_1..s_m [SEP]
// (positions 0..m+1, segment 0) that attends bidirectionally within itself.
// The target side differs per method:
//
//   Causal        [SOS] t_1 .. t_n          slot j predicts the next token
//   Masked        t_1 .. t_n [SEP]          some slots replaced by [M]
//   PseudoMasked  t_1 .. t_n [SEP] [P]x(n+1) each [P] predicts its slot
//
// Target rows see the whole source, earlier target slots and themselves.
// A [P] row sees the source, the target slots before its own and itself;
// no other row sees a [P] column.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "unimask/ops.hpp"
#include "unimask/vocab.hpp"

namespace unimask {

enum class MaskKind { kCausal, kMasked, kPseudoMasked };

std::string_view to_string(MaskKind kind);
// Accepts "causal", "masked", "pseudo".
MaskKind parse_mask_kind(std::string_view name);

// Row-major boolean matrix; row = query, column = key.
class BoolMatrix {
 public:
  BoolMatrix() = default;
  BoolMatrix(std::size_t rows, std::size_t cols, bool value = false)
      : rows_(rows), cols_(cols), cells_(rows * cols, value ? 1 : 0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool operator()(std::size_t r, std::size_t c) const {
    return cells_[r * cols_ + c] != 0;
  }
  void set(std::size_t r, std::size_t c, bool value) {
    cells_[r * cols_ + c] = value ? 1 : 0;
  }
  std::span<const std::uint8_t> cells() const { return cells_; }
  std::span<const std::uint8_t> row(std::size_t r) const {
    return std::span<const std::uint8_t>(cells_).subspan(r * cols_, cols_);
  }

  friend bool operator==(const BoolMatrix&, const BoolMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> cells_;
};

inline constexpr std::size_t kNoLengthLimit =
    std::numeric_limits<std::size_t>::max();

struct PackedBatch {
  MaskKind kind = MaskKind::kCausal;
  std::vector<TokenId> token_ids;
  std::vector<std::int32_t> position_ids;
  std::vector<std::int32_t> segment_ids;
  BoolMatrix attention_mask;
  std::vector<std::size_t> prediction_positions;
  std::vector<TokenId> labels;
  std::size_t source_length = 0;  // |s| + 2
  std::size_t target_length = 0;  // |t|

  std::size_t size() const { return token_ids.size(); }
};

// Mask for a source block of source_length tokens ([CLS]/[SEP] included)
// and a target of target_length tokens. Throws ArgumentError for negative
// lengths or source_length < 2.
BoolMatrix build_attention_mask(MaskKind kind, std::ptrdiff_t source_length,
                                std::ptrdiff_t target_length);

// Length of the packed sequence for the given kind.
std::size_t packed_length(MaskKind kind, std::size_t source_length,
                          std::size_t target_length);

PackedBatch pack_causal(std::span<const TokenId> src,
                        std::span<const TokenId> tgt,
                        const SpecialTokens& specials,
                        std::size_t max_positions = kNoLengthLimit);

// Masks each of the n + 1 target slots (final [SEP] included) independently
// with probability mask_prob; when nothing is drawn the last slot is masked.
PackedBatch pack_masked(std::span<const TokenId> src,
                        std::span<const TokenId> tgt,
                        const SpecialTokens& specials, double mask_prob,
                        std::mt19937_64& rng,
                        std::size_t max_positions = kNoLengthLimit);

// Masked packing with an explicit choice of slots (size n + 1).
PackedBatch pack_masked_at(std::span<const TokenId> src,
                           std::span<const TokenId> tgt,
                           const SpecialTokens& specials,
                           std::span<const std::uint8_t> masked_slots,
                           std::size_t max_positions = kNoLengthLimit);

PackedBatch pack_pseudo(std::span<const TokenId> src,
                        std::span<const TokenId> tgt,
                        const SpecialTokens& specials,
                        std::size_t max_positions = kNoLengthLimit);

// Dispatches on kind; rng and mask_prob are only used for kMasked.
PackedBatch pack(MaskKind kind, std::span<const TokenId> src,
                 std::span<const TokenId> tgt, const SpecialTokens& specials,
                 double mask_prob, std::mt19937_64& rng,
                 std::size_t max_positions = kNoLengthLimit);

}  // namespace unimask
