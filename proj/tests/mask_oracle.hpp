#pragma once

// Cell-by-cell statement of the attention rules, used as an independent
// reference for build_attention_mask.

#include <cstddef>

#include "unimask/packing.hpp"

namespace unimask::testing {

enum class Role { kSource, kTarget, kPseudo };

struct Cell {
  Role role;
  std::size_t slot;  // index within its block
};

inline Cell classify(std::size_t index, std::size_t source_length,
                     std::size_t target_length) {
  if (index < source_length) return {Role::kSource, index};
  const std::size_t slots = target_length + 1;
  if (index < source_length + slots) return {Role::kTarget, index - source_length};
  return {Role::kPseudo, index - source_length - slots};
}

inline bool oracle_allows(std::size_t source_length, std::size_t target_length,
                          std::size_t row, std::size_t col) {
  const Cell q = classify(row, source_length, target_length);
  const Cell k = classify(col, source_length, target_length);
  // Everyone reads the source; the source reads nothing else.
  if (k.role == Role::kSource) return true;
  if (q.role == Role::kSource) return false;
  if (q.role == Role::kTarget) {
    // Left context and itself; pseudo columns are invisible.
    return k.role == Role::kTarget && k.slot <= q.slot;
  }
  // A pseudo token sees earlier target slots and its own column only.
  if (k.role == Role::kTarget) return k.slot < q.slot;
  return k.slot == q.slot;
}

inline BoolMatrix oracle_mask(MaskKind kind, std::size_t source_length,
                              std::size_t target_length) {
  const std::size_t slots = target_length + 1;
  const std::size_t len = source_length + slots +
                          (kind == MaskKind::kPseudoMasked ? slots : 0);
  BoolMatrix m(len, len);
  for (std::size_t r = 0; r < len; ++r)
    for (std::size_t c = 0; c < len; ++c)
      m.set(r, c, oracle_allows(source_length, target_length, r, c));
  return m;
}

}  // namespace unimask::testing
