#pragma once

// Binary checkpoint container, all integers little-endian:
//
//   8 bytes   magic "UNIMASK\n"
//   u32       format version
//   u64 + n   config text (key=value lines, including the training method)
//   u64 + n   vocabulary text (one token per line)
//   u64       parameter value count
//   f32 * N   parameter values in named_parameters() order

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "unimask/model.hpp"
#include "unimask/packing.hpp"
#include "unimask/vocab.hpp"

namespace unimask {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  MaskKind method = MaskKind::kPseudoMasked;
  Vocab vocab;
  UnifiedTransformer<float> model;
};

std::string config_to_text(const ModelConfig& config, MaskKind method);

std::string serialize_checkpoint(const UnifiedTransformer<float>& model,
                                 const Vocab& vocab, MaskKind method);
// Throws MagicError, VersionError, TruncatedError, or CheckpointError for
// other inconsistencies (trailing bytes, config/vocab mismatch).
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path,
                     const UnifiedTransformer<float>& model, const Vocab& vocab,
                     MaskKind method);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace unimask
