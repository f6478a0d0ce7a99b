#pragma once

// Line-delimited datasets, synthetic tasks and flat key=value settings.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "unimask/finetune.hpp"
#include "unimask/vocab.hpp"

namespace unimask {

// One JSON object per line: {"src": "...", "tgt": "..."}.
struct ExampleRecord {
  std::string src;
  std::string tgt;

  friend bool operator==(const ExampleRecord&, const ExampleRecord&) = default;
};

// Records in file order; empty lines are skipped. Malformed JSON throws
// DataError and a missing or non-string field throws SchemaError, both
// naming the 1-based line.
std::vector<ExampleRecord> load_dataset(const std::filesystem::path& path);
std::vector<ExampleRecord> parse_dataset(std::string_view text);
void save_dataset(const std::filesystem::path& path,
                  std::span<const ExampleRecord> records);

// Tokenizes with the vocabulary. Throws DataError naming the record index
// when a source is empty.
std::vector<EncodedExample> encode_dataset(std::span<const ExampleRecord> records,
                                           const Vocab& vocab);

enum class SynthTask { kCopy, kReverse, kExtract };

SynthTask parse_synth_task(std::string_view name);
std::string_view to_string(SynthTask task);

// copy: t = s; reverse: t = s backwards; extract: the tokens at even
// indices of s.
std::vector<std::string> apply_task(SynthTask task,
                                    std::span<const std::string> src);

// Sources draw uniformly from the words w0..w{vocab_size-1} with lengths in
// [min_len, max_len]. With noise > 0 each target token is replaced by a
// random word with that probability. Deterministic per seed.
std::vector<ExampleRecord> synth_generate(SynthTask task, std::size_t n,
                                          std::size_t vocab_size,
                                          std::size_t min_len,
                                          std::size_t max_len,
                                          std::uint64_t seed,
                                          double noise = 0.0);

// Flat "key = value" text; '#' starts a comment. Throws DataError naming
// the line for lines without '=' and for repeated keys.
using Settings = std::map<std::string, std::string>;
Settings parse_settings(std::string_view text);
Settings load_settings(const std::filesystem::path& path);

// Moves recognized keys from settings into the model and training
// configuration. Throws ConfigError for unknown keys or bad values.
void apply_settings(const Settings& settings, ModelConfig& model,
                    TrainParams& train);

std::string read_file(const std::filesystem::path& path);

}  // namespace unimask
