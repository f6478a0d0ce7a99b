#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "unimask/ops.hpp"

namespace unimask {

// Reserved ids. The seven specials always occupy ids 0..6 in this order.
struct SpecialTokens {
  TokenId pad = 0;
  TokenId unk = 1;
  TokenId cls = 2;
  TokenId sep = 3;
  TokenId sos = 4;
  TokenId mask = 5;
  TokenId pseudo = 6;
};

inline constexpr std::array<std::string_view, 7> kSpecialTokenStrings = {
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[SOS]", "[M]", "[P]"};

// Lowercases and splits on whitespace.
std::vector<std::string> tokenize(std::string_view text);

// Token <-> id bijection. File form: one token per line, line number = id.
class Vocab {
 public:
  // Specials only.
  Vocab();

  // Validates that the seven specials lead the list and no token repeats.
  static Vocab from_tokens(std::vector<std::string> tokens);

  // Specials followed by corpus tokens by descending frequency (ties in
  // lexicographic order), keeping at most max_size entries in total.
  static Vocab build(std::span<const std::string> texts,
                     std::optional<std::size_t> max_size = std::nullopt);

  static Vocab from_text(std::string_view text);
  static Vocab load(const std::filesystem::path& path);
  std::string to_text() const;
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const;
  // Unknown tokens map to [UNK].
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  // With the alias on, [SOS] resolves to the [SEP] id.
  void set_sos_alias(bool alias) { sos_alias_ = alias; }
  bool sos_alias() const { return sos_alias_; }
  SpecialTokens specials() const;
  bool is_special(TokenId id) const { return id >= 0 && id < 7; }

  std::vector<TokenId> encode(std::string_view text) const;
  // Space-joined tokens; specials other than [UNK] are dropped.
  std::string decode(std::span<const TokenId> ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  bool sos_alias_ = false;
};

}  // namespace unimask
