#include "unimask/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "unimask/errors.hpp"

namespace unimask {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

Vocab::Vocab() {
  for (auto s : kSpecialTokenStrings) {
    index_.emplace(std::string(s), static_cast<TokenId>(tokens_.size()));
    tokens_.emplace_back(s);
  }
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kSpecialTokenStrings.size()) {
    throw DataError("vocabulary has " + std::to_string(tokens.size()) +
                    " entries; the 7 special tokens are required");
  }
  for (std::size_t i = 0; i < kSpecialTokenStrings.size(); ++i) {
    if (tokens[i] != kSpecialTokenStrings[i]) {
      throw DataError("vocabulary line " + std::to_string(i) + " must be " +
                      std::string(kSpecialTokenStrings[i]) + ", found '" +
                      tokens[i] + "'");
    }
  }
  Vocab vocab;
  vocab.tokens_.clear();
  vocab.index_.clear();
  for (auto& t : tokens) {
    if (t.empty()) {
      throw DataError("vocabulary line " + std::to_string(vocab.tokens_.size()) +
                      " is empty");
    }
    auto [it, inserted] =
        vocab.index_.emplace(t, static_cast<TokenId>(vocab.tokens_.size()));
    if (!inserted) {
      throw DataError("vocabulary token '" + t + "' repeats on line " +
                      std::to_string(vocab.tokens_.size()));
    }
    vocab.tokens_.push_back(std::move(t));
  }
  return vocab;
}

Vocab Vocab::build(std::span<const std::string> texts,
                   std::optional<std::size_t> max_size) {
  std::map<std::string, std::size_t> counts;
  for (const auto& text : texts) {
    for (auto& tok : tokenize(text)) ++counts[tok];
  }
  Vocab base;
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, n] : counts) {
    if (!base.contains(tok)) ranked.emplace_back(tok, n);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = base.tokens_;
  for (auto& [tok, n] : ranked) {
    if (max_size && tokens.size() >= *max_size) break;
    tokens.push_back(tok);
  }
  return from_tokens(std::move(tokens));
}

Vocab Vocab::from_text(std::string_view text) {
  std::vector<std::string> tokens;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return from_tokens(std::move(tokens));
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_text(buffer.str());
}

std::string Vocab::to_text() const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out += '\n';
  }
  return out;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary " + path.string());
  out << to_text();
}

bool Vocab::contains(std::string_view token) const {
  return index_.find(std::string(token)) != index_.end();
}

TokenId Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? SpecialTokens{}.unk : it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("token id " + std::to_string(id) +
                     " outside vocabulary of " + std::to_string(size()));
  }
  return tokens_[id];
}

SpecialTokens Vocab::specials() const {
  SpecialTokens s;
  if (sos_alias_) s.sos = s.sep;
  return s;
}

std::vector<TokenId> Vocab::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& tok : tokenize(text)) ids.push_back(id(tok));
  return ids;
}

std::string Vocab::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (is_special(id) && id != SpecialTokens{}.unk) continue;
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

}  // namespace unimask
