#pragma once

// Brute-force reference for width-2 beam search over a tiny vocabulary.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <vector>

#include "decode_oracle.hpp"
#include "unimask/decode.hpp"

namespace unimask::testing {

// Three-token vocabulary with id 2 as [SEP]; log-probabilities are random
// but fixed per prefix.
struct TableScorer {
  using State = std::vector<TokenId>;
  static constexpr TokenId kSep = 2;
  std::map<std::vector<TokenId>, std::vector<double>> table;

  explicit TableScorer(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    auto add = [&](std::vector<TokenId> prefix) {
      std::vector<double> l = {u(rng), u(rng), u(rng)};
      table[prefix] = log_softmax(l);
    };
    add({});
    for (TokenId a : {0, 1}) add({a});
  }
  State start() const { return {}; }
  std::vector<double> step(State& prefix, std::size_t,
                           std::optional<TokenId> prev) const {
    if (prev) prefix.push_back(*prev);
    return table.at(prefix);
  }
};

// Best output of at most two tokens: [SEP], a [SEP], or a b (force-finished).
inline std::vector<TokenId> exhaustive_best(const TableScorer& s, double alpha) {
  struct Seq {
    std::vector<TokenId> out;
    double lp;
    std::size_t len;
  };
  constexpr TokenId kSep = TableScorer::kSep;
  std::vector<Seq> all;
  const auto& root = s.table.at({});
  all.push_back({{}, root[kSep], 1});
  for (TokenId a : {0, 1}) {
    const auto& next = s.table.at({a});
    all.push_back({{a}, root[a] + next[kSep], 2});
    for (TokenId b : {0, 1}) all.push_back({{a, b}, root[a] + next[b], 2});
  }
  const Seq* best = &all[0];
  for (const Seq& q : all) {
    if (q.lp / length_penalty(q.len, alpha) > best->lp / length_penalty(best->len, alpha))
      best = &q;
  }
  return best->out;
}

}  // namespace unimask::testing
