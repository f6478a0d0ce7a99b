#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "unimask/errors.hpp"
#include "unimask/metrics.hpp"
#include "unimask/vocab.hpp"
#include "metrics_oracle.hpp"

namespace unimask {
namespace {

std::vector<std::string> toks(std::string_view s) { return tokenize(s); }

std::vector<std::string> random_text(std::size_t n, std::size_t alphabet,
                                     std::mt19937_64& rng) {
  std::vector<std::string> out(n);
  for (auto& t : out) t = std::string(1, char('a' + rng() % alphabet));
  return out;
}

TEST(RougeTest, HandCountedUnigrams) {
  Prf r = rouge_n(toks("the cat sat"), toks("the cat"), 1);
  EXPECT_DOUBLE_EQ(r.precision, 2.0 / 3.0);
  EXPECT_EQ(r.recall, 1.0);
  EXPECT_DOUBLE_EQ(r.f1, 0.8);
}

TEST(RougeTest, IdenticalAndDisjoint) {
  auto a = toks("a b c a b"), b = toks("x y z");
  for (std::size_t n : {1, 2}) {
    Prf same = rouge_n(a, a, n);
    EXPECT_EQ(same.precision, 1.0);
    EXPECT_EQ(same.recall, 1.0);
    EXPECT_EQ(same.f1, 1.0);
    Prf none = rouge_n(a, b, n);
    EXPECT_EQ(none.precision, 0.0);
    EXPECT_EQ(none.recall, 0.0);
    EXPECT_EQ(none.f1, 0.0);
  }
  EXPECT_EQ(rouge_l(a, a).f1, 1.0);
  EXPECT_EQ(rouge_l(a, b).f1, 0.0);
}

TEST(RougeTest, ClipsRepeatedNgrams) {
  Prf r = rouge_n(toks("the the the"), toks("the cat"), 1);
  EXPECT_DOUBLE_EQ(r.precision, 1.0 / 3.0);
  EXPECT_EQ(r.recall, 0.5);
}

TEST(RougeTest, EmptyInputsAndBadOrder) {
  std::vector<std::string> empty;
  Prf r = rouge_n(empty, toks("a b"), 2);
  EXPECT_EQ(r.f1, 0.0);
  EXPECT_EQ(rouge_n(toks("a"), toks("a"), 2).f1, 0.0);  // no bigrams at all
  EXPECT_EQ(rouge_l(empty, empty).f1, 0.0);
  EXPECT_THROW(rouge_n(empty, empty, 0), ArgumentError);
}

TEST(RougeLTest, HandCountedLcs) {
  Prf r = rouge_l(toks("a b c d"), toks("a c"));
  EXPECT_EQ(lcs_length(toks("a b c d"), toks("a c")), 2u);
  EXPECT_EQ(r.precision, 0.5);
  EXPECT_EQ(r.recall, 1.0);
  EXPECT_DOUBLE_EQ(r.f1, 2.0 / 3.0);
}

// Memoized recursion over suffixes, independent of the rolling-row table.
std::size_t lcs_oracle(const std::vector<std::string>& a,
                       const std::vector<std::string>& b) {
  std::vector<std::vector<int>> memo(a.size() + 1, std::vector<int>(b.size() + 1, -1));
  auto go = [&](auto&& self, std::size_t i, std::size_t j) -> int {
    if (i == a.size() || j == b.size()) return 0;
    int& m = memo[i][j];
    if (m >= 0) return m;
    if (a[i] == b[j]) return m = 1 + self(self, i + 1, j + 1);
    return m = std::max(self(self, i + 1, j), self(self, i, j + 1));
  };
  return std::size_t(go(go, 0, 0));
}

TEST(RougeLTest, MatchesRecursiveOracle) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    auto a = random_text(rng() % 12, 4, rng), b = random_text(rng() % 12, 4, rng);
    ASSERT_EQ(lcs_length(a, b), lcs_oracle(a, b));
  }
}

TEST(RougeTest, SwappingSwapsPrecisionAndRecall) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    auto a = random_text(rng() % 10, 5, rng), b = random_text(rng() % 10, 5, rng);
    for (std::size_t n : {1, 2}) {
      Prf ab = rouge_n(a, b, n), ba = rouge_n(b, a, n);
      EXPECT_EQ(ab.precision, ba.recall);
      EXPECT_EQ(ab.recall, ba.precision);
    }
    Prf ab = rouge_l(a, b), ba = rouge_l(b, a);
    EXPECT_EQ(ab.precision, ba.recall);
    EXPECT_EQ(ab.recall, ba.precision);
    EXPECT_GE(ab.f1, 0.0);
    EXPECT_LE(ab.f1, 1.0);
  }
}

TEST(BleuTest, MatchesDirectFormula) {
  std::mt19937_64 rng(3);
  int nonzero = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ScoredPair> corpus;
    for (int i = 0; i < 20; ++i) {
      auto ref = random_text(4 + rng() % 10, 3, rng);
      auto cand = ref;
      // Perturb a copy so higher-order n-grams partly survive.
      for (auto& t : cand)
        if (rng() % 4 == 0) t = std::string(1, char('a' + rng() % 3));
      cand.resize(std::max<std::size_t>(1, cand.size() - rng() % 3));
      corpus.push_back({cand, ref});
    }
    const double got = bleu4(corpus);
    EXPECT_NEAR(got, testing::bleu_oracle(corpus), 1e-9);
    EXPECT_GE(got, 0.0);
    EXPECT_LE(got, 1.0);
    nonzero += got > 0;
  }
  EXPECT_GT(nonzero, 40);
}

TEST(BleuTest, IdentityBrevityAndZero) {
  std::vector<ScoredPair> same = {{toks("a b c d e"), toks("a b c d e")},
                                  {toks("x y z w"), toks("x y z w")}};
  EXPECT_EQ(bleu4(same), 1.0);

  // Perfect precisions, candidate shorter than the reference.
  std::vector<ScoredPair> short_c = {{toks("a b c d"), toks("a b c d e f")}};
  EXPECT_DOUBLE_EQ(bleu4(short_c), std::exp(1.0 - 6.0 / 4.0));

  std::vector<ScoredPair> no4 = {{toks("a b c x d"), toks("a b c d e")}};
  EXPECT_EQ(bleu4(no4), 0.0);
  EXPECT_THROW(bleu4(std::vector<ScoredPair>{}), ArgumentError);
}

TEST(BleuTest, CorpusOrderInvariant) {
  std::mt19937_64 rng(4);
  std::vector<ScoredPair> corpus;
  for (int i = 0; i < 20; ++i) {
    auto ref = random_text(6, 2, rng);
    corpus.push_back({random_text(5 + rng() % 3, 2, rng), ref});
  }
  const double a = bleu4(corpus);
  std::shuffle(corpus.begin(), corpus.end(), rng);
  EXPECT_EQ(bleu4(corpus), a);
}

}  // namespace
}  // namespace unimask
