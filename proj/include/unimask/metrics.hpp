#pragma once

// ROUGE-N, ROUGE-L and corpus BLEU-4 over pre-tokenized text. Single
// reference, no stemming, no smoothing.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace unimask {

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct ScoredPair {
  std::vector<std::string> candidate;
  std::vector<std::string> reference;
};

// Clipped n-gram overlap. Zero denominators give 0. Throws ArgumentError
// for n == 0.
Prf rouge_n(std::span<const std::string> candidate,
            std::span<const std::string> reference, std::size_t n);

// Longest common subsequence based.
Prf rouge_l(std::span<const std::string> candidate,
            std::span<const std::string> reference);

std::size_t lcs_length(std::span<const std::string> a,
                       std::span<const std::string> b);

// Geometric mean of clipped 1..4-gram precisions pooled over the corpus,
// times exp(1 - r/c) when c <= r. Any zero precision gives 0. Throws
// ArgumentError for an empty corpus.
double bleu4(std::span<const ScoredPair> corpus);

}  // namespace unimask
