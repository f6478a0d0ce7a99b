#include "unimask/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "unimask/errors.hpp"

namespace unimask {

namespace {

using Counts = std::unordered_map<std::string, std::size_t>;

// Keys join the tokens with a unit separator, which tokenization never emits.
Counts ngrams(std::span<const std::string> tokens, std::size_t n) {
  Counts out;
  if (tokens.size() < n) return out;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (std::size_t j = 1; j < n; ++j) {
      key += '\x1f';
      key += tokens[i + j];
    }
    ++out[key];
  }
  return out;
}

std::size_t clipped_overlap(const Counts& cand, const Counts& ref) {
  std::size_t total = 0;
  for (const auto& [gram, c] : cand) {
    auto it = ref.find(gram);
    if (it != ref.end()) total += std::min(c, it->second);
  }
  return total;
}

std::size_t ngram_total(std::size_t length, std::size_t n) {
  return length >= n ? length - n + 1 : 0;
}

Prf make_prf(std::size_t overlap, std::size_t cand_total, std::size_t ref_total) {
  Prf r;
  if (cand_total) r.precision = double(overlap) / double(cand_total);
  if (ref_total) r.recall = double(overlap) / double(ref_total);
  if (r.precision + r.recall > 0)
    r.f1 = 2 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

}  // namespace

Prf rouge_n(std::span<const std::string> candidate,
            std::span<const std::string> reference, std::size_t n) {
  if (n == 0) throw ArgumentError("rouge_n needs n >= 1");
  const std::size_t overlap = clipped_overlap(ngrams(candidate, n), ngrams(reference, n));
  return make_prf(overlap, ngram_total(candidate.size(), n),
                  ngram_total(reference.size(), n));
}

std::size_t lcs_length(std::span<const std::string> a,
                       std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

Prf rouge_l(std::span<const std::string> candidate,
            std::span<const std::string> reference) {
  return make_prf(lcs_length(candidate, reference), candidate.size(), reference.size());
}

double bleu4(std::span<const ScoredPair> corpus) {
  if (corpus.empty()) throw ArgumentError("bleu4 needs a nonempty corpus");
  std::size_t matched[4] = {}, total[4] = {};
  std::size_t c = 0, r = 0;
  for (const ScoredPair& p : corpus) {
    c += p.candidate.size();
    r += p.reference.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      matched[n - 1] += clipped_overlap(ngrams(p.candidate, n), ngrams(p.reference, n));
      total[n - 1] += ngram_total(p.candidate.size(), n);
    }
  }
  double log_sum = 0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (matched[n] == 0) return 0.0;
    log_sum += std::log(double(matched[n]) / double(total[n]));
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - double(r) / double(c));
  return bp * std::exp(log_sum / 4.0);
}

}  // namespace unimask
