#pragma once

// Left-to-right generation against a key/value cache.
//
// The source block is encoded once, bidirectionally. Each step then feeds
// at most two tokens:
//   Causal        [SOS] at step 0, else the previous token; cached.
//   Masked/Pseudo the previous token at the previous position (cached) plus
//                 an [M]/[P] probe at the current position. The probe only
//                 queries; it never enters the cache.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "unimask/errors.hpp"
#include "unimask/model.hpp"
#include "unimask/packing.hpp"
#include "unimask/vocab.hpp"

namespace unimask {

struct DecodeParams {
  MaskKind method = MaskKind::kPseudoMasked;
  std::size_t beam_size = 1;
  double length_penalty_alpha = 0.0;
  std::size_t min_output_tokens = 0;
  std::size_t max_output_tokens = 32;
  // Source tokens kept (head of the sequence), [CLS]/[SEP] not counted.
  std::size_t max_input_tokens = kNoLengthLimit;

  // Throws ArgumentError.
  void validate() const;

  // Evaluation settings for "cnndm", "xsum", "squad", "webqa", "gigaword".
  // Throws ArgumentError for other names.
  static DecodeParams preset(std::string_view benchmark);
};

// ((5 + length) / 6)^alpha. length counts a closing [SEP].
double length_penalty(std::size_t length, double alpha);

template <typename T>
struct StepOutput {
  std::vector<T> logits;
  std::vector<double> log_probs;
};

// Encodes [CLS] src [SEP] into a fresh cache. src is cut to max_input_tokens
// first. Throws ArgumentError for an empty source.
template <typename T>
DecodeCache<T> encode_source(const UnifiedTransformer<T>& model,
                             std::span<const TokenId> src,
                             const SpecialTokens& specials,
                             std::size_t max_input_tokens = kNoLengthLimit);

// One generation step; see the header comment for what is fed. prev_token is
// required for step_index > 0 and ignored at step 0. Throws StateError when
// the cache does not hold exactly the source plus the committed prefix.
template <typename T>
StepOutput<T> decode_step(const UnifiedTransformer<T>& model,
                          DecodeCache<T>& cache, MaskKind method,
                          std::size_t step_index,
                          std::optional<TokenId> prev_token,
                          const SpecialTokens& specials);

// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

struct Hypothesis {
  std::vector<TokenId> tokens;  // [SEP] excluded
  double log_prob = 0.0;
  double score = 0.0;
  bool ended_with_sep = false;
  std::size_t finish_step = 0;
};

struct BeamResult {
  std::vector<TokenId> best;
  std::vector<Hypothesis> n_best;  // score descending, earlier finish first
};

// Search over any step function. A scorer provides
//   using State = ...;                     copyable; a copy forks a hypothesis
//   State start();
//   std::vector<double> step(State&, std::size_t step_index,
//                            std::optional<TokenId> prev);   log-probabilities
// The step at index i sees prev = the token committed at i - 1.
// Tokens in banned are never emitted.
template <typename Scorer>
BeamResult beam_search_with(Scorer& scorer, const DecodeParams& params,
                            TokenId sep, std::span<const TokenId> banned = {});

template <typename Scorer>
std::vector<TokenId> greedy_decode_with(Scorer& scorer,
                                        const DecodeParams& params,
                                        TokenId sep,
                                        std::span<const TokenId> banned = {});

// Specials that never belong in an output: [PAD], [CLS], [SOS] (unless it
// aliases [SEP]), [M] and [P].
std::vector<TokenId> never_generated(const SpecialTokens& specials);

// Incremental scorer over a model and one source sequence.
template <typename T>
class ModelScorer {
 public:
  using State = DecodeCache<T>;

  ModelScorer(const UnifiedTransformer<T>& model, std::span<const TokenId> src,
              const SpecialTokens& specials, MaskKind method,
              std::size_t max_input_tokens = kNoLengthLimit)
      : model_(model),
        specials_(specials),
        method_(method),
        source_(encode_source(model, src, specials, max_input_tokens)) {}

  State start() const { return source_; }
  std::vector<double> step(State& cache, std::size_t step_index,
                           std::optional<TokenId> prev) const {
    return decode_step(model_, cache, method_, step_index, prev, specials_)
        .log_probs;
  }

 private:
  const UnifiedTransformer<T>& model_;
  SpecialTokens specials_;
  MaskKind method_;
  DecodeCache<T> source_;
};

template <typename T>
std::vector<TokenId> greedy_decode(const UnifiedTransformer<T>& model,
                                   std::span<const TokenId> src,
                                   const SpecialTokens& specials,
                                   const DecodeParams& params);

template <typename T>
BeamResult beam_search(const UnifiedTransformer<T>& model,
                       std::span<const TokenId> src,
                       const SpecialTokens& specials,
                       const DecodeParams& params);

// Implementation of the generic searches.

namespace detail {

inline void mask_tokens(std::vector<double>& log_probs, TokenId sep,
                        std::span<const TokenId> banned, std::size_t emitted,
                        const DecodeParams& params) {
  constexpr double kNever = -std::numeric_limits<double>::infinity();
  for (TokenId t : banned) log_probs.at(static_cast<std::size_t>(t)) = kNever;
  if (emitted < params.min_output_tokens)
    log_probs.at(static_cast<std::size_t>(sep)) = kNever;
}

}  // namespace detail

template <typename Scorer>
std::vector<TokenId> greedy_decode_with(Scorer& scorer,
                                        const DecodeParams& params,
                                        TokenId sep,
                                        std::span<const TokenId> banned) {
  params.validate();
  auto state = scorer.start();
  std::vector<TokenId> out;
  std::optional<TokenId> prev;
  for (std::size_t step = 0; step < params.max_output_tokens; ++step) {
    std::vector<double> lp = scorer.step(state, step, prev);
    detail::mask_tokens(lp, sep, banned, out.size(), params);
    const auto next = static_cast<TokenId>(argmax(lp));
    if (next == sep) break;
    out.push_back(next);
    prev = next;
  }
  return out;
}

template <typename Scorer>
BeamResult beam_search_with(Scorer& scorer, const DecodeParams& params,
                            TokenId sep, std::span<const TokenId> banned) {
  params.validate();
  using State = typename Scorer::State;
  struct Live {
    State state;
    std::vector<TokenId> tokens;
    double log_prob = 0.0;
  };
  struct Candidate {
    double log_prob;
    std::size_t beam;
    TokenId token;
  };
  const std::size_t k = params.beam_size;
  std::vector<Live> live;
  live.push_back({scorer.start(), {}, 0.0});
  std::vector<Hypothesis> finished;

  auto finish = [&](std::vector<TokenId> tokens, double lp, bool sep_end,
                    std::size_t step) {
    const std::size_t len = tokens.size() + (sep_end ? 1 : 0);
    finished.push_back({std::move(tokens), lp,
                        lp / length_penalty(len, params.length_penalty_alpha),
                        sep_end, step});
  };

  for (std::size_t step = 0; step < params.max_output_tokens && !live.empty();
       ++step) {
    std::vector<Candidate> cands;
    for (std::size_t b = 0; b < live.size(); ++b) {
      std::optional<TokenId> prev;
      if (!live[b].tokens.empty()) prev = live[b].tokens.back();
      std::vector<double> lp = scorer.step(live[b].state, step, prev);
      detail::mask_tokens(lp, sep, banned, live[b].tokens.size(), params);
      for (std::size_t t = 0; t < lp.size(); ++t) {
        if (lp[t] == -std::numeric_limits<double>::infinity()) continue;
        cands.push_back({live[b].log_prob + lp[t], b, static_cast<TokenId>(t)});
      }
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) {
                       return a.log_prob > b.log_prob;
                     });

    // A [SEP] candidate finishes only while it ranks inside the first
    // 2k - 1 places; with k = 1 that is exactly the greedy rule.
    const bool last_step = step + 1 == params.max_output_tokens;
    std::vector<Live> next;
    std::size_t extended = 0;
    for (std::size_t rank = 0; rank < cands.size(); ++rank) {
      if (extended == k && rank >= 2 * k - 1) break;
      const Candidate& c = cands[rank];
      const Live& parent = live[c.beam];
      if (c.token == sep) {
        if (rank < 2 * k - 1) finish(parent.tokens, c.log_prob, true, step);
        continue;
      }
      if (extended == k) continue;
      std::vector<TokenId> tokens = parent.tokens;
      tokens.push_back(c.token);
      ++extended;
      if (last_step) {
        finish(std::move(tokens), c.log_prob, false, step);
      } else {
        next.push_back({parent.state, std::move(tokens), c.log_prob});
      }
    }
    if (last_step || finished.size() >= k) break;
    live = std::move(next);
  }

  std::stable_sort(finished.begin(), finished.end(),
                   [](const Hypothesis& a, const Hypothesis& b) {
                     if (a.score != b.score) return a.score > b.score;
                     return a.finish_step < b.finish_step;
                   });
  BeamResult result;
  if (!finished.empty()) result.best = finished.front().tokens;
  result.n_best = std::move(finished);
  return result;
}

extern template DecodeCache<float> encode_source(
    const UnifiedTransformer<float>&, std::span<const TokenId>,
    const SpecialTokens&, std::size_t);
extern template DecodeCache<double> encode_source(
    const UnifiedTransformer<double>&, std::span<const TokenId>,
    const SpecialTokens&, std::size_t);
extern template StepOutput<float> decode_step(const UnifiedTransformer<float>&,
                                              DecodeCache<float>&, MaskKind,
                                              std::size_t,
                                              std::optional<TokenId>,
                                              const SpecialTokens&);
extern template StepOutput<double> decode_step(
    const UnifiedTransformer<double>&, DecodeCache<double>&, MaskKind,
    std::size_t, std::optional<TokenId>, const SpecialTokens&);
extern template std::vector<TokenId> greedy_decode(
    const UnifiedTransformer<float>&, std::span<const TokenId>,
    const SpecialTokens&, const DecodeParams&);
extern template std::vector<TokenId> greedy_decode(
    const UnifiedTransformer<double>&, std::span<const TokenId>,
    const SpecialTokens&, const DecodeParams&);
extern template BeamResult beam_search(const UnifiedTransformer<float>&,
                                       std::span<const TokenId>,
                                       const SpecialTokens&,
                                       const DecodeParams&);
extern template BeamResult beam_search(const UnifiedTransformer<double>&,
                                       std::span<const TokenId>,
                                       const SpecialTokens&,
                                       const DecodeParams&);

}  // namespace unimask
