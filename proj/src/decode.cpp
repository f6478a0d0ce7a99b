#include "unimask/decode.hpp"

#include <string>

namespace unimask {

void DecodeParams::validate() const {
  if (beam_size == 0) throw ArgumentError("beam_size must be >= 1");
  if (max_output_tokens == 0) throw ArgumentError("max_output_tokens must be >= 1");
  if (min_output_tokens > max_output_tokens) {
    throw ArgumentError("min_output_tokens " + std::to_string(min_output_tokens) +
                        " exceeds max_output_tokens " +
                        std::to_string(max_output_tokens));
  }
  if (!std::isfinite(length_penalty_alpha))
    throw ArgumentError("length penalty must be finite");
  if (max_input_tokens == 0) throw ArgumentError("max_input_tokens must be >= 1");
}

DecodeParams DecodeParams::preset(std::string_view benchmark) {
  struct Row {
    std::string_view name;
    std::size_t max_in, max_out, beam;
    double alpha;
    std::size_t min_out;
  };
  static constexpr Row kRows[] = {
      {"cnndm", 608, 160, 5, 0.9, 48}, {"xsum", 720, 48, 8, 0.7, 1},
      {"squad", 384, 32, 8, 1.3, 5},   {"webqa", 384, 32, 8, 1.3, 5},
      {"gigaword", 96, 48, 5, 0.9, 1},
  };
  for (const Row& r : kRows) {
    if (r.name != benchmark) continue;
    DecodeParams p;
    p.max_input_tokens = r.max_in;
    p.max_output_tokens = r.max_out;
    p.beam_size = r.beam;
    p.length_penalty_alpha = r.alpha;
    p.min_output_tokens = r.min_out;
    return p;
  }
  throw ArgumentError("unknown decoding preset '" + std::string(benchmark) + "'");
}

double length_penalty(std::size_t length, double alpha) {
  return std::pow((5.0 + double(length)) / 6.0, alpha);
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw ArgumentError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

template <typename T>
DecodeCache<T> encode_source(const UnifiedTransformer<T>& model,
                             std::span<const TokenId> src,
                             const SpecialTokens& specials,
                             std::size_t max_input_tokens) {
  if (src.empty()) throw ArgumentError("cannot decode an empty source");
  src = src.first(std::min(src.size(), max_input_tokens));
  const std::size_t ls = src.size() + 2;
  std::vector<TokenId> ids;
  ids.reserve(ls);
  ids.push_back(specials.cls);
  ids.insert(ids.end(), src.begin(), src.end());
  ids.push_back(specials.sep);
  std::vector<std::int32_t> pos(ls), seg(ls, 0);
  for (std::size_t i = 0; i < ls; ++i) pos[i] = static_cast<std::int32_t>(i);
  std::vector<std::uint8_t> keep(ls, 1);

  DecodeCache<T> cache = model.empty_cache();
  model.forward_incremental(cache, ids, pos, seg, BoolMatrix(ls, ls, true), keep);
  cache.source_length = ls;
  return cache;
}

template <typename T>
StepOutput<T> decode_step(const UnifiedTransformer<T>& model,
                          DecodeCache<T>& cache, MaskKind method,
                          std::size_t step_index,
                          std::optional<TokenId> prev_token,
                          const SpecialTokens& specials) {
  const std::size_t ls = cache.source_length;
  if (ls == 0) throw StateError("decode cache does not hold a source block");
  if (step_index > 0 && !prev_token)
    throw ArgumentError("step " + std::to_string(step_index) + " needs the previous token");
  const bool causal = method == MaskKind::kCausal;
  // Committed target tokens already fed: causal feeds its token at the same
  // step, the probe methods one step later.
  const std::size_t fed = causal ? step_index : (step_index ? step_index - 1 : 0);
  if (cache.length != ls + fed) {
    throw StateError("decode cache holds " + std::to_string(cache.length) +
                     " positions; step " + std::to_string(step_index) +
                     " expects " + std::to_string(ls + fed));
  }
  const auto at = [&](std::size_t i) { return static_cast<std::int32_t>(ls + i); };
  const std::size_t c = cache.length;

  std::vector<TokenId> ids;
  std::vector<std::int32_t> pos;
  std::vector<std::uint8_t> keep;
  if (causal) {
    ids.push_back(step_index == 0 ? specials.sos : *prev_token);
    pos.push_back(at(step_index));
    keep.push_back(1);
  } else {
    if (step_index > 0) {
      ids.push_back(*prev_token);
      pos.push_back(at(step_index - 1));
      keep.push_back(1);
    }
    ids.push_back(method == MaskKind::kMasked ? specials.mask : specials.pseudo);
    pos.push_back(at(step_index));
    keep.push_back(0);
  }
  const std::size_t k = ids.size();
  BoolMatrix rows(k, c + k, true);
  if (k == 2) rows.set(0, c + 1, false);  // the committed token cannot see the probe
  std::vector<std::int32_t> seg(k, 1);

  Tensor<T> logits = model.forward_incremental(cache, ids, pos, seg, rows, keep);
  const std::size_t v = model.config().vocab_size;
  auto last = logits.data().subspan((k - 1) * v, v);
  StepOutput<T> out;
  out.logits.assign(last.begin(), last.end());
  double mx = -std::numeric_limits<double>::infinity();
  for (T x : last) mx = std::max(mx, double(x));
  double z = 0;
  for (T x : last) z += std::exp(double(x) - mx);
  const double log_z = mx + std::log(z);
  out.log_probs.resize(v);
  for (std::size_t i = 0; i < v; ++i) out.log_probs[i] = double(last[i]) - log_z;
  return out;
}

std::vector<TokenId> never_generated(const SpecialTokens& sp) {
  std::vector<TokenId> out = {sp.pad, sp.cls};
  if (sp.sos != sp.sep) out.push_back(sp.sos);
  out.push_back(sp.mask);
  out.push_back(sp.pseudo);
  return out;
}

namespace {

// Positions run up to source_length + max_output_tokens - 1, so the output
// budget shrinks to what the position table still holds.
DecodeParams fit_positions(DecodeParams params, std::size_t source_length,
                           const ModelConfig& config) {
  params.validate();
  const std::size_t room = config.max_positions > source_length
                               ? config.max_positions - source_length
                               : 0;
  if (room == 0) {
    throw LengthError("source of " + std::to_string(source_length) +
                      " positions leaves no room to decode within max_positions " +
                      std::to_string(config.max_positions));
  }
  params.max_output_tokens = std::min(params.max_output_tokens, room);
  params.min_output_tokens = std::min(params.min_output_tokens, params.max_output_tokens);
  return params;
}

}  // namespace

template <typename T>
std::vector<TokenId> greedy_decode(const UnifiedTransformer<T>& model,
                                   std::span<const TokenId> src,
                                   const SpecialTokens& specials,
                                   const DecodeParams& params) {
  params.validate();
  ModelScorer<T> scorer(model, src, specials, params.method, params.max_input_tokens);
  DecodeParams fitted =
      fit_positions(params, scorer.start().source_length, model.config());
  return greedy_decode_with(scorer, fitted, specials.sep, never_generated(specials));
}

template <typename T>
BeamResult beam_search(const UnifiedTransformer<T>& model,
                       std::span<const TokenId> src,
                       const SpecialTokens& specials,
                       const DecodeParams& params) {
  params.validate();
  ModelScorer<T> scorer(model, src, specials, params.method, params.max_input_tokens);
  DecodeParams fitted =
      fit_positions(params, scorer.start().source_length, model.config());
  return beam_search_with(scorer, fitted, specials.sep, never_generated(specials));
}

template DecodeCache<float> encode_source(const UnifiedTransformer<float>&,
                                          std::span<const TokenId>,
                                          const SpecialTokens&, std::size_t);
template DecodeCache<double> encode_source(const UnifiedTransformer<double>&,
                                           std::span<const TokenId>,
                                           const SpecialTokens&, std::size_t);
template StepOutput<float> decode_step(const UnifiedTransformer<float>&,
                                       DecodeCache<float>&, MaskKind,
                                       std::size_t, std::optional<TokenId>,
                                       const SpecialTokens&);
template StepOutput<double> decode_step(const UnifiedTransformer<double>&,
                                        DecodeCache<double>&, MaskKind,
                                        std::size_t, std::optional<TokenId>,
                                        const SpecialTokens&);
template std::vector<TokenId> greedy_decode(const UnifiedTransformer<float>&,
                                            std::span<const TokenId>,
                                            const SpecialTokens&,
                                            const DecodeParams&);
template std::vector<TokenId> greedy_decode(const UnifiedTransformer<double>&,
                                            std::span<const TokenId>,
                                            const SpecialTokens&,
                                            const DecodeParams&);
template BeamResult beam_search(const UnifiedTransformer<float>&,
                                std::span<const TokenId>, const SpecialTokens&,
                                const DecodeParams&);
template BeamResult beam_search(const UnifiedTransformer<double>&,
                                std::span<const TokenId>, const SpecialTokens&,
                                const DecodeParams&);

}  // namespace unimask
