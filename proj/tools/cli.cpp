#include "unimask/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "unimask/checkpoint.hpp"
#include "unimask/data.hpp"
#include "unimask/decode.hpp"
#include "unimask/errors.hpp"
#include "unimask/finetune.hpp"
#include "unimask/metrics.hpp"

namespace unimask {

namespace {

namespace fs = std::filesystem;

std::vector<std::string> read_lines(const fs::path& path) {
  const std::string text = read_file(path);
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

struct SynthArgs {
  std::string task, out;
  std::size_t n = 1000, vocab_size = 16, min_len = 5, max_len = 10;
  std::uint64_t seed = 0;
  double noise = 0.0;
};

void add_synth(CLI::App& app, SynthArgs& a) {
  auto* c = app.add_subcommand("synth", "Write a synthetic copy/reverse/extract dataset");
  c->add_option("--task", a.task, "copy, reverse or extract")->required();
  c->add_option("--n", a.n, "Number of records")->capture_default_str();
  c->add_option("--vocab-size", a.vocab_size, "Distinct source words")->capture_default_str();
  c->add_option("--min-len", a.min_len)->capture_default_str();
  c->add_option("--max-len", a.max_len)->capture_default_str();
  c->add_option("--seed", a.seed)->capture_default_str();
  c->add_option("--noise", a.noise, "Per-token target corruption rate")->capture_default_str();
  c->add_option("--out", a.out, "Output .jsonl path")->required();
}

int run_synth(const SynthArgs& a, std::ostream& out) {
  auto records = synth_generate(parse_synth_task(a.task), a.n, a.vocab_size, a.min_len,
                                a.max_len, a.seed, a.noise);
  save_dataset(a.out, records);
  out << "wrote " << records.size() << " records to " << a.out << '\n';
  return kExitOk;
}

struct TrainArgs {
  std::string method, data, vocab, config, out, log;
  std::optional<std::size_t> vocab_size, batch_size;
  std::optional<double> lr, mask_prob, label_smoothing, dropout;
  std::optional<std::int64_t> steps, warmup;
  std::optional<std::uint64_t> seed;
  std::size_t log_every = 100;
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto* c = app.add_subcommand("train", "Fine-tune a model from scratch on a dataset");
  c->add_option("--method", a.method, "causal, masked or pseudo");
  c->add_option("--data", a.data, "Training .jsonl")->required();
  c->add_option("--vocab", a.vocab, "Vocabulary file; built and written here if absent");
  c->add_option("--vocab-size", a.vocab_size, "Cap when building the vocabulary");
  c->add_option("--config", a.config, "key=value settings; flags win");
  c->add_option("--lr", a.lr);
  c->add_option("--steps", a.steps);
  c->add_option("--warmup", a.warmup);
  c->add_option("--batch-size", a.batch_size);
  c->add_option("--mask-prob", a.mask_prob, "Only used by the masked method");
  c->add_option("--label-smoothing", a.label_smoothing);
  c->add_option("--dropout", a.dropout);
  c->add_option("--seed", a.seed);
  c->add_option("--out", a.out, "Checkpoint path")->required();
  c->add_option("--log", a.log, "Write one 'step loss lr' line per update here");
  c->add_option("--log-every", a.log_every, "Progress interval on stderr (0 = off)")
      ->capture_default_str();
}

int run_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  ModelConfig model;
  TrainParams params;
  if (!a.config.empty()) apply_settings(load_settings(a.config), model, params);
  if (!a.method.empty()) params.method = parse_mask_kind(a.method);
  if (a.lr) params.learning_rate = *a.lr;
  if (a.steps) params.total_steps = *a.steps;
  if (a.warmup) params.warmup_steps = *a.warmup;
  if (a.batch_size) params.batch_size = *a.batch_size;
  if (a.mask_prob) params.mask_prob = *a.mask_prob;
  if (a.label_smoothing) params.label_smoothing = *a.label_smoothing;
  if (a.dropout) params.dropout = *a.dropout;
  if (a.seed) params.seed = *a.seed;
  if (a.mask_prob && params.method != MaskKind::kMasked)
    err << "warning: --mask-prob ignored for method " << to_string(params.method) << '\n';

  const auto records = load_dataset(a.data);
  Vocab vocab;
  if (!a.vocab.empty() && fs::exists(a.vocab)) {
    vocab = Vocab::load(a.vocab);
  } else {
    std::vector<std::string> texts;
    for (const auto& r : records) {
      texts.push_back(r.src);
      texts.push_back(r.tgt);
    }
    vocab = Vocab::build(texts, a.vocab_size);
    if (!a.vocab.empty()) vocab.save(a.vocab);
  }
  model.vocab_size = vocab.size();
  const auto data = encode_dataset(records, vocab);

  std::ofstream log_file;
  if (!a.log.empty()) log_file = open_out(a.log);
  auto progress = [&](const TrainRecord& r) {
    if (a.log_every && (r.step % std::int64_t(a.log_every) == 0 || r.step == params.total_steps))
      err << "step " << r.step << " loss " << r.loss << " lr " << r.lr << '\n';
  };
  TrainResult result = train(data, model, params, vocab.specials(),
                             a.log.empty() ? nullptr : &log_file, progress);
  save_checkpoint(a.out, result.model, vocab, params.method);
  out << "saved " << a.out << " (" << result.model.parameter_count() << " parameters, "
      << to_string(params.method) << ", " << params.total_steps << " steps";
  if (!result.log.empty()) out << ", final loss " << result.log.back().loss;
  out << ")\n";
  return kExitOk;
}

struct GenerateArgs {
  std::string checkpoint, input, output, method, preset, format;
  std::optional<std::size_t> beam_size, min_len, max_len, max_input_tokens;
  std::optional<double> length_penalty;
};

void add_generate(CLI::App& app, GenerateArgs& a) {
  auto* c = app.add_subcommand("generate", "Decode one output line per input source");
  c->add_option("--checkpoint", a.checkpoint)->required();
  c->add_option("--input", a.input, "Sources, one per line (or .jsonl records)")->required();
  c->add_option("--output", a.output, "Defaults to stdout");
  c->add_option("--method", a.method, "Override the checkpoint's method");
  c->add_option("--preset", a.preset, "cnndm, xsum, squad, webqa or gigaword");
  c->add_option("--format", a.format, "text or jsonl; default from the extension");
  c->add_option("--beam-size", a.beam_size);
  c->add_option("--length-penalty", a.length_penalty);
  c->add_option("--min-len", a.min_len);
  c->add_option("--max-len", a.max_len);
  c->add_option("--max-input-tokens", a.max_input_tokens);
}

int run_generate(const GenerateArgs& a, std::ostream& out) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  DecodeParams params = a.preset.empty() ? DecodeParams{} : DecodeParams::preset(a.preset);
  params.method = a.method.empty() ? ck.method : parse_mask_kind(a.method);
  if (a.beam_size) params.beam_size = *a.beam_size;
  if (a.length_penalty) params.length_penalty_alpha = *a.length_penalty;
  if (a.min_len) params.min_output_tokens = *a.min_len;
  if (a.max_len) params.max_output_tokens = *a.max_len;
  if (a.max_input_tokens) params.max_input_tokens = *a.max_input_tokens;
  params.validate();

  const std::string_view probe = params.method == MaskKind::kMasked ? "[M]"
                                 : params.method == MaskKind::kPseudoMasked ? "[P]"
                                                                            : "[SOS]";
  if (!ck.vocab.contains(probe)) {
    throw DataError("method " + std::string(to_string(params.method)) +
                    " needs " + std::string(probe) + ", which the vocabulary lacks");
  }

  std::string format = a.format;
  if (format.empty()) format = fs::path(a.input).extension() == ".jsonl" ? "jsonl" : "text";
  std::vector<std::string> sources;
  if (format == "jsonl") {
    for (auto& r : load_dataset(a.input)) sources.push_back(std::move(r.src));
  } else if (format == "text") {
    sources = read_lines(a.input);
  } else {
    throw ArgumentError("--format must be text or jsonl");
  }

  std::ofstream file;
  if (!a.output.empty()) file = open_out(a.output);
  std::ostream& sink = a.output.empty() ? out : file;
  const SpecialTokens specials = ck.vocab.specials();
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const std::vector<TokenId> src = ck.vocab.encode(sources[i]);
    if (src.empty()) throw DataError("input line " + std::to_string(i + 1) + " is empty");
    const std::vector<TokenId> ids =
        params.beam_size == 1 ? greedy_decode(ck.model, src, specials, params)
                              : beam_search(ck.model, src, specials, params).best;
    sink << ck.vocab.decode(ids) << '\n';
  }
  return kExitOk;
}

struct EvalArgs {
  std::string metric, hyp, ref;
};

void add_eval(CLI::App& app, EvalArgs& a) {
  auto* c = app.add_subcommand("eval", "Score hypothesis lines against reference lines");
  c->add_option("--metric", a.metric, "rouge or bleu")
      ->required()
      ->check(CLI::IsMember({"rouge", "bleu"}));
  c->add_option("--hyp", a.hyp)->required();
  c->add_option("--ref", a.ref)->required();
}

int run_eval(const EvalArgs& a, std::ostream& out) {
  const auto hyp = read_lines(a.hyp), ref = read_lines(a.ref);
  if (hyp.size() != ref.size()) {
    throw DataError("hypothesis file has " + std::to_string(hyp.size()) +
                    " lines but reference file has " + std::to_string(ref.size()));
  }
  if (hyp.empty()) throw DataError("nothing to score: both files are empty");
  std::vector<ScoredPair> pairs;
  for (std::size_t i = 0; i < hyp.size(); ++i) pairs.push_back({tokenize(hyp[i]), tokenize(ref[i])});

  out << std::fixed << std::setprecision(4);
  if (a.metric == "bleu") {
    out << "BLEU-4 " << bleu4(pairs) << '\n';
    return kExitOk;
  }
  double r1 = 0, r2 = 0, rl = 0;
  for (const auto& p : pairs) {
    r1 += rouge_n(p.candidate, p.reference, 1).f1;
    r2 += rouge_n(p.candidate, p.reference, 2).f1;
    rl += rouge_l(p.candidate, p.reference).f1;
  }
  const double n = double(pairs.size());
  out << "ROUGE-1 F1 " << r1 / n << '\n'
      << "ROUGE-2 F1 " << r2 / n << '\n'
      << "ROUGE-L F1 " << rl / n << '\n';
  return kExitOk;
}

struct InspectArgs {
  std::string method, src, tgt;
  std::uint64_t seed = 0;
  double mask_prob = 0.5;
};

void add_inspect(CLI::App& app, InspectArgs& a) {
  auto* c = app.add_subcommand("inspect-pack", "Show the packed rows and attention mask");
  c->add_option("--method", a.method, "causal, masked or pseudo")->required();
  c->add_option("--src", a.src)->required();
  c->add_option("--tgt", a.tgt)->capture_default_str();
  c->add_option("--seed", a.seed, "Mask draw for the masked method")->capture_default_str();
  c->add_option("--mask-prob", a.mask_prob)->capture_default_str();
}

int run_inspect(const InspectArgs& a, std::ostream& out) {
  const MaskKind kind = parse_mask_kind(a.method);
  const std::vector<std::string> texts = {a.src, a.tgt};
  const Vocab vocab = Vocab::build(texts);
  const auto src = vocab.encode(a.src), tgt = vocab.encode(a.tgt);
  std::mt19937_64 rng(a.seed);
  const PackedBatch p = pack(kind, src, tgt, vocab.specials(), a.mask_prob, rng);

  auto row = [&](const char* label, auto&& cell) {
    out << std::left << std::setw(11) << label;
    for (std::size_t i = 0; i < p.size(); ++i) out << (i ? " " : "") << cell(i);
    out << '\n';
  };
  row("tokens", [&](std::size_t i) { return vocab.token(p.token_ids[i]); });
  row("positions", [&](std::size_t i) { return std::to_string(p.position_ids[i]); });
  row("segments", [&](std::size_t i) { return std::to_string(p.segment_ids[i]); });
  out << std::setw(11) << "predict";
  for (std::size_t i = 0; i < p.labels.size(); ++i) {
    out << (i ? " " : "") << p.prediction_positions[i] << ':' << vocab.token(p.labels[i]);
  }
  out << "\nmask (row = query, column = key)\n";
  for (std::size_t r = 0; r < p.size(); ++r) {
    for (std::size_t c = 0; c < p.size(); ++c) out << (p.attention_mask(r, c) ? '#' : '.');
    out << "  " << r << ' ' << vocab.token(p.token_ids[r]) << '\n';
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Unified-Transformer sequence-to-sequence fine-tuning"};
  app.require_subcommand(1);
  SynthArgs synth;
  TrainArgs train_args;
  GenerateArgs generate;
  EvalArgs eval;
  InspectArgs inspect;
  add_synth(app, synth);
  add_train(app, train_args);
  add_generate(app, generate);
  add_eval(app, eval);
  add_inspect(app, inspect);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (app.got_subcommand("synth")) return run_synth(synth, out);
    if (app.got_subcommand("train")) return run_train(train_args, out, err);
    if (app.got_subcommand("generate")) return run_generate(generate, out);
    if (app.got_subcommand("eval")) return run_eval(eval, out);
    if (app.got_subcommand("inspect-pack")) return run_inspect(inspect, out);
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const LengthError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace unimask
