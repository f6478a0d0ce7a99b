#include "unimask/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>

#include "unimask/data.hpp"
#include "unimask/errors.hpp"

namespace unimask {

namespace {

constexpr std::string_view kMagic("UNIMASK\n", 8);

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_block(std::string& out, std::string_view block) {
  put_le<std::uint64_t>(out, block.size());
  out.append(block);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw TruncatedError("checkpoint truncated while reading " + std::string(what) +
                           " (needs " + std::to_string(n) + " bytes at offset " +
                           std::to_string(pos_) + ", file has " +
                           std::to_string(bytes_.size()) + ")");
    }
    std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  template <typename U>
  U le(const char* what) {
    std::string_view s = take(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= U(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }

  std::string_view block(const char* what) {
    return take(le<std::uint64_t>(what), what);
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace

std::string config_to_text(const ModelConfig& c, MaskKind method) {
  std::string s;
  auto line = [&](std::string_view k, const std::string& v) {
    s.append(k).append(" = ").append(v).push_back('\n');
  };
  line("method", std::string(to_string(method)));
  line("vocab_size", std::to_string(c.vocab_size));
  line("d_model", std::to_string(c.d_model));
  line("n_layers", std::to_string(c.n_layers));
  line("n_heads", std::to_string(c.n_heads));
  line("d_ff", std::to_string(c.d_ff));
  line("max_positions", std::to_string(c.max_positions));
  line("dropout", format_double(c.dropout));
  line("use_segment_embeddings", c.use_segment_embeddings ? "true" : "false");
  line("tie_lm_head", c.tie_lm_head ? "true" : "false");
  return s;
}

std::string serialize_checkpoint(const UnifiedTransformer<float>& model,
                                 const Vocab& vocab, MaskKind method) {
  if (vocab.size() != model.config().vocab_size) {
    throw ArgumentError("vocabulary of " + std::to_string(vocab.size()) +
                        " tokens does not match the model's " +
                        std::to_string(model.config().vocab_size));
  }
  std::string out(kMagic);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_block(out, config_to_text(model.config(), method));
  put_block(out, vocab.to_text());
  put_le<std::uint64_t>(out, model.parameter_count());
  for (const auto& p : model.named_parameters())
    for (float v : p.tensor.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (bytes.size() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic)
    throw MagicError("not a checkpoint (bad magic bytes)");
  r.take(kMagic.size(), "magic");
  const auto version = r.le<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint format version " + std::to_string(version) +
                       ", expected " + std::to_string(kCheckpointVersion));
  }
  const std::string_view config_text = r.block("config");
  const std::string_view vocab_text = r.block("vocabulary");

  Settings settings;
  try {
    settings = parse_settings(config_text);
  } catch (const DataError& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  }
  Checkpoint ck;
  ModelConfig config;
  auto take = [&](const char* key) {
    auto it = settings.find(key);
    if (it == settings.end())
      throw CheckpointError(std::string("checkpoint config lacks '") + key + "'");
    std::string v = it->second;
    settings.erase(it);
    return v;
  };
  try {
    ck.method = parse_mask_kind(take("method"));
    const std::string vocab_size = take("vocab_size");
    config.vocab_size = std::stoull(vocab_size);
    config.dropout = std::stod(take("dropout"));
    TrainParams unused;
    apply_settings(settings, config, unused);
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  }

  try {
    ck.vocab = Vocab::from_text(vocab_text);
  } catch (const Error& e) {
    throw CheckpointError(std::string("checkpoint vocabulary: ") + e.what());
  }
  if (ck.vocab.size() != config.vocab_size) {
    throw CheckpointError("checkpoint vocabulary has " + std::to_string(ck.vocab.size()) +
                          " tokens, config says " + std::to_string(config.vocab_size));
  }
  try {
    ck.model = init_model<float>(config, 0);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  }

  const auto count = r.le<std::uint64_t>("parameter count");
  if (count != ck.model.parameter_count()) {
    throw CheckpointError("checkpoint stores " + std::to_string(count) +
                          " parameter values, config implies " +
                          std::to_string(ck.model.parameter_count()));
  }
  for (auto& p : ck.model.named_parameters()) {
    auto t = p.tensor;
    for (float& v : t.data()) v = std::bit_cast<float>(r.le<std::uint32_t>("parameters"));
  }
  if (r.remaining() != 0) {
    throw CheckpointError("checkpoint has " + std::to_string(r.remaining()) +
                          " trailing bytes");
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path,
                     const UnifiedTransformer<float>& model, const Vocab& vocab,
                     MaskKind method) {
  const std::string bytes = serialize_checkpoint(model, vocab, method);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path));
}

}  // namespace unimask
