#include "unimask/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "unimask/errors.hpp"

namespace unimask {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<ExampleRecord> parse_dataset(std::string_view text) {
  std::vector<ExampleRecord> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view() : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    const std::string where = "line " + std::to_string(line_no);
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw DataError(where + ": not valid JSON");
    if (!j.is_object()) throw SchemaError(where + ": expected an object");
    ExampleRecord rec;
    for (auto [key, field] : {std::pair{"src", &rec.src}, std::pair{"tgt", &rec.tgt}}) {
      auto it = j.find(key);
      if (it == j.end()) throw SchemaError(where + ": missing field '" + key + "'");
      if (!it->is_string())
        throw SchemaError(where + ": field '" + key + "' must be a string");
      *field = it->get<std::string>();
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<ExampleRecord> load_dataset(const std::filesystem::path& path) {
  try {
    return parse_dataset(read_file(path));
  } catch (const SchemaError& e) {
    throw SchemaError(path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void save_dataset(const std::filesystem::path& path,
                  std::span<const ExampleRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : records)
    out << nlohmann::json{{"src", r.src}, {"tgt", r.tgt}}.dump() << '\n';
}

std::vector<EncodedExample> encode_dataset(std::span<const ExampleRecord> records,
                                           const Vocab& vocab) {
  std::vector<EncodedExample> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    EncodedExample e{vocab.encode(records[i].src), vocab.encode(records[i].tgt)};
    if (e.src.empty())
      throw DataError("record " + std::to_string(i + 1) + " has an empty source");
    out.push_back(std::move(e));
  }
  return out;
}

SynthTask parse_synth_task(std::string_view name) {
  if (name == "copy") return SynthTask::kCopy;
  if (name == "reverse") return SynthTask::kReverse;
  if (name == "extract") return SynthTask::kExtract;
  throw ArgumentError("unknown task '" + std::string(name) +
                      "' (expected copy, reverse or extract)");
}

std::string_view to_string(SynthTask task) {
  switch (task) {
    case SynthTask::kCopy: return "copy";
    case SynthTask::kReverse: return "reverse";
    case SynthTask::kExtract: return "extract";
  }
  return "?";
}

std::vector<std::string> apply_task(SynthTask task,
                                    std::span<const std::string> src) {
  std::vector<std::string> out;
  switch (task) {
    case SynthTask::kCopy:
      out.assign(src.begin(), src.end());
      break;
    case SynthTask::kReverse:
      out.assign(src.rbegin(), src.rend());
      break;
    case SynthTask::kExtract:
      for (std::size_t i = 0; i < src.size(); i += 2) out.push_back(src[i]);
      break;
  }
  return out;
}

namespace {

std::string join(std::span<const std::string> words) {
  std::string s;
  for (const auto& w : words) {
    if (!s.empty()) s += ' ';
    s += w;
  }
  return s;
}

}  // namespace

std::vector<ExampleRecord> synth_generate(SynthTask task, std::size_t n,
                                          std::size_t vocab_size,
                                          std::size_t min_len,
                                          std::size_t max_len,
                                          std::uint64_t seed, double noise) {
  if (vocab_size < 4) throw ArgumentError("synthetic vocab_size must be >= 4");
  if (min_len == 0 || min_len > max_len)
    throw ArgumentError("synthetic lengths need 1 <= min_len <= max_len");
  if (!(noise >= 0 && noise <= 1)) throw ArgumentError("noise must be in [0, 1]");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> word(0, vocab_size - 1);
  std::uniform_int_distribution<std::size_t> length(min_len, max_len);
  std::bernoulli_distribution flip(noise);
  auto draw = [&] { return "w" + std::to_string(word(rng)); };

  std::vector<ExampleRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::string> src(length(rng));
    for (auto& w : src) w = draw();
    std::vector<std::string> tgt = apply_task(task, src);
    if (noise > 0)
      for (auto& w : tgt)
        if (flip(rng)) w = draw();
    out.push_back({join(src), join(tgt)});
  }
  return out;
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& value) {
  N out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end)
    throw ConfigError("setting '" + key + "': cannot parse '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("setting '" + key + "': expected true or false, got '" + value + "'");
}

}  // namespace

Settings parse_settings(std::string_view text) {
  Settings out;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos)
      line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "line " + std::to_string(line_no);
    if (eq == std::string_view::npos) throw DataError(where + ": expected key = value");
    std::string key(trim(line.substr(0, eq)));
    std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw DataError(where + ": empty key");
    if (!out.emplace(key, value).second)
      throw DataError(where + ": key '" + key + "' repeated");
  }
  return out;
}

Settings load_settings(const std::filesystem::path& path) {
  try {
    return parse_settings(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void apply_settings(const Settings& settings, ModelConfig& model,
                    TrainParams& train) {
  for (const auto& [key, value] : settings) {
    if (key == "d_model") model.d_model = parse_number<std::size_t>(key, value);
    else if (key == "n_layers") model.n_layers = parse_number<std::size_t>(key, value);
    else if (key == "n_heads") model.n_heads = parse_number<std::size_t>(key, value);
    else if (key == "d_ff") model.d_ff = parse_number<std::size_t>(key, value);
    else if (key == "max_positions") model.max_positions = parse_number<std::size_t>(key, value);
    else if (key == "use_segment_embeddings") model.use_segment_embeddings = parse_bool(key, value);
    else if (key == "tie_lm_head") model.tie_lm_head = parse_bool(key, value);
    else if (key == "method") {
      try {
        train.method = parse_mask_kind(value);
      } catch (const Error& e) {
        throw ConfigError("setting 'method': " + std::string(e.what()));
      }
    }
    else if (key == "batch_size") train.batch_size = parse_number<std::size_t>(key, value);
    else if (key == "lr") train.learning_rate = parse_number<double>(key, value);
    else if (key == "steps") train.total_steps = parse_number<std::int64_t>(key, value);
    else if (key == "warmup") train.warmup_steps = parse_number<std::int64_t>(key, value);
    else if (key == "label_smoothing") train.label_smoothing = parse_number<double>(key, value);
    else if (key == "mask_prob") train.mask_prob = parse_number<double>(key, value);
    else if (key == "dropout") train.dropout = parse_number<double>(key, value);
    else if (key == "weight_decay") train.weight_decay = parse_number<double>(key, value);
    else if (key == "clip_norm") train.clip_norm = parse_number<double>(key, value);
    else if (key == "seed") train.seed = parse_number<std::uint64_t>(key, value);
    else throw ConfigError("unknown setting '" + key + "'");
  }
}

}  // namespace unimask
