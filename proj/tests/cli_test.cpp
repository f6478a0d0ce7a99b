#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>
#include <fstream>
#include <sstream>

#include "unimask/checkpoint.hpp"
#include "unimask/cli.hpp"
#include "unimask/data.hpp"
#include "unimask/decode.hpp"
#include "unimask/errors.hpp"

namespace unimask {
namespace {

namespace fs = std::filesystem;

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() /
           (std::string("unimask_") + info->test_suite_name() + "_" + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  void write(const std::string& name, const std::string& text) const {
    std::ofstream(dir_ / name, std::ios::binary) << text;
  }

  struct Run {
    int code;
    std::string out, err;
  };
  Run run(std::vector<std::string> args) const {
    args.insert(args.begin(), "unimask");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(int(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
  }

  // A tiny checkpoint trained for a few steps on a copy set.
  std::string small_checkpoint(const std::string& name = "m.ckpt") {
    write("tiny.cfg", "d_model = 16\nn_layers = 1\nn_heads = 2\nd_ff = 32\nmax_positions = 40\n");
    save_dataset(path("train.jsonl"),
                 synth_generate(SynthTask::kCopy, 20, 6, 2, 4, 1));
    Run r = run({"train", "--method", "pseudo", "--data", path("train.jsonl"),
                 "--config", path("tiny.cfg"), "--steps", "4", "--warmup", "1",
                 "--batch-size", "4", "--out", path(name), "--log-every", "0"});
    EXPECT_EQ(r.code, 0) << r.err;
    return path(name);
  }

  fs::path dir_;
};

using DatasetTest = TempDir;

TEST_F(DatasetTest, EmptyFileGivesNoRecords) {
  write("e.jsonl", "");
  EXPECT_TRUE(load_dataset(path("e.jsonl")).empty());
}

TEST_F(DatasetTest, RecordsInFileOrder) {
  write("d.jsonl", "{\"src\": \"a b\", \"tgt\": \"c\"}\n{\"tgt\": \"e\", \"src\": \"d\\tx\"}\n");
  auto r = load_dataset(path("d.jsonl"));
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0], (ExampleRecord{"a b", "c"}));
  EXPECT_EQ(r[1], (ExampleRecord{"d\tx", "e"}));
}

TEST_F(DatasetTest, MissingFieldNamesTheLine) {
  write("d.jsonl",
        "{\"src\": \"a\", \"tgt\": \"b\"}\n{\"src\": \"a\", \"tgt\": \"b\"}\n{\"src\": \"a\"}\n");
  try {
    load_dataset(path("d.jsonl"));
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("tgt"), std::string::npos) << e.what();
  }
}

TEST(ParseDatasetTest, MalformedAndNullFields) {
  try {
    parse_dataset("{\"src\": \"a\", \"tgt\": \"b\"}\n{oops\n");
    FAIL() << "expected DataError";
  } catch (const SchemaError&) {
    FAIL() << "malformed JSON is not a schema error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(parse_dataset("{\"src\": null, \"tgt\": \"b\"}"), SchemaError);
  EXPECT_THROW(parse_dataset("[1, 2]"), SchemaError);
  EXPECT_EQ(parse_dataset("\n{\"src\": \"a\", \"tgt\": \"\"}\r\n\n").size(), 1u);
}

TEST(EncodeDatasetTest, EmptySourceRejected) {
  Vocab v = Vocab::build(std::vector<std::string>{"a b"});
  std::vector<ExampleRecord> recs = {{"a", "b"}, {"  ", "a"}};
  EXPECT_THROW(encode_dataset(recs, v), DataError);
}

std::vector<std::string> words(std::string_view s) { return tokenize(s); }

TEST(SynthTest, TaskRules) {
  EXPECT_EQ(apply_task(SynthTask::kCopy, words("a b c")), words("a b c"));
  EXPECT_EQ(apply_task(SynthTask::kReverse, words("a b c")), words("c b a"));
  EXPECT_EQ(apply_task(SynthTask::kExtract, words("a b c d e")), words("a c e"));
  EXPECT_EQ(parse_synth_task("reverse"), SynthTask::kReverse);
  EXPECT_THROW(parse_synth_task("sort"), ArgumentError);
}

TEST(SynthTest, DeterministicAndWithinBounds) {
  auto a = synth_generate(SynthTask::kReverse, 300, 16, 5, 10, 7);
  EXPECT_EQ(a, synth_generate(SynthTask::kReverse, 300, 16, 5, 10, 7));
  EXPECT_NE(a, synth_generate(SynthTask::kReverse, 300, 16, 5, 10, 8));
  std::set<std::string> seen;
  for (const auto& r : a) {
    auto s = words(r.src);
    EXPECT_GE(s.size(), 5u);
    EXPECT_LE(s.size(), 10u);
    EXPECT_EQ(words(r.tgt), apply_task(SynthTask::kReverse, s));
    seen.insert(s.begin(), s.end());
  }
  EXPECT_EQ(seen.size(), 16u);
}

TEST(SynthTest, NoiseCorruptsAboutTheRequestedShare) {
  auto clean = synth_generate(SynthTask::kCopy, 2000, 16, 5, 10, 3);
  auto noisy = synth_generate(SynthTask::kCopy, 2000, 16, 5, 10, 3, 0.1);
  std::size_t changed = 0, total = 0;
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    auto s = words(noisy[i].src), t = words(noisy[i].tgt);
    ASSERT_EQ(s.size(), t.size());
    for (std::size_t j = 0; j < s.size(); ++j) changed += s[j] != t[j];
    total += s.size();
  }
  // A replacement draws the original word 1/16 of the time.
  EXPECT_NEAR(double(changed) / double(total), 0.1 * 15.0 / 16.0, 0.01);
  EXPECT_EQ(clean.size(), noisy.size());
}

TEST(SynthTest, BadArguments) {
  EXPECT_THROW(synth_generate(SynthTask::kCopy, 1, 3, 1, 2, 0), ArgumentError);
  EXPECT_THROW(synth_generate(SynthTask::kCopy, 1, 8, 3, 2, 0), ArgumentError);
  EXPECT_THROW(synth_generate(SynthTask::kCopy, 1, 8, 1, 2, 0, 1.5), ArgumentError);
}

TEST(SettingsTest, ParseAndApply) {
  Settings s = parse_settings("# model\nd_model = 32\n n_heads=2 # inline\n\nlr = 0.003\nmethod = causal\n");
  EXPECT_EQ(s.at("d_model"), "32");
  EXPECT_EQ(s.at("n_heads"), "2");
  ModelConfig m;
  TrainParams t;
  apply_settings(s, m, t);
  EXPECT_EQ(m.d_model, 32u);
  EXPECT_EQ(m.n_heads, 2u);
  EXPECT_EQ(t.learning_rate, 0.003);
  EXPECT_EQ(t.method, MaskKind::kCausal);

  EXPECT_THROW(parse_settings("a = 1\nno equals sign\n"), DataError);
  EXPECT_THROW(parse_settings("a = 1\na = 2\n"), DataError);
  EXPECT_THROW(apply_settings({{"colour", "red"}}, m, t), ConfigError);
  EXPECT_THROW(apply_settings({{"d_model", "big"}}, m, t), ConfigError);
  EXPECT_THROW(apply_settings({{"tie_lm_head", "maybe"}}, m, t), ConfigError);
}

using CheckpointTest = TempDir;

TEST_F(CheckpointTest, RoundTripIsByteIdentical) {
  ModelConfig c;
  c.vocab_size = 9;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_positions = 20;
  c.tie_lm_head = false;
  c.dropout = 0.125;
  Vocab v = Vocab::build(std::vector<std::string>{"x y"});
  auto m = init_model<float>(c, 5);
  save_checkpoint(path("a.ckpt"), m, v, MaskKind::kMasked);
  Checkpoint ck = load_checkpoint(path("a.ckpt"));
  EXPECT_EQ(ck.method, MaskKind::kMasked);
  EXPECT_EQ(ck.model.config(), c);
  EXPECT_EQ(ck.vocab.tokens(), v.tokens());
  auto a = m.named_parameters(), b = ck.model.named_parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    auto x = a[i].tensor.data(), y = b[i].tensor.data();
    EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin())) << a[i].name;
  }
  save_checkpoint(path("b.ckpt"), ck.model, ck.vocab, ck.method);
  EXPECT_EQ(read_file(path("a.ckpt")), read_file(path("b.ckpt")));
}

TEST_F(CheckpointTest, CorruptionsHaveDistinctErrors) {
  ModelConfig c;
  c.vocab_size = 8;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 1;
  c.d_ff = 8;
  c.max_positions = 10;
  Vocab v = Vocab::build(std::vector<std::string>{"x"});
  const std::string good = serialize_checkpoint(init_model<float>(c, 1), v, MaskKind::kCausal);
  EXPECT_NO_THROW(deserialize_checkpoint(good));

  std::string bad = good;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad), MagicError);
  bad = good;
  bad[8] = 2;
  EXPECT_THROW(deserialize_checkpoint(bad), VersionError);
  EXPECT_THROW(deserialize_checkpoint(good.substr(0, good.size() - 1)), TruncatedError);
  EXPECT_THROW(deserialize_checkpoint(good.substr(0, 20)), TruncatedError);
  EXPECT_THROW(deserialize_checkpoint(good + "x"), CheckpointError);
  EXPECT_THROW(deserialize_checkpoint(""), MagicError);
  try {
    deserialize_checkpoint(good + "x");
  } catch (const TruncatedError&) {
    FAIL() << "trailing bytes are not a truncation";
  } catch (const CheckpointError&) {
  }
}

using CliTest = TempDir;

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(run({}).code, kExitUsage);
  EXPECT_EQ(run({"train", "--out", path("x")}).code, kExitUsage);  // no --data
  write("d.jsonl", "{\"src\": \"a\", \"tgt\": \"b\"}\n");
  EXPECT_EQ(run({"train", "--method", "bogus", "--data", path("d.jsonl"), "--out", path("x")}).code,
            kExitUsage);
  EXPECT_EQ(run({"eval", "--metric", "meteor", "--hyp", "a", "--ref", "b"}).code, kExitUsage);
  EXPECT_EQ(run({"--help"}).code, kExitOk);
}

TEST_F(CliTest, DataAndNumericErrors) {
  EXPECT_EQ(run({"train", "--data", path("missing.jsonl"), "--out", path("x")}).code, kExitData);
  write("d.jsonl", "{\"src\": \"a\"}\n");
  Run r = run({"train", "--data", path("d.jsonl"), "--out", path("x")});
  EXPECT_EQ(r.code, kExitData);
  EXPECT_NE(r.err.find("line 1"), std::string::npos);

  write("tiny.cfg", "d_model = 8\nn_layers = 1\nn_heads = 1\nd_ff = 8\nclip_norm = 1e30\n");
  save_dataset(path("t.jsonl"), synth_generate(SynthTask::kCopy, 8, 5, 2, 3, 0));
  r = run({"train", "--data", path("t.jsonl"), "--config", path("tiny.cfg"), "--steps", "20",
           "--warmup", "0", "--lr", "1e38", "--out", path("x"), "--log-every", "0"});
  EXPECT_EQ(r.code, kExitNumeric) << r.err;
  EXPECT_NE(r.err.find("non-finite loss"), std::string::npos) << r.err;
}

TEST_F(CliTest, TrainFlagsOverrideConfigAndWarnAboutMaskProb) {
  write("c.cfg", "d_model = 8\nn_layers = 1\nn_heads = 1\nd_ff = 8\nsteps = 9\nwarmup = 1\nbatch_size = 2\n");
  save_dataset(path("t.jsonl"), synth_generate(SynthTask::kCopy, 6, 5, 2, 3, 0));
  Run r = run({"train", "--method", "pseudo", "--data", path("t.jsonl"), "--config", path("c.cfg"),
               "--steps", "3", "--mask-prob", "0.4", "--out", path("m.ckpt"), "--log",
               path("log.txt"), "--vocab", path("vocab.txt"), "--log-every", "0"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("--mask-prob ignored"), std::string::npos);
  std::istringstream log(read_file(path("log.txt")));
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) ++lines;
  EXPECT_EQ(lines, 3);
  EXPECT_TRUE(fs::exists(path("vocab.txt")));
  Checkpoint ck = load_checkpoint(path("m.ckpt"));
  EXPECT_EQ(ck.method, MaskKind::kPseudoMasked);
  EXPECT_EQ(ck.model.config().d_model, 8u);
  EXPECT_EQ(ck.vocab.tokens(), Vocab::load(path("vocab.txt")).tokens());
}

TEST_F(CliTest, TrainingIsDeterministic) {
  const std::string a = small_checkpoint("a.ckpt");
  const std::string b = small_checkpoint("b.ckpt");
  EXPECT_EQ(read_file(a), read_file(b));
}

TEST_F(CliTest, GenerateMatchesLibraryAndHonoursFlags) {
  const std::string ck_path = small_checkpoint();
  write("in.txt", "w1 w2 w3\nw4\nw0 w0 w5 w1\n");
  Run greedy = run({"generate", "--checkpoint", ck_path, "--input", path("in.txt")});
  ASSERT_EQ(greedy.code, 0) << greedy.err;
  Run beam1 = run({"generate", "--checkpoint", ck_path, "--input", path("in.txt"),
                   "--beam-size", "1", "--length-penalty", "1.0"});
  EXPECT_EQ(beam1.out, greedy.out);

  Checkpoint ck = load_checkpoint(ck_path);
  std::string expect;
  for (std::string src : {"w1 w2 w3", "w4", "w0 w0 w5 w1"}) {
    DecodeParams p;
    p.method = ck.method;
    expect += ck.vocab.decode(greedy_decode(ck.model, ck.vocab.encode(src), ck.vocab.specials(), p)) + "\n";
  }
  EXPECT_EQ(greedy.out, expect);

  Run min5 = run({"generate", "--checkpoint", ck_path, "--input", path("in.txt"), "--min-len",
                  "5", "--beam-size", "3", "--output", path("out.txt")});
  ASSERT_EQ(min5.code, 0) << min5.err;
  std::istringstream lines(read_file(path("out.txt")));
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    ++n;
    EXPECT_GE(tokenize(line).size(), 5u) << line;
  }
  EXPECT_EQ(n, 3);

  Run again = run({"generate", "--checkpoint", ck_path, "--input", path("in.txt")});
  EXPECT_EQ(again.out, greedy.out);
}

TEST_F(CliTest, GenerateEdgeCases) {
  const std::string ck_path = small_checkpoint();
  write("empty.txt", "");
  Run r = run({"generate", "--checkpoint", ck_path, "--input", path("empty.txt"), "--output",
               path("o.txt")});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_file(path("o.txt")), "");

  save_dataset(path("in.jsonl"), synth_generate(SynthTask::kCopy, 2, 6, 2, 3, 5));
  r = run({"generate", "--checkpoint", ck_path, "--input", path("in.jsonl"), "--method", "causal"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 2);

  write("blank.txt", "w1\n\n");
  EXPECT_EQ(run({"generate", "--checkpoint", ck_path, "--input", path("blank.txt")}).code, kExitData);
  write("junk.ckpt", "not a checkpoint");
  EXPECT_EQ(run({"generate", "--checkpoint", path("junk.ckpt"), "--input", path("empty.txt")}).code,
            kExitData);
}

TEST_F(CliTest, EvalPrintsFourDecimals) {
  write("h.txt", "the cat sat\n");
  write("r.txt", "the cat\n");
  Run r = run({"eval", "--metric", "rouge", "--hyp", path("h.txt"), "--ref", path("r.txt")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("ROUGE-1 F1 0.8000"), std::string::npos) << r.out;

  write("same.txt", "a b c d\nx y z w v\n");
  r = run({"eval", "--metric", "rouge", "--hyp", path("same.txt"), "--ref", path("same.txt")});
  EXPECT_NE(r.out.find("ROUGE-L F1 1.0000"), std::string::npos) << r.out;
  r = run({"eval", "--metric", "bleu", "--hyp", path("same.txt"), "--ref", path("same.txt")});
  EXPECT_EQ(r.out, "BLEU-4 1.0000\n");

  write("other.txt", "q r s t\nk l m n o\n");
  r = run({"eval", "--metric", "rouge", "--hyp", path("same.txt"), "--ref", path("other.txt")});
  EXPECT_NE(r.out.find("ROUGE-L F1 0.0000"), std::string::npos) << r.out;

  r = run({"eval", "--metric", "rouge", "--hyp", path("h.txt"), "--ref", path("same.txt")});
  EXPECT_EQ(r.code, kExitData);
  EXPECT_NE(r.err.find("1 lines"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("2"), std::string::npos) << r.err;
}

// Grid lines follow the header; each starts with one '#'/'.' per key.
std::vector<std::string> grid(const std::string& out) {
  std::istringstream in(out);
  std::string line;
  std::vector<std::string> rows;
  bool in_grid = false;
  while (std::getline(in, line)) {
    if (line.starts_with("mask")) {
      in_grid = true;
      continue;
    }
    if (in_grid) rows.push_back(line.substr(0, line.find(' ')));
  }
  return rows;
}

TEST_F(CliTest, InspectPackMatchesMaskBuilder) {
  for (const char* method : {"causal", "masked", "pseudo"}) {
    Run r = run({"inspect-pack", "--method", method, "--src", "a b", "--tgt", "x y z"});
    ASSERT_EQ(r.code, 0) << r.err;
    BoolMatrix m = build_attention_mask(parse_mask_kind(method), 4, 3);
    auto rows = grid(r.out);
    ASSERT_EQ(rows.size(), m.rows()) << r.out;
    for (std::size_t i = 0; i < m.rows(); ++i) {
      ASSERT_EQ(rows[i].size(), m.cols());
      for (std::size_t j = 0; j < m.cols(); ++j) EXPECT_EQ(rows[i][j] == '#', m(i, j));
    }
  }
}

TEST_F(CliTest, InspectPackExamples) {
  Run r = run({"inspect-pack", "--method", "pseudo", "--src", "a", "--tgt", "x"});
  auto rows = grid(r.out);
  ASSERT_EQ(rows.size(), 7u);
  int hashes = 0;
  for (const auto& row : rows) hashes += row[5] == '#';  // the first [P] column
  EXPECT_EQ(hashes, 1);

  r = run({"inspect-pack", "--method", "causal", "--src", "a b"});
  EXPECT_NE(r.out.find("predict    4:[SEP]\n"), std::string::npos) << r.out;

  Run m1 = run({"inspect-pack", "--method", "masked", "--src", "a b", "--tgt", "c d e f", "--seed", "3"});
  Run m2 = run({"inspect-pack", "--method", "masked", "--src", "a b", "--tgt", "c d e f", "--seed", "3"});
  EXPECT_EQ(m1.out, m2.out);
}

TEST_F(CliTest, SynthWritesDataset) {
  Run r = run({"synth", "--task", "extract", "--n", "12", "--out", path("s.jsonl"), "--seed", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_dataset(path("s.jsonl")), synth_generate(SynthTask::kExtract, 12, 16, 5, 10, 4));
  EXPECT_EQ(run({"synth", "--task", "sort", "--out", path("s.jsonl")}).code, kExitUsage);
}

}  // namespace
}  // namespace unimask
