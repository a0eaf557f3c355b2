#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "chaintag/cli.hpp"

using namespace chaintag;
namespace fs = std::filesystem;

namespace {

const std::string kData = CHAINTAG_TEST_DATA;

struct Outcome {
  int code = 0;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "chaintag");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Outcome r;
  r.code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("chaintag_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Small, quick overfitting run on the training fixture.
  std::vector<std::string> train_args(const std::string& ckpt) const {
    return {"train", "--train", kData + "/toy_train.conll", "--valid", kData + "/toy_train.conll",
            "--checkpoint", ckpt, "--variant", "crf-xo", "--embedding-dim", "8", "--mlp-hidden", "16",
            "--batch-size", "8", "--lr", "0.05", "--max-iters", "300", "--eval-every", "50",
            "--patience", "100", "--metric", "accuracy"};
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, MissingCorpusIsUsageErrorNamingFlag) {
  const Outcome r = run({"train", "--train", path("nope.conll"), "--checkpoint", path("m.ckpt")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--train"), std::string::npos) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
  EXPECT_TRUE(r.out.empty());

  const Outcome missing = run({"train", "--checkpoint", path("m.ckpt")});
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.err.find("--train"), std::string::npos) << missing.err;

  const Outcome tag = run({"tag", "--checkpoint", path("absent.ckpt"), "--test", kData + "/toy_valid.conll"});
  EXPECT_EQ(tag.code, 2);
  EXPECT_NE(tag.err.find("--checkpoint"), std::string::npos);
}

TEST_F(CliTest, UnknownVariantAndSubcommandRejected) {
  EXPECT_EQ(run({"train", "--train", kData + "/toy_train.conll", "--checkpoint", path("m"), "--variant", "hmm"}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({}).code, 2);
}

TEST_F(CliTest, HelpExitsZero) {
  const Outcome r = run({"train", "--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("--variant"), std::string::npos);
}

TEST_F(CliTest, TrainWritesReloadableCheckpointAndIsDeterministic) {
  const Outcome a = run(train_args(path("a.ckpt")));
  ASSERT_EQ(a.code, 0) << a.err;
  const Outcome b = run(train_args(path("b.ckpt")));
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(slurp(path("a.ckpt")), slurp(path("b.ckpt")));
  EXPECT_NE(a.out.find("ITER 50 NLL "), std::string::npos);
  EXPECT_NE(a.out.find("BEST ITER "), std::string::npos);
  std::ifstream in(path("a.ckpt"), std::ios::binary);
  const Model m = Model::load(in);
  EXPECT_EQ(m.config().name(), "crf-xo");
  EXPECT_EQ(m.labels().size(), 4u);
}

TEST_F(CliTest, TagAfterOverfittingReproducesGold) {
  ASSERT_EQ(run(train_args(path("m.ckpt"))).code, 0);
  const Outcome r = run({"tag", "--checkpoint", path("m.ckpt"), "--test", kData + "/toy_train.conll"});
  ASSERT_EQ(r.code, 0) << r.err;
  const Corpus gold = read_conll(kData + "/toy_train.conll");
  std::istringstream in(r.out);
  const Corpus tagged = read_conll(in);
  ASSERT_EQ(tagged.size(), gold.size());
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto& s = tagged.sentences[i];
    for (std::size_t t = 0; t < s.size(); ++t) {
      ASSERT_EQ(s.columns[t].size(), gold.sentences[i].columns[t].size() + 1);
      EXPECT_EQ(s.columns[t].back(), gold.sentences[i].columns[t].back()) << i << ":" << t;
    }
  }
  // eval on the same data reports a perfect score
  const Outcome e = run({"eval", "--checkpoint", path("m.ckpt"), "--test", kData + "/toy_train.conll"});
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_NE(e.out.find("ALL P 1.000000 R 1.000000 F1 1.000000"), std::string::npos) << e.out;
}

TEST_F(CliTest, TagEmptyAndUnlabeledInput) {
  ASSERT_EQ(run(train_args(path("m.ckpt"))).code, 0);
  { std::ofstream(path("empty.conll")); }
  const Outcome r = run({"tag", "--checkpoint", path("m.ckpt"), "--test", path("empty.conll")});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(r.out.empty());

  { std::ofstream(path("bare.conll")) << "the\ndog\n\na\ncat\nran\n"; }
  const Outcome u = run({"tag", "--checkpoint", path("m.ckpt"), "--test", path("bare.conll"), "--unlabeled"});
  ASSERT_EQ(u.code, 0) << u.err;
  std::istringstream in(u.out);
  const Corpus c = read_conll(in);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c.sentences[1].columns[2].size(), 2u);
  EXPECT_EQ(c.sentences[1].words[2], "ran");
}

TEST_F(CliTest, TagRejectsUnknownLabels) {
  ASSERT_EQ(run(train_args(path("m.ckpt"))).code, 0);
  { std::ofstream(path("odd.conll")) << "the DT B-ADJP\n"; }
  const Outcome r = run({"tag", "--checkpoint", path("m.ckpt"), "--test", path("odd.conll")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("B-ADJP"), std::string::npos) << r.err;
}

TEST_F(CliTest, OutFlagRedirectsData) {
  ASSERT_EQ(run(train_args(path("m.ckpt"))).code, 0);
  const Outcome r = run({"tag", "--checkpoint", path("m.ckpt"), "--test", kData + "/toy_valid.conll", "--out", path("o.txt")});
  ASSERT_EQ(r.code, 0);
  EXPECT_TRUE(r.out.empty());
  EXPECT_FALSE(slurp(path("o.txt")).empty());
}

TEST_F(CliTest, ConfigFileWithFlagsWinning) {
  { std::ofstream(path("run.cfg")) << "# toy run\nmax-iters = 20\neval-every=10\nlr=0.05\nembedding-dim=4\nmlp-hidden=4\n"; }
  const std::vector<std::string> base = {"train", "--train", kData + "/toy_train.conll", "--valid",
                                         kData + "/toy_valid.conll", "--checkpoint", path("m.ckpt"),
                                         "--config", path("run.cfg")};
  const Outcome r = run(base);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("ITER 20 "), std::string::npos) << r.out;
  EXPECT_EQ(r.out.find("ITER 30 "), std::string::npos);

  auto more = base;
  more.insert(more.end(), {"--max-iters", "30"});
  const Outcome w = run(more);
  ASSERT_EQ(w.code, 0) << w.err;
  EXPECT_NE(w.out.find("ITER 30 "), std::string::npos) << w.out;

  { std::ofstream(path("bad.cfg")) << "colour=blue\n"; }
  auto bad = base;
  bad.back() = path("bad.cfg");
  const Outcome b = run(bad);
  EXPECT_EQ(b.code, 2);
  EXPECT_NE(b.err.find("colour"), std::string::npos);
}

TEST_F(CliTest, ValidationSampledFromTrainingWhenAbsent) {
  const Outcome r = run({"train", "--train", kData + "/toy_train.conll", "--checkpoint", path("m.ckpt"),
                     "--valid-size", "2", "--max-iters", "5", "--eval-every", "5", "--embedding-dim", "4",
                     "--mlp-hidden", "4"});
  EXPECT_EQ(r.code, 0) << r.err;
  const Outcome too_big = run({"train", "--train", kData + "/toy_train.conll", "--checkpoint", path("m.ckpt")});
  EXPECT_EQ(too_big.code, 2);
  EXPECT_NE(too_big.err.find("--valid-size"), std::string::npos);
}

TEST_F(CliTest, PrecomputedEmbeddingsRoundTrip) {
  const Corpus train = read_conll(kData + "/toy_train.conll");
  const Corpus valid = read_conll(kData + "/toy_valid.conll");
  Rng rng(1);
  auto write = [&](const Corpus& c, const std::string& file) {
    std::vector<std::string> ids;
    std::vector<Matrix> seqs;
    for (std::size_t i = 0; i < c.size(); ++i) {
      ids.push_back("s" + std::to_string(i));
      Matrix m(c.sentences[i].size(), 3);
      for (double& v : m.values()) v = rng.uniform(-1, 1);
      seqs.push_back(m);
    }
    std::ofstream f(path(file));
    write_precomputed(f, ids, seqs);
  };
  write(train, "train.vec");
  write(valid, "valid.vec");
  const std::vector<std::string> args = {"train", "--train", kData + "/toy_train.conll", "--valid",
                                         kData + "/toy_valid.conll", "--checkpoint", path("m.ckpt"),
                                         "--contextual-embeddings", path("train.vec"), "--max-iters", "10",
                                         "--eval-every", "5", "--mlp-hidden", "4"};
  const Outcome missing = run(args);
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.err.find("--valid-contextual-embeddings"), std::string::npos);
  auto full = args;
  full.insert(full.end(), {"--valid-contextual-embeddings", path("valid.vec")});
  const Outcome ok = run(full);
  ASSERT_EQ(ok.code, 0) << ok.err;
  const Outcome tag = run({"tag", "--checkpoint", path("m.ckpt"), "--test", kData + "/toy_valid.conll",
                       "--contextual-embeddings", path("valid.vec")});
  EXPECT_EQ(tag.code, 0) << tag.err;
  const Outcome misaligned = run({"tag", "--checkpoint", path("m.ckpt"), "--test", kData + "/toy_valid.conll",
                              "--contextual-embeddings", path("train.vec")});
  EXPECT_EQ(misaligned.code, 1);
}

TEST_F(CliTest, PretrainedTableAndIob1Input) {
  { std::ofstream(path("vec.txt")) << "the 1 0\ndog 0 1\ncat 1 1\nunused 5 5\n"; }
  const Outcome r = run({"train", "--train", kData + "/toy_train.conll", "--valid", kData + "/toy_valid.conll",
                     "--checkpoint", path("m.ckpt"), "--embeddings", path("vec.txt"), "--embedding-dim", "2",
                     "--max-iters", "5", "--eval-every", "5", "--mlp-hidden", "4", "--freeze-embeddings"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(path("m.ckpt"), std::ios::binary);
  const Model m = Model::load(in);
  EXPECT_FALSE(m.vocabulary()->find("unused").has_value());
  EXPECT_TRUE(m.vocabulary()->find("dog").has_value());
  EXPECT_FALSE(m.embeddings_trainable());

  const Outcome wrong_dim = run({"train", "--train", kData + "/toy_train.conll", "--valid", kData + "/toy_valid.conll",
                             "--checkpoint", path("m2.ckpt"), "--embeddings", path("vec.txt"), "--embedding-dim", "3"});
  EXPECT_EQ(wrong_dim.code, 1);
  EXPECT_NE(wrong_dim.err.find("line 1"), std::string::npos);

  const Outcome iob = run({"train", "--train", kData + "/iob1_ner.conll", "--valid", kData + "/iob1_ner.conll",
                       "--scheme", "iob1", "--checkpoint", path("ner.ckpt"), "--max-iters", "3",
                       "--eval-every", "3", "--embedding-dim", "4", "--mlp-hidden", "4"});
  ASSERT_EQ(iob.code, 0) << iob.err;
  std::ifstream nin(path("ner.ckpt"), std::ios::binary);
  const Model ner = Model::load(nin);
  // IOB1 span starts were rewritten to B- before the label set was built
  EXPECT_TRUE(ner.labels().find("B-PER").has_value());
  EXPECT_TRUE(ner.labels().find("B-MISC").has_value());
}

TEST_F(CliTest, SelftestPassesAndInjectedFaultIsNamed) {
  const Outcome ok = run({"selftest", "--instances", "10"});
  EXPECT_EQ(ok.code, 0) << ok.err;
  EXPECT_EQ(ok.out.find("FAIL"), std::string::npos);
  EXPECT_NE(ok.out.find("PASS partition/crf-xo-wide"), std::string::npos);
  const Outcome bad = run({"selftest", "--instances", "2", "--inject-fault", "next-sign-flip"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("selftest failed: gradient/crf-x"), std::string::npos) << bad.err;
  EXPECT_NE(bad.err.find("lattice T="), std::string::npos);
  EXPECT_EQ(run({"selftest", "--inject-fault", "other"}).code, 2);
}
