#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "chaintag/selftest.hpp"
#include "chaintag/training.hpp"

using namespace chaintag;

namespace {

ParameterStore scalar_store(double theta) {
  ParameterStore s;
  s.add("theta", Matrix(1, 1, std::vector<double>{theta}), ParamKind::kWeight);
  return s;
}

// f(theta) = theta^2 / 2
double quadratic_grad(ParameterStore& s) {
  const double th = s.value("theta")(0, 0);
  s.grad(s.find("theta"))(0, 0) = th;
  return th * th / 2;
}

Corpus fixture(const std::string& name) { return read_conll(std::string(CHAINTAG_TEST_DATA) + "/" + name); }

// One-hot rows for every corpus word, frozen.
Model one_hot_model(const Corpus& c, const std::string& variant, std::size_t hidden, Rng& rng) {
  EmbeddingTable t = table_from_corpus(c, 1);
  const std::size_t V = t.vocabulary.size();
  t.matrix = Matrix::identity(V);
  t.trainable = false;
  t.preset = true;
  VariantConfig cfg = VariantConfig::from_name(variant);
  cfg.labels = c.labels;
  return Model::build(cfg, ModelDims{V, 1, hidden}, rng, std::move(t));
}

double mean_nll(const Model& m, const Corpus& c) {
  double n = 0;
  for (const auto& s : c.sentences) n += m.nll(s);
  return n / static_cast<double>(c.size());
}

}  // namespace

TEST(Nesterov, ScalarExample) {
  ParameterStore s = scalar_store(1.0);
  OptimizerState opt;
  nesterov_step(s, opt, quadratic_grad);
  EXPECT_NEAR(opt.velocity[0](0, 0), -0.001, 1e-18);
  EXPECT_NEAR(s.value("theta")(0, 0), 0.999, 1e-15);
}

TEST(Nesterov, ZeroGradientScalesVelocityOnly) {
  ParameterStore s = scalar_store(2.0);
  OptimizerState opt;
  opt.velocity = s.make_gradients();
  opt.velocity[0](0, 0) = 0.5;
  nesterov_step(s, opt, [](ParameterStore&) { return 0.0; });
  EXPECT_DOUBLE_EQ(opt.velocity[0](0, 0), 0.45);
  EXPECT_DOUBLE_EQ(s.value("theta")(0, 0), 2.45);
  // with no velocity at all nothing moves
  ParameterStore t = scalar_store(2.0);
  OptimizerState fresh;
  nesterov_step(t, fresh, [](ParameterStore&) { return 0.0; });
  EXPECT_EQ(t.value("theta")(0, 0), 2.0);
  EXPECT_EQ(fresh.velocity[0](0, 0), 0.0);
}

TEST(Nesterov, GradientIsTakenAtLookaheadPoint) {
  ParameterStore s = scalar_store(1.0);
  OptimizerState opt;
  opt.velocity = s.make_gradients();
  opt.velocity[0](0, 0) = 0.5;
  int calls = 0;
  std::vector<double> seen;
  auto spy = [&](ParameterStore& st) {
    ++calls;
    seen.push_back(st.value("theta")(0, 0));
    return quadratic_grad(st);
  };
  nesterov_step(s, opt, spy);
  EXPECT_EQ(calls, 1);
  EXPECT_DOUBLE_EQ(seen[0], 1.45);
  // v = 0.45 - 0.001 * 1.45; theta = 1 + v
  EXPECT_DOUBLE_EQ(opt.velocity[0](0, 0), 0.45 - 0.00145);
  EXPECT_DOUBLE_EQ(s.value("theta")(0, 0), 1.0 + 0.45 - 0.00145);
  nesterov_step(s, opt, spy);
  EXPECT_EQ(calls, 2);
  EXPECT_DOUBLE_EQ(seen[1], 1.0 + 0.44855 + 0.9 * 0.44855);
}

TEST(Nesterov, QuadraticBowlDecreasesAndBeatsPlainSgd) {
  const std::vector<double> curv = {0.1, 0.5, 1.0, 2.0};
  auto loss = [&](const ParameterStore& s) {
    double l = 0;
    for (std::size_t i = 0; i < curv.size(); ++i) l += curv[i] * s.value("x")(i, 0) * s.value("x")(i, 0) / 2;
    return l;
  };
  auto grad = [&](ParameterStore& s) {
    for (std::size_t i = 0; i < curv.size(); ++i) s.grad(s.find("x"))(i, 0) = curv[i] * s.value("x")(i, 0);
    return loss(s);
  };
  auto start = [] {
    ParameterStore s;
    s.add("x", Matrix(4, 1, std::vector<double>{1, -2, 3, -1}), ParamKind::kWeight);
    return s;
  };
  ParameterStore nag = start(), sgd = start();
  OptimizerState with, without;
  without.momentum = 0.0;
  std::vector<double> trace;
  for (int step = 0; step < 500; ++step) {
    nesterov_step(nag, with, grad);
    nesterov_step(sgd, without, grad);
    trace.push_back(loss(nag));
  }
  for (std::size_t k = 20; k < trace.size(); ++k) EXPECT_LE(trace[k], trace[k - 1]) << k;
  EXPECT_LT(loss(nag), loss(sgd));
  EXPECT_LT(loss(nag), 0.8 * loss(start()));
}

TEST(Nesterov, NonFiniteGradientNamesParameterAndRestores) {
  ParameterStore s;
  s.add("ok", Matrix(1, 1, std::vector<double>{1.0}), ParamKind::kWeight);
  s.add("bad", Matrix(1, 2, std::vector<double>{1.0, 2.0}), ParamKind::kWeight);
  OptimizerState opt;
  opt.velocity = s.make_gradients();
  opt.velocity[1].fill(1.0);
  try {
    nesterov_step(s, opt, [](ParameterStore& st) {
      st.grad(st.find("bad"))(0, 1) = std::nan("");
      return 0.0;
    });
    FAIL();
  } catch (const NonFiniteGradientError& e) {
    EXPECT_NE(std::string(e.what()).find("bad"), std::string::npos);
  }
  EXPECT_EQ(s.value("bad"), Matrix(1, 2, std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(opt.velocity[1](0, 0), 1.0);
}

TEST(Nesterov, UntrainableEntriesAndMomentumRange) {
  ParameterStore s;
  s.add("frozen", Matrix(1, 1, std::vector<double>{3.0}), ParamKind::kPreset, false);
  s.add("theta", Matrix(1, 1, std::vector<double>{1.0}), ParamKind::kWeight);
  OptimizerState opt;
  nesterov_step(s, opt, [](ParameterStore& st) {
    st.grad(st.find("frozen"))(0, 0) = 100.0;
    return quadratic_grad(st);
  });
  EXPECT_EQ(s.value("frozen")(0, 0), 3.0);
  EXPECT_NEAR(s.value("theta")(0, 0), 0.999, 1e-15);
  OptimizerState bad;
  bad.momentum = 1.0;
  EXPECT_THROW(nesterov_step(s, bad, quadratic_grad), std::invalid_argument);
}

TEST(ParseMetric, Names) {
  EXPECT_EQ(parse_metric("span-f1"), Metric::kSpanF1);
  EXPECT_EQ(parse_metric("accuracy"), Metric::kAccuracy);
  EXPECT_THROW(parse_metric("bleu"), std::invalid_argument);
}

TEST(BatchGradient, MeanOfSentenceTermsAndWorkerSplit) {
  Rng rng(3);
  ToyInstance inst = make_toy_instance(ToySetup{"crf-xo", EncoderKind::kBiLstm}, rng, 7, 6);
  Dataset data;
  data.corpus.labels = inst.model.labels();
  data.corpus.sentences = inst.sentences;
  const std::vector<std::size_t> batch = {0, 1, 2, 3, 4, 5, 6};
  Model& m = inst.model;
  m.store().zero_grad();
  const double one = batch_gradient(m, data, batch, 1);
  Gradients seq = m.store().take_gradients();
  const double many = batch_gradient(m, data, batch, 3);
  Gradients par = m.store().take_gradients();
  double want = 0;
  for (const auto& s : inst.sentences) want += m.nll(s);
  EXPECT_NEAR(one, want / 7, 1e-12);
  EXPECT_NEAR(many, one, 1e-12);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    for (std::size_t k = 0; k < seq[i].size(); ++k) EXPECT_NEAR(par[i].values()[k], seq[i].values()[k], 1e-12);
  }
  // repeated multi-worker runs are bit-identical
  batch_gradient(m, data, batch, 3);
  Gradients again = m.store().take_gradients();
  for (std::size_t i = 0; i < par.size(); ++i) EXPECT_EQ(again[i], par[i]);
}

TEST(Train, ToyCorpusConverges) {
  const Corpus c = fixture("toy_train.conll");
  ASSERT_EQ(c.size(), 8u);
  Rng rng(0);
  Model m = one_hot_model(c, "crf-xo", 32, rng);
  const Dataset data{c, {}};
  TrainSchedule sched;
  sched.max_iterations = 2000;
  sched.eval_every = 100;
  sched.patience = 20;
  sched.batch_size = 8;
  OptimizerState opt;
  opt.learning_rate = 0.01;
  const auto r = train(m, data, data, sched, opt, Rng(1), nullptr,
                       [&](const Model& mm) { return -mean_nll(mm, c); });
  EXPECT_LE(r.iterations, 2000u);
  EXPECT_LT(mean_nll(m, c), 0.01);
  EXPECT_LT(r.trace.back().nll, 0.01);
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_EQ(m.decode(c.sentences[i].words), c.label_strings()[i]);
  }
}

TEST(Train, PatienceOneWithFlatMetricStopsAtTwoEvaluations) {
  const Corpus c = fixture("toy_train.conll");
  Rng rng(0);
  Model m = one_hot_model(c, "crf", 4, rng);
  TrainSchedule sched;
  sched.max_iterations = 1000;
  sched.eval_every = 7;
  sched.patience = 1;
  sched.batch_size = 3;
  OptimizerState opt;
  const auto r = train(m, {c, {}}, {c, {}}, sched, opt, Rng(0), nullptr, [](const Model&) { return 0.5; });
  EXPECT_EQ(r.iterations, 14u);
  EXPECT_TRUE(r.early_stopped);
  EXPECT_EQ(r.trace.size(), 2u);
  EXPECT_EQ(r.best_iteration, 7u);
}

TEST(Train, TraceHasOneEntryPerEvaluation) {
  const Corpus c = fixture("toy_train.conll");
  Rng rng(0);
  Model m = one_hot_model(c, "crf-x", 4, rng);
  TrainSchedule sched;
  sched.max_iterations = 25;
  sched.eval_every = 10;
  sched.batch_size = 4;
  OptimizerState opt;
  std::ostringstream log;
  const auto r = train(m, {c, {}}, {fixture("toy_valid.conll"), {}}, sched, opt, Rng(0), &log);
  ASSERT_EQ(r.trace.size(), 3u);
  EXPECT_EQ(r.trace[0].iteration, 10u);
  EXPECT_EQ(r.trace[2].iteration, 25u);
  EXPECT_FALSE(r.early_stopped);
  const std::string text = log.str();
  EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')), 3u);
  EXPECT_EQ(text.rfind("ITER 10 NLL ", 0), 0u);
}

TEST(Train, ReproducibleAndReturnsBestCheckpoint) {
  const Corpus c = fixture("toy_train.conll");
  Corpus valid = relabel(fixture("toy_valid.conll"), c.labels);
  auto run = [&](std::vector<TraceEntry>& trace, double& final_metric) {
    Rng rng(4);
    Model m = one_hot_model(c, "crf-xo", 8, rng);
    TrainSchedule sched;
    sched.max_iterations = 300;
    sched.eval_every = 20;
    sched.patience = 100;
    sched.batch_size = 3;
    sched.metric = Metric::kAccuracy;
    OptimizerState opt;
    opt.learning_rate = 0.02;
    const auto r = train(m, {c, {}}, {valid, {}}, sched, opt, Rng(9));
    trace = r.trace;
    final_metric = evaluate(m, {valid, {}}, Metric::kAccuracy);
    double mx = -1;
    for (const auto& e : trace) mx = std::max(mx, e.metric);
    EXPECT_EQ(r.best_metric, mx);
    return m;
  };
  std::vector<TraceEntry> t1, t2;
  double f1 = 0, f2 = 0;
  const Model a = run(t1, f1);
  const Model b = run(t2, f2);
  ASSERT_EQ(t1.size(), t2.size());
  for (std::size_t i = 0; i < t1.size(); ++i) {
    EXPECT_EQ(t1[i].nll, t2[i].nll);
    EXPECT_EQ(t1[i].metric, t2[i].metric);
  }
  for (std::size_t i = 0; i < a.store().size(); ++i) EXPECT_EQ(a.store().entries()[i].value, b.store().entries()[i].value);
  double mx = -1;
  for (const auto& e : t1) mx = std::max(mx, e.metric);
  EXPECT_EQ(f1, mx);
}

TEST(Train, FrozenTableUnchanged) {
  const Corpus c = fixture("toy_train.conll");
  Rng rng(0);
  Model m = one_hot_model(c, "crf-xo", 4, rng);
  const Matrix before = m.store().value(Model::kEmbeddingParam);
  TrainSchedule sched;
  sched.max_iterations = 20;
  sched.eval_every = 10;
  sched.batch_size = 4;
  OptimizerState opt;
  opt.learning_rate = 0.05;
  train(m, {c, {}}, {c, {}}, sched, opt, Rng(0));
  EXPECT_EQ(m.store().value(Model::kEmbeddingParam), before);
}

TEST(Train, RejectsBadInputs) {
  const Corpus c = fixture("toy_train.conll");
  Rng rng(0);
  Model m = one_hot_model(c, "crf", 4, rng);
  OptimizerState opt;
  TrainSchedule sched;
  EXPECT_THROW(train(m, {Corpus{}, {}}, {c, {}}, sched, opt, Rng(0)), std::invalid_argument);
  EXPECT_THROW(train(m, {c, {}}, {Corpus{}, {}}, sched, opt, Rng(0)), std::invalid_argument);
  TrainSchedule zero = sched;
  zero.eval_every = 0;
  EXPECT_THROW(train(m, {c, {}}, {c, {}}, zero, opt, Rng(0)), std::invalid_argument);
  zero = sched;
  zero.patience = 0;
  EXPECT_THROW(train(m, {c, {}}, {c, {}}, zero, opt, Rng(0)), std::invalid_argument);
  Corpus other = c;
  other.labels = LabelSet({"X"});
  EXPECT_THROW(train(m, {other, {}}, {c, {}}, sched, opt, Rng(0)), LabelMismatchError);
}
