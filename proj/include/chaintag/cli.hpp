#pragma once

// Command-line driver: train, tag, eval, selftest.
//
// Exit codes: 0 success, 1 pipeline error or failed selftest, 2 usage error
// (bad or missing flags, unreadable input path). Data goes to `out` (or the
// --out file); diagnostics go to `err`, one line each.

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "chaintag/data.hpp"
#include "chaintag/embeddings.hpp"
#include "chaintag/evaluation.hpp"
#include "chaintag/model.hpp"
#include "chaintag/selftest.hpp"
#include "chaintag/training.hpp"

namespace chaintag::cli {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string command;
  // paths
  std::string train, valid, test, embeddings, contextual, valid_contextual, test_contextual;
  std::string checkpoint, out, config;
  // model
  std::string variant = "crf-xo";
  std::string encoder = "identity";
  std::size_t embedding_dim = 300;
  std::size_t lstm_hidden = 300;
  std::size_t mlp_hidden = 600;
  bool freeze_embeddings = false;
  bool case_fold = false;
  bool full_vocab = false;
  // corpus
  std::string scheme = "raw";
  std::size_t word_column = 0;
  int label_column = -1;
  bool unlabeled = false;
  std::size_t valid_size = 1000;
  // schedule / optimizer
  std::uint64_t seed = 0;
  std::size_t batch_size = 128;
  double lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double clip_norm = 0.0;
  std::size_t max_iters = 100000;
  std::size_t eval_every = 1000;
  std::size_t patience = 10;
  std::size_t workers = 1;
  std::string metric = "auto";
  // selftest
  std::size_t instances = 200;
  std::string inject_fault;
};

namespace detail {

inline std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline bool span_labels(const LabelSet& labels) {
  for (const auto& name : labels.names()) {
    try {
      parse_tag(name);
    } catch (const ParseError&) {
      return false;
    }
  }
  return labels.size() > 0;
}

inline Metric resolve_metric(const std::string& name, const LabelSet& labels) {
  if (name == "auto") return span_labels(labels) ? Metric::kSpanF1 : Metric::kAccuracy;
  const Metric m = parse_metric(name);
  if (m == Metric::kSpanF1 && !span_labels(labels)) {
    throw UsageError("--metric span-f1 needs B-/I-/O labels; use accuracy");
  }
  return m;
}

inline void require_readable(const std::string& path, const std::string& flag) {
  if (path.empty()) throw UsageError(flag + " is required");
  std::ifstream in(path);
  if (!in) throw UsageError(flag + ": cannot open '" + path + "'");
}

inline Corpus load_corpus(const RunConfig& rc, const std::string& path, const std::string& flag,
                          bool labeled) {
  require_readable(path, flag);
  ReadOptions opts;
  opts.word_column = rc.word_column;
  opts.label_column = rc.label_column;
  opts.labeled = labeled;
  opts.scheme = parse_scheme(rc.scheme);
  Corpus c = read_conll(path, opts);
  if (labeled && opts.scheme == TagScheme::kIob1) c = convert_scheme(c, TagScheme::kBio2);
  return c;
}

inline std::vector<Matrix> load_features(const std::string& path, const std::string& flag,
                                         const Corpus& corpus, std::size_t* dim = nullptr) {
  require_readable(path, flag);
  const auto pre = load_precomputed(path);
  if (dim) *dim = pre.dim;
  return pre.align(corpus);
}

// Output goes to the --out file when given, otherwise to `fallback`.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) : stream_(&fallback) {
    if (!path.empty()) {
      file_ = std::make_unique<std::ofstream>(path);
      if (!*file_) throw UsageError("--out: cannot write '" + path + "'");
      stream_ = file_.get();
    }
  }
  std::ostream& get() { return *stream_; }

 private:
  std::unique_ptr<std::ofstream> file_;
  std::ostream* stream_;
};

inline Model load_model(const std::string& path) {
  require_readable(path, "--checkpoint");
  std::ifstream in(path, std::ios::binary);
  return Model::load(in);
}

inline void save_model(const Model& m, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw UsageError("--checkpoint: cannot write '" + path + "'");
  m.save(f);
  f.close();
  if (!f) throw std::runtime_error("failed writing checkpoint " + path);
}

// Checks every label of `corpus` exists in `labels`; returns the corpus
// re-indexed against them.
inline Corpus align_labels(const Corpus& corpus, const LabelSet& labels, const std::string& flag) {
  try {
    return relabel(corpus, labels);
  } catch (const LabelMismatchError& e) {
    throw LabelMismatchError(flag + ": " + e.what());
  }
}

}  // namespace detail

inline int cmd_train(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  Corpus train_corpus = detail::load_corpus(rc, rc.train, "--train", true);
  if (train_corpus.empty()) throw UsageError("--train: corpus is empty");
  const bool precomputed = !rc.contextual.empty();

  Dataset train_data, valid_data;
  std::vector<Matrix> train_features;
  std::size_t feature_dim = 0;
  if (precomputed) {
    train_features = detail::load_features(rc.contextual, "--contextual-embeddings", train_corpus,
                                           &feature_dim);
  }
  if (!rc.valid.empty()) {
    train_data.corpus = std::move(train_corpus);
    train_data.features = std::move(train_features);
    valid_data.corpus = detail::align_labels(detail::load_corpus(rc, rc.valid, "--valid", true),
                                             train_data.corpus.labels, "--valid");
    if (precomputed) {
      if (rc.valid_contextual.empty()) {
        throw UsageError("--valid-contextual-embeddings is required with --contextual-embeddings and --valid");
      }
      valid_data.features =
          detail::load_features(rc.valid_contextual, "--valid-contextual-embeddings", valid_data.corpus);
    }
  } else {
    if (rc.valid_size >= train_corpus.size()) {
      throw UsageError("--valid-size " + std::to_string(rc.valid_size) + " must be smaller than the " +
                       std::to_string(train_corpus.size()) + "-sentence training corpus (or pass --valid)");
    }
    const auto mask = validation_mask(train_corpus.size(), rc.valid_size, Rng(rc.seed));
    train_data.corpus.labels = valid_data.corpus.labels = train_corpus.labels;
    train_data.corpus.scheme = valid_data.corpus.scheme = train_corpus.scheme;
    for (std::size_t i = 0; i < train_corpus.size(); ++i) {
      Dataset& d = mask[i] ? valid_data : train_data;
      d.corpus.sentences.push_back(std::move(train_corpus.sentences[i]));
      if (precomputed) d.features.push_back(std::move(train_features[i]));
    }
  }

  VariantConfig config = VariantConfig::from_name(rc.variant);
  if (rc.encoder != "identity" && rc.encoder != "bilstm") {
    throw UsageError("--encoder must be identity or bilstm");
  }
  config.encoder = rc.encoder == "bilstm" ? EncoderKind::kBiLstm : EncoderKind::kIdentity;
  config.source = precomputed ? EmbeddingSource::kPrecomputed : EmbeddingSource::kTable;
  config.labels = train_data.corpus.labels;
  const Metric metric = detail::resolve_metric(rc.metric, config.labels);

  ModelDims dims;
  dims.lstm_hidden = rc.lstm_hidden;
  dims.mlp_hidden = rc.mlp_hidden;
  std::optional<EmbeddingTable> table;
  if (precomputed) {
    dims.input_dim = feature_dim;
  } else if (!rc.embeddings.empty()) {
    detail::require_readable(rc.embeddings, "--embeddings");
    std::unordered_set<std::string> keep;
    std::unordered_set<std::string>* filter = nullptr;
    if (!rc.full_vocab) {
      Vocabulary norm(rc.case_fold);
      for (const Dataset* d : {&train_data, &valid_data}) {
        for (const auto& s : d->corpus.sentences) {
          for (const auto& w : s.words) keep.insert(norm.normalize(w));
        }
      }
      if (!rc.test.empty()) {
        for (const auto& s : detail::load_corpus(rc, rc.test, "--test", !rc.unlabeled).sentences) {
          for (const auto& w : s.words) keep.insert(norm.normalize(w));
        }
      }
      filter = &keep;
    }
    LoadReport report;
    table = load_pretrained(rc.embeddings, rc.embedding_dim, rc.case_fold, filter, &report);
    if (report.duplicates) err << "warning: " << report.duplicates << " duplicate embedding words ignored\n";
    dims.input_dim = rc.embedding_dim;
  } else {
    table = table_from_corpus(train_data.corpus, rc.embedding_dim, rc.case_fold);
    dims.input_dim = rc.embedding_dim;
  }
  if (table) table->trainable = !rc.freeze_embeddings;

  Rng rng(rc.seed);
  Model model = Model::build(config, dims, rng, std::move(table));

  TrainSchedule schedule;
  schedule.max_iterations = rc.max_iters;
  schedule.eval_every = rc.eval_every;
  schedule.patience = rc.patience;
  schedule.batch_size = rc.batch_size;
  schedule.workers = rc.workers;
  schedule.metric = metric;
  OptimizerState opt;
  opt.learning_rate = rc.lr;
  opt.momentum = rc.momentum;
  opt.weight_decay = rc.weight_decay;
  opt.clip_norm = rc.clip_norm;

  detail::Sink sink(rc.out, out);
  const TrainResult result =
      train(model, train_data, valid_data, schedule, opt, Rng(rc.seed + 1), &sink.get());
  char buf[128];
  std::snprintf(buf, sizeof(buf), "BEST ITER %zu METRIC %.6f\n", result.best_iteration, result.best_metric);
  sink.get() << buf;
  detail::save_model(model, rc.checkpoint);

  if (!rc.test.empty()) {
    Dataset test_data;
    test_data.corpus = detail::align_labels(detail::load_corpus(rc, rc.test, "--test", true),
                                            model.labels(), "--test");
    if (precomputed) {
      if (rc.test_contextual.empty()) {
        throw UsageError("--test-contextual-embeddings is required with --contextual-embeddings and --test");
      }
      test_data.features =
          detail::load_features(rc.test_contextual, "--test-contextual-embeddings", test_data.corpus);
    }
    const auto gold = test_data.corpus.label_strings();
    const auto pred = predict(model, test_data);
    if (metric == Metric::kSpanF1) {
      write_report(sink.get(), span_f1(gold, pred));
    } else {
      std::snprintf(buf, sizeof(buf), "ACC %.6f\n", token_accuracy(gold, pred));
      sink.get() << buf;
    }
  }
  return 0;
}

inline int cmd_tag(const RunConfig& rc, std::ostream& out, std::ostream& /*err*/) {
  const Model model = detail::load_model(rc.checkpoint);
  Corpus input = detail::load_corpus(rc, rc.test, "--test", !rc.unlabeled);
  if (!rc.unlabeled) input = detail::align_labels(input, model.labels(), "--test");
  std::vector<Matrix> features;
  if (model.config().source == EmbeddingSource::kPrecomputed) {
    if (rc.contextual.empty()) throw UsageError("--contextual-embeddings is required by this checkpoint");
    features = detail::load_features(rc.contextual, "--contextual-embeddings", input);
  }
  detail::Sink sink(rc.out, out);
  std::ostream& o = sink.get();
  for (std::size_t i = 0; i < input.size(); ++i) {
    const auto& s = input.sentences[i];
    if (i) o << '\n';
    const auto pred = model.decode(s.words, features.empty() ? nullptr : &features[i]);
    for (std::size_t t = 0; t < s.size(); ++t) {
      for (const auto& c : s.columns[t]) o << c << ' ';
      o << pred[t] << '\n';
    }
  }
  o.flush();
  return 0;
}

inline int cmd_eval(const RunConfig& rc, std::ostream& out, std::ostream& /*err*/) {
  const Model model = detail::load_model(rc.checkpoint);
  Dataset data;
  data.corpus = detail::load_corpus(rc, rc.test, "--test", true);
  if (data.corpus.empty()) throw std::runtime_error("--test: corpus is empty");
  if (model.config().source == EmbeddingSource::kPrecomputed) {
    if (rc.contextual.empty()) throw UsageError("--contextual-embeddings is required by this checkpoint");
    data.features = detail::load_features(rc.contextual, "--contextual-embeddings", data.corpus);
  }
  // Gold strings are compared as strings, so labels unseen by the model
  // simply count as errors.
  const auto gold = data.corpus.label_strings();
  const auto pred = predict(model, data);
  detail::Sink sink(rc.out, out);
  const Metric metric = detail::resolve_metric(rc.metric, data.corpus.labels);
  if (metric == Metric::kSpanF1 && detail::span_labels(model.labels())) {
    write_report(sink.get(), span_f1(gold, pred));
  } else {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "ACC %.6f\n", token_accuracy(gold, pred));
    sink.get() << buf;
  }
  return 0;
}

inline int cmd_selftest(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  SelftestOptions opt;
  opt.seed = rc.seed;
  opt.lattice_instances = rc.instances;
  if (!rc.inject_fault.empty()) {
    if (rc.inject_fault != "next-sign-flip") {
      throw UsageError("--inject-fault: unknown fault '" + rc.inject_fault + "' (expected next-sign-flip)");
    }
    opt.inject_next_sign_flip = true;
  }
  detail::Sink sink(rc.out, out);
  std::vector<CheckOutcome> outcomes;
  const bool ok = run_selftest(opt, sink.get(), err, &outcomes);
  if (!ok) {
    for (const auto& c : outcomes) {
      if (!c.passed) {
        err << "selftest failed: " << c.name << '\n';
        break;
      }
    }
  }
  return ok ? 0 : 1;
}

namespace detail {

inline void add_common(CLI::App* sub, RunConfig& rc) {
  sub->add_option("--config", rc.config, "key=value file; flags given on the command line win");
  sub->add_option("--out", rc.out, "output file (default: standard output)");
  sub->add_option("--seed", rc.seed, "random seed")->capture_default_str();
}

inline void add_corpus_format(CLI::App* sub, RunConfig& rc) {
  sub->add_option("--scheme", rc.scheme, "input tag scheme: raw, iob1 (converted to bio2) or bio2")
      ->check(CLI::IsMember({"raw", "iob1", "bio2"}))
      ->capture_default_str();
  sub->add_option("--word-column", rc.word_column, "0-based word column")->capture_default_str();
  sub->add_option("--label-column", rc.label_column, "label column, negative counts from the end")
      ->capture_default_str();
  sub->add_option("--metric", rc.metric, "span-f1, accuracy or auto")
      ->check(CLI::IsMember({"auto", "span-f1", "f1", "accuracy", "acc"}))
      ->capture_default_str();
}

inline void build_app(CLI::App& app, RunConfig& rc) {
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "train a model and write the best checkpoint");
  add_common(train, rc);
  add_corpus_format(train, rc);
  train->add_option("--train", rc.train, "training corpus (CoNLL columns)")->required();
  train->add_option("--valid", rc.valid, "validation corpus; default samples --valid-size training sentences");
  train->add_option("--valid-size", rc.valid_size, "sentences sampled for validation")->capture_default_str();
  train->add_option("--test", rc.test, "test corpus scored with the best checkpoint");
  train->add_option("--checkpoint", rc.checkpoint, "checkpoint to write")->required();
  train->add_option("--variant", rc.variant, "crf, crf-x, crf-o, crf-xo, crf-xo-concat, crf-xo-wide")
      ->check(CLI::IsMember(variant_names()))
      ->capture_default_str();
  train->add_option("--encoder", rc.encoder, "identity or bilstm")
      ->check(CLI::IsMember({"identity", "bilstm"}))
      ->capture_default_str();
  train->add_option("--embeddings", rc.embeddings, "pretrained word vectors (text: word then floats)");
  train->add_option("--embedding-dim", rc.embedding_dim, "word vector size")->capture_default_str();
  train->add_option("--contextual-embeddings", rc.contextual, "precomputed vectors for --train");
  train->add_option("--valid-contextual-embeddings", rc.valid_contextual, "precomputed vectors for --valid");
  train->add_option("--test-contextual-embeddings", rc.test_contextual, "precomputed vectors for --test");
  train->add_flag("--freeze-embeddings", rc.freeze_embeddings, "keep the word table fixed");
  train->add_flag("--case-fold", rc.case_fold, "lower-case words before lookup");
  train->add_flag("--full-vocab", rc.full_vocab, "keep every pretrained word, not only corpus words");
  train->add_option("--lstm-hidden", rc.lstm_hidden, "units per LSTM direction")->capture_default_str();
  train->add_option("--mlp-hidden", rc.mlp_hidden, "potential network width")->capture_default_str();
  train->add_option("--batch-size", rc.batch_size, "sentences per batch")->capture_default_str();
  train->add_option("--lr", rc.lr, "learning rate")->capture_default_str();
  train->add_option("--momentum", rc.momentum, "Nesterov momentum")->capture_default_str();
  train->add_option("--weight-decay", rc.weight_decay, "L2 coefficient")->capture_default_str();
  train->add_option("--clip-norm", rc.clip_norm, "global gradient norm clip, 0 = off")->capture_default_str();
  train->add_option("--max-iters", rc.max_iters, "maximum number of batches")->capture_default_str();
  train->add_option("--eval-every", rc.eval_every, "batches between validations")->capture_default_str();
  train->add_option("--patience", rc.patience, "non-improving validations before stopping")
      ->capture_default_str();
  train->add_option("--workers", rc.workers, "threads for batch gradients")->capture_default_str();

  auto* tag = app.add_subcommand("tag", "append predicted labels to a corpus");
  add_common(tag, rc);
  add_corpus_format(tag, rc);
  tag->add_option("--checkpoint", rc.checkpoint, "trained checkpoint")->required();
  tag->add_option("--test", rc.test, "corpus to tag")->required();
  tag->add_option("--contextual-embeddings", rc.contextual, "precomputed vectors for --test");
  tag->add_flag("--unlabeled", rc.unlabeled, "input has no label column");

  auto* eval = app.add_subcommand("eval", "score a checkpoint on a labelled corpus");
  add_common(eval, rc);
  add_corpus_format(eval, rc);
  eval->add_option("--checkpoint", rc.checkpoint, "trained checkpoint")->required();
  eval->add_option("--test", rc.test, "labelled corpus")->required();
  eval->add_option("--contextual-embeddings", rc.contextual, "precomputed vectors for --test");

  auto* self = app.add_subcommand("selftest", "run the oracle and gradient suites");
  add_common(self, rc);
  self->add_option("--instances", rc.instances, "random lattices per variant")->capture_default_str();
  self->add_option("--inject-fault", rc.inject_fault, "next-sign-flip: corrupt the next-neighbour potentials");
}

// Expands `--config FILE` into `--key=value` arguments placed before the
// user's own flags so that the latter win. Unknown keys are rejected.
inline std::vector<std::string> expand_config(CLI::App& app, std::vector<std::string> args) {
  if (args.empty()) return args;
  CLI::App* sub = nullptr;
  std::size_t sub_pos = 0;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i].rfind("-", 0) == 0) continue;
    sub = app.get_subcommand_no_throw(args[i]);
    sub_pos = i;
    break;
  }
  if (!sub) return args;
  std::string path;
  std::set<std::string> given;
  for (std::size_t i = sub_pos + 1; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) != 0) continue;
    const auto eq = a.find('=');
    const std::string key = a.substr(2, eq == std::string::npos ? std::string::npos : eq - 2);
    given.insert(key);
    if (key == "config") {
      if (eq != std::string::npos) path = a.substr(eq + 1);
      else if (i + 1 < args.size()) path = args[i + 1];
    }
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) throw UsageError("--config: cannot open '" + path + "'");
  std::vector<std::string> injected;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError("--config line " + std::to_string(line_no) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.rfind("--", 0) == 0) key = key.substr(2);
    if (key == "config" || sub->get_option_no_throw("--" + key) == nullptr) {
      throw UsageError("--config line " + std::to_string(line_no) + ": unknown key '" + key + "' for " +
                       sub->get_name());
    }
    if (given.count(key)) continue;
    injected.push_back("--" + key + "=" + value);
  }
  args.insert(args.begin() + static_cast<long>(sub_pos) + 1, injected.begin(), injected.end());
  return args;
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig rc;
  CLI::App app{"Sequence labelling with neighbour-aware CRFs", "chaintag"};
  detail::build_app(app, rc);
  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = detail::expand_config(app, std::move(args));
    std::reverse(args.begin(), args.end());  // CLI11 consumes from the back
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "chaintag: " << detail::one_line(e.what()) << '\n';
    return 2;
  } catch (const UsageError& e) {
    err << "chaintag: " << detail::one_line(e.what()) << '\n';
    return 2;
  }
  rc.command = app.get_subcommands().front()->get_name();
  try {
    if (rc.command == "train") return cmd_train(rc, out, err);
    if (rc.command == "tag") return cmd_tag(rc, out, err);
    if (rc.command == "eval") return cmd_eval(rc, out, err);
    return cmd_selftest(rc, out, err);
  } catch (const UsageError& e) {
    err << "chaintag: " << detail::one_line(e.what()) << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "chaintag: error: " << detail::one_line(e.what()) << '\n';
    return 1;
  }
}

}  // namespace chaintag::cli
