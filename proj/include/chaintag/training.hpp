#pragma once

// Minibatch SGD with Nesterov momentum and early stopping.

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "chaintag/data.hpp"
#include "chaintag/evaluation.hpp"
#include "chaintag/model.hpp"
#include "chaintag/numerics.hpp"

namespace chaintag {

class NonFiniteGradientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OptimizerState {
  double learning_rate = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0;  // L2 coefficient, off by default
  double clip_norm = 0.0;     // global gradient-norm clip, off when <= 0
  Gradients velocity;         // lazily shaped like the store
};

// v <- mu v - lr grad(theta + mu v);  theta <- theta + v.
// `grad_fn(store)` must fill the store's gradients; it sees the lookahead
// values. Entries marked untrainable are left alone. Returns grad_fn's result.
template <typename GradFn>
auto nesterov_step(ParameterStore& store, OptimizerState& state, GradFn&& grad_fn) {
  if (!(state.momentum >= 0.0 && state.momentum < 1.0)) {
    throw std::invalid_argument("momentum must lie in [0, 1)");
  }
  auto& entries = store.entries();
  if (state.velocity.size() != entries.size()) state.velocity = store.make_gradients();
  const double mu = state.momentum;

  std::vector<Matrix> saved(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!entries[i].trainable) continue;
    saved[i] = entries[i].value;
    auto val = entries[i].value.values();
    const auto vel = state.velocity[i].values();
    for (std::size_t k = 0; k < val.size(); ++k) val[k] += mu * vel[k];
  }
  auto restore = [&] {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].trainable) entries[i].value = saved[i];
    }
  };

  store.zero_grad();
  auto result = [&] {
    try {
      return grad_fn(store);
    } catch (...) {
      restore();
      throw;
    }
  }();

  double norm2 = 0.0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!entries[i].trainable) continue;
    if (!entries[i].grad.all_finite()) {
      restore();
      throw NonFiniteGradientError("non-finite gradient in parameter " + entries[i].name);
    }
    if (state.weight_decay > 0.0) {
      auto g = entries[i].grad.values();
      const auto v = entries[i].value.values();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += state.weight_decay * v[k];
    }
    for (double g : entries[i].grad.values()) norm2 += g * g;
  }
  const double scale =
      state.clip_norm > 0.0 && std::sqrt(norm2) > state.clip_norm ? state.clip_norm / std::sqrt(norm2) : 1.0;

  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!entries[i].trainable) continue;
    auto vel = state.velocity[i].values();
    const auto g = entries[i].grad.values();
    auto val = entries[i].value.values();
    const auto orig = saved[i].values();
    for (std::size_t k = 0; k < vel.size(); ++k) {
      vel[k] = mu * vel[k] - state.learning_rate * scale * g[k];
      val[k] = orig[k] + vel[k];
    }
  }
  return result;
}

enum class Metric { kSpanF1, kAccuracy };

inline Metric parse_metric(const std::string& s) {
  if (s == "span-f1" || s == "f1") return Metric::kSpanF1;
  if (s == "accuracy" || s == "acc") return Metric::kAccuracy;
  throw std::invalid_argument("unknown metric '" + s + "' (expected span-f1 or accuracy)");
}

struct TrainSchedule {
  std::size_t max_iterations = 100000;
  std::size_t eval_every = 1000;
  std::size_t patience = 10;
  std::size_t batch_size = 128;
  std::size_t workers = 1;
  Metric metric = Metric::kSpanF1;
};

// A corpus plus, for precomputed-embedding models, one T x d matrix per sentence.
struct Dataset {
  Corpus corpus;
  std::vector<Matrix> features;

  const Matrix* feature(std::size_t i) const { return features.empty() ? nullptr : &features[i]; }
  std::size_t size() const { return corpus.size(); }
};

struct TraceEntry {
  std::size_t iteration = 0;
  double nll = 0.0;  // mean per-sentence training nll since the previous evaluation
  double metric = 0.0;
};

struct TrainResult {
  std::vector<TraceEntry> trace;
  double best_metric = -std::numeric_limits<double>::infinity();
  std::size_t best_iteration = 0;
  std::size_t iterations = 0;
  bool early_stopped = false;
};

inline std::vector<std::vector<std::string>> predict(const Model& model, const Dataset& data) {
  std::vector<std::vector<std::string>> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.push_back(model.decode(data.corpus.sentences[i].words, data.feature(i)));
  }
  return out;
}

inline double evaluate(const Model& model, const Dataset& data, Metric metric) {
  const auto gold = data.corpus.label_strings();
  const auto pred = predict(model, data);
  if (metric == Metric::kAccuracy) return token_accuracy(gold, pred);
  return span_f1(gold, pred).f1();
}

// Mean nll of `batch` with gradients (scaled by 1/|batch|) accumulated into
// the model store. With several workers each takes a contiguous slice and
// the slices are reduced in order.
inline double batch_gradient(Model& model, const Dataset& data,
                             const std::vector<std::size_t>& batch, std::size_t workers) {
  const double scale = 1.0 / static_cast<double>(batch.size());
  workers = std::max<std::size_t>(1, std::min(workers, batch.size()));
  std::vector<Gradients> partial(workers);
  std::vector<double> nll(workers, 0.0);
  std::vector<std::exception_ptr> errors(workers);
  auto run = [&](std::size_t w) {
    try {
      partial[w] = model.store().make_gradients();
      const std::size_t lo = batch.size() * w / workers, hi = batch.size() * (w + 1) / workers;
      for (std::size_t k = lo; k < hi; ++k) {
        const std::size_t i = batch[k];
        nll[w] += static_cast<const Model&>(model).accumulate_gradient(
            data.corpus.sentences[i], data.feature(i), partial[w], scale);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(run, w);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  auto& entries = model.store().entries();
  double total = 0.0;
  for (std::size_t w = 0; w < workers; ++w) {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      add_into(entries[i].grad.values(), partial[w][i].values());
    }
    total += nll[w];
  }
  return total / static_cast<double>(batch.size());
}

using MetricFn = std::function<double(const Model&)>;

// Trains in place. On return the model holds the best-scoring parameters
// seen at an evaluation. Evaluations happen every `eval_every` iterations
// (batches) and once more at max_iterations if that is not a multiple.
inline TrainResult train(Model& model, const Dataset& train_data, const Dataset& valid_data,
                         const TrainSchedule& schedule, OptimizerState& opt, Rng rng,
                         std::ostream* log = nullptr, MetricFn metric_fn = {}) {
  if (train_data.size() == 0) throw std::invalid_argument("training corpus is empty");
  if (!metric_fn && valid_data.size() == 0) throw std::invalid_argument("validation corpus is empty");
  if (schedule.eval_every == 0 || schedule.patience == 0) {
    throw std::invalid_argument("eval_every and patience must be >= 1");
  }
  if (!(train_data.corpus.labels == model.labels())) {
    throw LabelMismatchError("training corpus label set differs from the model's");
  }
  if (!metric_fn) {
    metric_fn = [&](const Model& m) { return evaluate(m, valid_data, schedule.metric); };
  }

  BatchStream stream(train_data.size(), schedule.batch_size, std::move(rng), true);
  TrainResult result;
  ParameterStore best = model.store();
  double nll_sum = 0.0;
  std::size_t nll_count = 0;
  std::size_t stale = 0;

  for (std::size_t it = 1; it <= schedule.max_iterations; ++it) {
    const auto batch = stream.next();
    nll_sum += nesterov_step(model.store(), opt, [&](ParameterStore&) {
      return batch_gradient(model, train_data, batch, schedule.workers);
    });
    ++nll_count;
    result.iterations = it;

    if (it % schedule.eval_every != 0 && it != schedule.max_iterations) continue;
    TraceEntry e{it, nll_sum / static_cast<double>(nll_count), metric_fn(model)};
    nll_sum = 0.0;
    nll_count = 0;
    result.trace.push_back(e);
    if (log) {
      char buf[128];
      std::snprintf(buf, sizeof(buf), "ITER %zu NLL %.6f METRIC %.6f\n", e.iteration, e.nll, e.metric);
      *log << buf << std::flush;
    }
    if (e.metric > result.best_metric) {
      result.best_metric = e.metric;
      result.best_iteration = it;
      best = model.store();
      stale = 0;
    } else if (++stale >= schedule.patience) {
      result.early_stopped = true;
      break;
    }
  }
  auto& entries = model.store().entries();
  for (std::size_t i = 0; i < entries.size(); ++i) entries[i].value = best.entries()[i].value;
  model.store().zero_grad();
  return result;
}

}  // namespace chaintag
