#pragma once

// Transition table and per-position unary log-potentials.
//
// Unary families are indexed by which encoder state they read:
//   prev2 (t-2), prev (t-1), center (t), next (t+1), next2 (t+2), and window
//   ([t-1; t; t+1], zero-padded at the ends). A family whose source position
//   falls outside the sentence contributes an all-zero row.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "chaintag/numerics.hpp"

namespace chaintag {

enum class Family : int { kPrev2 = 0, kPrev, kCenter, kNext, kNext2, kWindow };
inline constexpr std::size_t kFamilyCount = 6;
inline constexpr std::array<Family, kFamilyCount> kAllFamilies = {
    Family::kPrev2, Family::kPrev, Family::kCenter, Family::kNext, Family::kNext2, Family::kWindow};

inline const char* family_name(Family f) {
  static constexpr const char* names[] = {"prev2", "prev", "center", "next", "next2", "window"};
  return names[static_cast<int>(f)];
}

// Offset of the encoder state read by a single-position family.
inline int family_offset(Family f) {
  static constexpr int offsets[] = {-2, -1, 0, 1, 2, 0};
  return offsets[static_cast<int>(f)];
}

enum class Context { kChainOnly, kLocal, kWide, kConcat };
enum class PotentialForm { kLinear, kNonlinear };

inline std::vector<Family> families_for(Context c) {
  switch (c) {
    case Context::kChainOnly: return {Family::kCenter};
    case Context::kLocal: return {Family::kPrev, Family::kCenter, Family::kNext};
    case Context::kWide:
      return {Family::kPrev2, Family::kPrev, Family::kCenter, Family::kNext, Family::kNext2};
    case Context::kConcat: return {Family::kWindow};
  }
  return {};
}

// Log-potentials for one sentence. Row `labels` of the transition table is
// the begin-of-sentence row.
struct PotentialLattice {
  std::size_t length = 0;
  std::size_t labels = 0;
  Matrix transition;                                     // (labels + 1) x labels
  std::array<std::optional<Matrix>, kFamilyCount> unary;  // each length x labels

  std::size_t bos() const { return labels; }

  bool active(Family f) const { return unary[static_cast<int>(f)].has_value(); }
  const Matrix& family(Family f) const { return *unary[static_cast<int>(f)]; }

  // Per-position sum of all active families, accumulated in family order.
  Matrix node_scores() const {
    Matrix out(length, labels);
    for (const auto& u : unary) {
      if (!u) continue;
      add_into(out.values(), u->values());
    }
    return out;
  }

  void validate() const {
    if (length == 0 || labels == 0) throw ShapeError("lattice needs T >= 1 and at least one label");
    if (transition.rows() != labels + 1 || transition.cols() != labels) {
      throw ShapeError("transition table must be (labels + 1) x labels");
    }
    for (const auto& u : unary) {
      if (u && (u->rows() != length || u->cols() != labels)) {
        throw ShapeError("unary table must be T x labels");
      }
    }
  }
};

struct MlpCache {
  std::vector<double> input, pre1, hidden1, pre2, hidden2, sum;
};

// Two ReLU layers of equal width with a skip connection, then a linear
// output layer:  u1 = relu(W1 v + b1); u2 = relu(W2 u1 + b2); out = W3 (u1 + u2) + b3.
class PotentialNet {
 public:
  PotentialNet() = default;
  PotentialNet(ParameterStore& store, const std::string& prefix, std::size_t input_dim,
               std::size_t hidden, std::size_t outputs)
      : input_dim_(input_dim), hidden_(hidden), outputs_(outputs) {
    w1_ = store.add(prefix + ".hidden1.weight", hidden, input_dim, ParamKind::kWeight);
    b1_ = store.add(prefix + ".hidden1.bias", hidden, 1, ParamKind::kBias);
    w2_ = store.add(prefix + ".hidden2.weight", hidden, hidden, ParamKind::kWeight);
    b2_ = store.add(prefix + ".hidden2.bias", hidden, 1, ParamKind::kBias);
    w3_ = store.add(prefix + ".output.weight", outputs, hidden, ParamKind::kWeight);
    b3_ = store.add(prefix + ".output.bias", outputs, 1, ParamKind::kBias);
  }

  std::size_t input_dim() const { return input_dim_; }
  std::size_t hidden() const { return hidden_; }

  std::vector<double> forward(const ParameterStore& store, std::span<const double> v,
                              MlpCache* cache) const {
    if (v.size() != input_dim_) {
      throw ShapeError("potential net expects input " + std::to_string(input_dim_) + ", got " +
                       std::to_string(v.size()));
    }
    auto pre1 = matvec(store.value(w1_), v);
    add_into(pre1, store.value(b1_).values());
    std::vector<double> u1(hidden_);
    for (std::size_t j = 0; j < hidden_; ++j) u1[j] = pre1[j] > 0 ? pre1[j] : 0.0;
    auto pre2 = matvec(store.value(w2_), u1);
    add_into(pre2, store.value(b2_).values());
    std::vector<double> u2(hidden_), s(hidden_);
    for (std::size_t j = 0; j < hidden_; ++j) {
      u2[j] = pre2[j] > 0 ? pre2[j] : 0.0;
      s[j] = u1[j] + u2[j];
    }
    auto out = matvec(store.value(w3_), s);
    add_into(out, store.value(b3_).values());
    if (cache) {
      *cache = MlpCache{std::vector<double>(v.begin(), v.end()), std::move(pre1), std::move(u1),
                        std::move(pre2), std::move(u2), std::move(s)};
    }
    return out;
  }

  // Accumulates parameter gradients; adds dL/dv into `dv`.
  void backward(const ParameterStore& store, const MlpCache& c, std::span<const double> dout,
                Gradients& grads, std::span<double> dv) const {
    add_outer(grads[w3_.index], dout, c.sum);
    add_into(grads[b3_.index].values(), dout);
    std::vector<double> ds(hidden_, 0.0);
    add_matvec_transposed(store.value(w3_), dout, ds);
    std::vector<double> dpre2(hidden_);
    for (std::size_t j = 0; j < hidden_; ++j) dpre2[j] = c.pre2[j] > 0 ? ds[j] : 0.0;
    add_outer(grads[w2_.index], dpre2, c.hidden1);
    add_into(grads[b2_.index].values(), dpre2);
    std::vector<double> du1 = ds;
    add_matvec_transposed(store.value(w2_), dpre2, du1);
    std::vector<double> dpre1(hidden_);
    for (std::size_t j = 0; j < hidden_; ++j) dpre1[j] = c.pre1[j] > 0 ? du1[j] : 0.0;
    add_outer(grads[w1_.index], dpre1, c.input);
    add_into(grads[b1_.index].values(), dpre1);
    add_matvec_transposed(store.value(w1_), dpre1, dv);
  }

 private:
  std::size_t input_dim_ = 0, hidden_ = 0, outputs_ = 0;
  ParamRef w1_, b1_, w2_, b2_, w3_, b3_;
};

// B v
inline std::vector<double> linear_emission(const Matrix& b, std::span<const double> v) {
  return matvec(b, v);
}

// A per-family scorer: either a PotentialNet or a linear map B.
class UnaryScorer {
 public:
  UnaryScorer() = default;
  UnaryScorer(ParameterStore& store, const std::string& prefix, PotentialForm form,
              std::size_t input_dim, std::size_t hidden, std::size_t labels)
      : form_(form), input_dim_(input_dim) {
    if (form == PotentialForm::kNonlinear) {
      net_ = PotentialNet(store, prefix, input_dim, hidden, labels);
    } else {
      linear_ = store.add(prefix + ".linear", labels, input_dim, ParamKind::kWeight);
    }
  }

  PotentialForm form() const { return form_; }
  std::size_t input_dim() const { return input_dim_; }

  std::vector<double> forward(const ParameterStore& store, std::span<const double> v,
                              MlpCache* cache) const {
    if (form_ == PotentialForm::kNonlinear) return net_.forward(store, v, cache);
    if (cache) cache->input.assign(v.begin(), v.end());
    return linear_emission(store.value(linear_), v);
  }

  void backward(const ParameterStore& store, const MlpCache& c, std::span<const double> dout,
                Gradients& grads, std::span<double> dv) const {
    if (form_ == PotentialForm::kNonlinear) {
      net_.backward(store, c, dout, grads, dv);
      return;
    }
    add_outer(grads[linear_.index], dout, c.input);
    add_matvec_transposed(store.value(linear_), dout, dv);
  }

 private:
  PotentialForm form_ = PotentialForm::kNonlinear;
  std::size_t input_dim_ = 0;
  PotentialNet net_;
  ParamRef linear_;
};

// Per-family, per-position forward caches. Positions whose source state is
// outside the sentence have no entry (their rows are fixed zeros).
struct LatticeCache {
  std::array<std::vector<std::optional<MlpCache>>, kFamilyCount> steps;
};

class PotentialLayer {
 public:
  PotentialLayer() = default;
  PotentialLayer(ParameterStore& store, Context context, PotentialForm form,
                 std::size_t input_dim, std::size_t hidden, std::size_t labels)
      : context_(context), form_(form), input_dim_(input_dim), labels_(labels) {
    if (labels == 0) throw ShapeError("label set is empty");
    if (form == PotentialForm::kLinear &&
        (context == Context::kWide || context == Context::kConcat)) {
      throw std::invalid_argument("wide and concat contexts are defined for nonlinear potentials only");
    }
    transition_ = store.add("transition", labels + 1, labels, ParamKind::kTransition);
    for (Family f : families_for(context)) {
      const std::size_t in = f == Family::kWindow ? 3 * input_dim : input_dim;
      scorers_[static_cast<int>(f)].emplace(store, std::string("potentials.") + family_name(f),
                                            form, in, hidden, labels);
    }
  }

  Context context() const { return context_; }
  PotentialForm form() const { return form_; }
  std::size_t labels() const { return labels_; }
  ParamRef transition() const { return transition_; }
  bool has(Family f) const { return scorers_[static_cast<int>(f)].has_value(); }

  // Fault injection for self-test: negates the next-neighbour family in the
  // forward pass only, leaving backward untouched.
  void inject_next_sign_flip(bool on) { flip_next_sign_ = on; }

  PotentialLattice build(const ParameterStore& store, const Matrix& g, LatticeCache* cache) const {
    if (g.cols() != input_dim_) {
      throw ShapeError("potential layer expects state dim " + std::to_string(input_dim_) +
                       ", got " + std::to_string(g.cols()));
    }
    const std::size_t T = g.rows();
    PotentialLattice lat;
    lat.length = T;
    lat.labels = labels_;
    lat.transition = store.value(transition_);
    for (Family f : kAllFamilies) {
      const int fi = static_cast<int>(f);
      if (!scorers_[fi]) continue;
      Matrix table(T, labels_);
      if (cache) cache->steps[fi].assign(T, std::nullopt);
      for (std::size_t t = 0; t < T; ++t) {
        std::vector<double> input;
        std::span<const double> v;
        if (f == Family::kWindow) {
          input = window_input(g, t);
          v = input;
        } else {
          const long src = static_cast<long>(t) + family_offset(f);
          if (src < 0 || src >= static_cast<long>(T)) continue;
          v = g.row(static_cast<std::size_t>(src));
        }
        MlpCache* mc = nullptr;
        if (cache) mc = &cache->steps[fi][t].emplace();
        auto out = scorers_[fi]->forward(store, v, mc);
        if (flip_next_sign_ && f == Family::kNext) {
          for (double& x : out) x = -x;
        }
        std::copy(out.begin(), out.end(), table.row(t).begin());
      }
      lat.unary[fi] = std::move(table);
    }
    return lat;
  }

  // `upstream[f]` is dL/d(log unary of family f), T x labels. Returns dL/dg.
  Matrix backward(const ParameterStore& store, std::size_t length, const LatticeCache& cache,
                  const std::array<const Matrix*, kFamilyCount>& upstream,
                  Gradients& grads) const {
    const std::size_t T = length;
    Matrix dg(T, input_dim_);
    for (Family f : kAllFamilies) {
      const int fi = static_cast<int>(f);
      if (!scorers_[fi]) continue;
      if (!upstream[fi]) throw ShapeError(std::string("missing upstream gradient for ") + family_name(f));
      if (cache.steps[fi].size() != T) throw StateError("lattice backward needs a training-mode build");
      for (std::size_t t = 0; t < T; ++t) {
        const auto& mc = cache.steps[fi][t];
        if (!mc) continue;
        const auto dout = upstream[fi]->row(t);
        if (f == Family::kWindow) {
          std::vector<double> dv(3 * input_dim_, 0.0);
          scorers_[fi]->backward(store, *mc, dout, grads, dv);
          for (int k = -1; k <= 1; ++k) {
            const long src = static_cast<long>(t) + k;
            if (src < 0 || src >= static_cast<long>(T)) continue;
            add_into(dg.row(static_cast<std::size_t>(src)),
                     std::span<const double>(dv).subspan(static_cast<std::size_t>(k + 1) * input_dim_,
                                                         input_dim_));
          }
        } else {
          const std::size_t src = static_cast<std::size_t>(static_cast<long>(t) + family_offset(f));
          scorers_[fi]->backward(store, *mc, dout, grads, dg.row(src));
        }
      }
    }
    return dg;
  }

 private:
  std::vector<double> window_input(const Matrix& g, std::size_t t) const {
    std::vector<double> v(3 * input_dim_, 0.0);
    for (int k = -1; k <= 1; ++k) {
      const long src = static_cast<long>(t) + k;
      if (src < 0 || src >= static_cast<long>(g.rows())) continue;
      auto row = g.row(static_cast<std::size_t>(src));
      std::copy(row.begin(), row.end(), v.begin() + (k + 1) * static_cast<long>(input_dim_));
    }
    return v;
  }

  Context context_ = Context::kLocal;
  PotentialForm form_ = PotentialForm::kNonlinear;
  std::size_t input_dim_ = 0;
  std::size_t labels_ = 0;
  ParamRef transition_;
  std::array<std::optional<UnaryScorer>, kFamilyCount> scorers_;
  bool flip_next_sign_ = false;
};

}  // namespace chaintag
