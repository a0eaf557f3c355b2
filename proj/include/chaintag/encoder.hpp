#pragma once

// Optional sequence encoder: identity, or a bidirectional LSTM whose output
// at t is [forward state; backward state].

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "chaintag/numerics.hpp"

namespace chaintag {

namespace detail {

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

struct LstmStep {
  std::size_t position = 0;
  std::vector<double> h_prev, c_prev;
  std::vector<double> in, forget, cell, out;  // gate activations
  std::vector<double> c, tanh_c;
};

struct LstmCache {
  std::array<std::vector<LstmStep>, 2> steps;  // [forward, backward], in processing order
};

struct EncodedSequence {
  Matrix states;                    // T x dim
  std::optional<LstmCache> cache;   // present iff built in training mode by a BiLstm
};

inline EncodedSequence identity_encode(const Matrix& h) { return EncodedSequence{h, std::nullopt}; }

class BiLstm {
 public:
  enum Gate { kInput = 0, kForget = 1, kCell = 2, kOutput = 3 };
  static constexpr std::array<const char*, 4> kGateNames = {"input_gate", "forget_gate", "cell",
                                                            "output_gate"};

  BiLstm() = default;

  BiLstm(ParameterStore& store, const std::string& prefix, std::size_t input_dim,
         std::size_t hidden_dim)
      : input_dim_(input_dim), hidden_dim_(hidden_dim) {
    if (input_dim == 0 || hidden_dim == 0) throw ShapeError("BiLSTM dims must be positive");
    const char* dirs[2] = {"forward", "backward"};
    for (int d = 0; d < 2; ++d) {
      for (int g = 0; g < 4; ++g) {
        const std::string base = prefix + "." + dirs[d] + "." + kGateNames[g];
        auto& p = params_[d][g];
        p.input = store.add(base + ".input", hidden_dim, input_dim, ParamKind::kWeight);
        p.recurrent = store.add(base + ".recurrent", hidden_dim, hidden_dim, ParamKind::kWeight);
        p.bias = store.add(base + ".bias", hidden_dim, 1, ParamKind::kBias);
      }
    }
  }

  std::size_t input_dim() const { return input_dim_; }
  std::size_t hidden_dim() const { return hidden_dim_; }
  std::size_t output_dim() const { return 2 * hidden_dim_; }

  void set_forget_bias(ParameterStore& store, double value) const {
    for (int d = 0; d < 2; ++d) store.value(params_[d][kForget].bias).fill(value);
  }

  EncodedSequence forward(const ParameterStore& store, const Matrix& h, bool training) const {
    if (h.cols() != input_dim_) {
      throw ShapeError("BiLSTM expects input dim " + std::to_string(input_dim_) + ", got " +
                       std::to_string(h.cols()));
    }
    const std::size_t T = h.rows();
    const std::size_t H = hidden_dim_;
    EncodedSequence out{Matrix(T, 2 * H), std::nullopt};
    if (training) out.cache.emplace();

    for (int d = 0; d < 2; ++d) {
      std::vector<double> h_prev(H, 0.0), c_prev(H, 0.0);
      for (std::size_t k = 0; k < T; ++k) {
        const std::size_t t = d == 0 ? k : T - 1 - k;
        const auto x = h.row(t);
        std::array<std::vector<double>, 4> act;
        for (int g = 0; g < 4; ++g) {
          const auto& p = params_[d][g];
          act[g] = matvec(store.value(p.input), x);
          const auto rec = matvec(store.value(p.recurrent), h_prev);
          const auto& b = store.value(p.bias);
          for (std::size_t j = 0; j < H; ++j) {
            const double a = act[g][j] + rec[j] + b(j, 0);
            act[g][j] = g == kCell ? std::tanh(a) : detail::sigmoid(a);
          }
        }
        std::vector<double> c(H), tanh_c(H), h_cur(H);
        for (std::size_t j = 0; j < H; ++j) {
          c[j] = act[kForget][j] * c_prev[j] + act[kInput][j] * act[kCell][j];
          tanh_c[j] = std::tanh(c[j]);
          h_cur[j] = act[kOutput][j] * tanh_c[j];
          out.states(t, d * H + j) = h_cur[j];
        }
        if (training) {
          out.cache->steps[d].push_back(LstmStep{t, h_prev, c_prev, std::move(act[kInput]),
                                                 std::move(act[kForget]), std::move(act[kCell]),
                                                 std::move(act[kOutput]), c, tanh_c});
        }
        h_prev = std::move(h_cur);
        c_prev = std::move(c);
      }
    }
    return out;
  }

  // Accumulates parameter gradients into `grads` and returns dL/dh (T x input_dim).
  Matrix backward(const ParameterStore& store, const Matrix& h, const EncodedSequence& enc,
                  const Matrix& upstream, Gradients& grads) const {
    if (!enc.cache) throw StateError("BiLSTM backward needs a forward pass built in training mode");
    const std::size_t T = h.rows();
    const std::size_t H = hidden_dim_;
    if (upstream.rows() != T || upstream.cols() != 2 * H) {
      throw ShapeError("BiLSTM upstream gradient has wrong shape");
    }
    Matrix dh_in(T, input_dim_);
    for (int d = 0; d < 2; ++d) {
      const auto& steps = enc.cache->steps[d];
      std::vector<double> dh_next(H, 0.0), dc_next(H, 0.0);
      for (std::size_t k = steps.size(); k-- > 0;) {
        const LstmStep& s = steps[k];
        const auto x = h.row(s.position);
        std::array<std::vector<double>, 4> da;
        for (auto& v : da) v.assign(H, 0.0);
        for (std::size_t j = 0; j < H; ++j) {
          const double dh = upstream(s.position, d * H + j) + dh_next[j];
          const double d_out = dh * s.tanh_c[j];
          const double dc = dh * s.out[j] * (1.0 - s.tanh_c[j] * s.tanh_c[j]) + dc_next[j];
          const double d_in = dc * s.cell[j];
          const double d_cell = dc * s.in[j];
          const double d_forget = dc * s.c_prev[j];
          dc_next[j] = dc * s.forget[j];
          da[kInput][j] = d_in * s.in[j] * (1.0 - s.in[j]);
          da[kForget][j] = d_forget * s.forget[j] * (1.0 - s.forget[j]);
          da[kCell][j] = d_cell * (1.0 - s.cell[j] * s.cell[j]);
          da[kOutput][j] = d_out * s.out[j] * (1.0 - s.out[j]);
        }
        std::fill(dh_next.begin(), dh_next.end(), 0.0);
        for (int g = 0; g < 4; ++g) {
          const auto& p = params_[d][g];
          add_outer(grads[p.input.index], da[g], x);
          add_outer(grads[p.recurrent.index], da[g], s.h_prev);
          add_into(grads[p.bias.index].values(), da[g]);
          add_matvec_transposed(store.value(p.input), da[g], dh_in.row(s.position));
          add_matvec_transposed(store.value(p.recurrent), da[g], dh_next);
        }
      }
    }
    return dh_in;
  }

 private:
  struct GateParams {
    ParamRef input, recurrent, bias;
  };
  std::size_t input_dim_ = 0;
  std::size_t hidden_dim_ = 0;
  std::array<std::array<GateParams, 4>, 2> params_{};
};

}  // namespace chaintag
