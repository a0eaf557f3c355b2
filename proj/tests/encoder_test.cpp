#include <gtest/gtest.h>

#include <cmath>

#include "chaintag/encoder.hpp"
#include "chaintag/gradcheck.hpp"

using namespace chaintag;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.uniform(-scale, scale);
  return m;
}

void randomize(ParameterStore& s, Rng& rng) {
  for (auto& e : s.entries()) {
    for (double& v : e.value.values()) v = rng.uniform(-0.5, 0.5);
  }
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Single-unit-at-a-time reference: reads weights by name, loops written out.
Matrix reference_bilstm(const ParameterStore& s, const Matrix& x, std::size_t H) {
  const std::size_t T = x.rows(), D = x.cols();
  Matrix out(T, 2 * H);
  const char* dir_names[2] = {"forward", "backward"};
  for (int d = 0; d < 2; ++d) {
    const std::string p = std::string("enc.") + dir_names[d] + ".";
    auto pre = [&](const std::string& gate, std::size_t j, std::span<const double> xt,
                   const std::vector<double>& hp) {
      const Matrix& W = s.value(p + gate + ".input");
      const Matrix& U = s.value(p + gate + ".recurrent");
      double a = s.value(p + gate + ".bias")(j, 0);
      for (std::size_t k = 0; k < D; ++k) a += W(j, k) * xt[k];
      for (std::size_t k = 0; k < H; ++k) a += U(j, k) * hp[k];
      return a;
    };
    std::vector<double> hp(H, 0.0), cp(H, 0.0);
    for (std::size_t step = 0; step < T; ++step) {
      const std::size_t t = d == 0 ? step : T - 1 - step;
      std::vector<double> hn(H), cn(H);
      for (std::size_t j = 0; j < H; ++j) {
        const double i = sig(pre("input_gate", j, x.row(t), hp));
        const double f = sig(pre("forget_gate", j, x.row(t), hp));
        const double g = std::tanh(pre("cell", j, x.row(t), hp));
        const double o = sig(pre("output_gate", j, x.row(t), hp));
        cn[j] = f * cp[j] + i * g;
        hn[j] = o * std::tanh(cn[j]);
        out(t, d * H + j) = hn[j];
      }
      hp = hn;
      cp = cn;
    }
  }
  return out;
}

}  // namespace

TEST(BiLstm, ZeroParametersGiveZeroOutput) {
  ParameterStore s;
  BiLstm enc(s, "enc", 300, 300);
  Rng rng(1);
  const Matrix x = random_matrix(5, 300, rng);
  const auto out = enc.forward(s, x, false);
  EXPECT_EQ(out.states.rows(), 5u);
  EXPECT_EQ(out.states.cols(), 600u);
  // c = 0.5*0 + 0.5*tanh(0) = 0 each step
  for (double v : out.states.values()) EXPECT_EQ(v, 0.0);
  EXPECT_FALSE(out.cache.has_value());
}

TEST(BiLstm, MatchesStraightLineReference) {
  Rng rng(4);
  for (std::size_t T : {1u, 3u, 6u}) {
    ParameterStore s;
    BiLstm enc(s, "enc", 3, 2);
    randomize(s, rng);
    const Matrix x = random_matrix(T, 3, rng);
    const Matrix want = reference_bilstm(s, x, 2);
    const Matrix got = enc.forward(s, x, false).states;
    for (std::size_t k = 0; k < want.size(); ++k) {
      EXPECT_NEAR(got.values()[k], want.values()[k], 1e-14);
    }
  }
}

TEST(BiLstm, ForwardDirectionIgnoresFuture) {
  Rng rng(6);
  ParameterStore s;
  BiLstm enc(s, "enc", 2, 3);
  randomize(s, rng);
  Matrix x = random_matrix(4, 2, rng);
  const Matrix a = enc.forward(s, x, false).states;
  x(3, 0) += 1.0;
  const Matrix b = enc.forward(s, x, false).states;
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(a(t, j), b(t, j));
  }
  bool backward_changed = false;
  for (std::size_t j = 3; j < 6; ++j) backward_changed |= a(0, j) != b(0, j);
  EXPECT_TRUE(backward_changed);
}

TEST(BiLstm, BackwardMatchesFiniteDifferences) {
  Rng rng(9);
  ParameterStore s;
  BiLstm enc(s, "enc", 3, 2);
  randomize(s, rng);
  const Matrix x = random_matrix(4, 3, rng);
  const Matrix upstream = random_matrix(4, 4, rng);
  // loss = <upstream, states>
  auto loss = [&](const ParameterStore& st) {
    const Matrix y = enc.forward(st, x, false).states;
    double l = 0;
    for (std::size_t k = 0; k < y.size(); ++k) l += y.values()[k] * upstream.values()[k];
    return l;
  };
  Gradients g = s.make_gradients();
  const auto fw = enc.forward(s, x, true);
  const Matrix dx = enc.backward(s, x, fw, upstream, g);
  const auto rep = check_gradients(s, g, loss);
  EXPECT_TRUE(rep.passed()) << rep.worst.parameter << " " << rep.worst.relative_error;
  EXPECT_EQ(rep.checked, 2u * 4 * (2 * 3 + 2 * 2 + 2));

  Matrix xp = x;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double h = 1e-6;
    xp.values()[k] = x.values()[k] + h;
    const Matrix yu = enc.forward(s, xp, false).states;
    xp.values()[k] = x.values()[k] - h;
    const Matrix yd = enc.forward(s, xp, false).states;
    xp.values()[k] = x.values()[k];
    double num = 0;
    for (std::size_t m = 0; m < yu.size(); ++m) {
      num += (yu.values()[m] - yd.values()[m]) * upstream.values()[m];
    }
    num /= 2 * h;
    EXPECT_LE(relative_error(dx.values()[k], num, 1e-8), 1e-6);
  }
}

TEST(BiLstm, ZeroUpstreamGivesZeroGradients) {
  Rng rng(2);
  ParameterStore s;
  BiLstm enc(s, "enc", 2, 2);
  randomize(s, rng);
  const Matrix x = random_matrix(3, 2, rng);
  Gradients g = s.make_gradients();
  const auto fw = enc.forward(s, x, true);
  const Matrix dx = enc.backward(s, x, fw, Matrix(3, 4), g);
  for (double v : dx.values()) EXPECT_EQ(v, 0.0);
  for (const auto& m : g) {
    for (double v : m.values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(BiLstm, BackwardWithoutTrainingCacheIsStateError) {
  ParameterStore s;
  BiLstm enc(s, "enc", 2, 2);
  const Matrix x(3, 2);
  Gradients g = s.make_gradients();
  const auto fw = enc.forward(s, x, false);
  EXPECT_THROW(enc.backward(s, x, fw, Matrix(3, 4), g), StateError);
  const auto fw2 = enc.forward(s, x, true);
  EXPECT_THROW(enc.backward(s, x, fw2, Matrix(3, 3), g), ShapeError);
  EXPECT_THROW(enc.forward(s, Matrix(3, 5), false), ShapeError);
}

TEST(BiLstm, ForgetBiasSetter) {
  ParameterStore s;
  BiLstm enc(s, "enc", 2, 3);
  enc.set_forget_bias(s, 1.0);
  for (const char* d : {"forward", "backward"}) {
    for (double v : s.value(std::string("enc.") + d + ".forget_gate.bias").values()) EXPECT_EQ(v, 1.0);
    for (double v : s.value(std::string("enc.") + d + ".input_gate.bias").values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(IdentityEncoder, BitExact) {
  Rng rng(3);
  const Matrix x = random_matrix(4, 5, rng);
  const auto e = identity_encode(x);
  EXPECT_EQ(e.states, x);
  EXPECT_FALSE(e.cache.has_value());
}
