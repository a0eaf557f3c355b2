#pragma once

// Exhaustive enumeration over all |Y|^T label sequences. Test oracle for
// the chain recursions; scores are rebuilt from the raw family tables.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "chaintag/numerics.hpp"
#include "chaintag/potentials.hpp"

namespace chaintag {

class TooLargeError : public std::length_error {
 public:
  using std::length_error::length_error;
};

struct BruteForceResult {
  double log_z = 0.0;
  Matrix node_marginals;
  std::vector<Matrix> edge_marginals;
  std::vector<int> argmax;
  double best_score = -std::numeric_limits<double>::infinity();
  std::size_t sequences = 0;
};

inline constexpr std::size_t kBruteForceLimit = 1'000'000;

inline BruteForceResult brute_force(const PotentialLattice& lat,
                                    std::size_t limit = kBruteForceLimit) {
  lat.validate();
  const std::size_t T = lat.length, L = lat.labels;
  double count = std::pow(static_cast<double>(L), static_cast<double>(T));
  if (count > static_cast<double>(limit)) {
    throw TooLargeError("brute force refused: " + std::to_string(L) + "^" + std::to_string(T) +
                        " sequences exceeds " + std::to_string(limit));
  }
  const std::size_t n = static_cast<std::size_t>(std::llround(count));

  auto unary_at = [&](std::size_t t, int y) {
    double u = 0.0;
    for (const auto& table : lat.unary) {
      if (table) u += (*table)(t, static_cast<std::size_t>(y));
    }
    return u;
  };
  auto score_of = [&](const std::vector<int>& ys) {
    double s = lat.transition(L, static_cast<std::size_t>(ys[0])) + unary_at(0, ys[0]);
    for (std::size_t t = 1; t < T; ++t) {
      s = s + lat.transition(static_cast<std::size_t>(ys[t - 1]), static_cast<std::size_t>(ys[t])) +
          unary_at(t, ys[t]);
    }
    return s;
  };
  // Viterbi's backtracking rule picks, among optimal sequences, the one that
  // is smallest when compared from the last position backwards.
  auto reverse_less = [&](const std::vector<int>& a, const std::vector<int>& b) {
    for (std::size_t t = T; t-- > 0;) {
      if (a[t] != b[t]) return a[t] < b[t];
    }
    return false;
  };

  BruteForceResult res;
  res.sequences = n;
  std::vector<double> scores(n);
  std::vector<int> ys(T, 0);
  for (std::size_t k = 0; k < n; ++k) {
    const double s = score_of(ys);
    scores[k] = s;
    if (s > res.best_score || (s == res.best_score && reverse_less(ys, res.argmax))) {
      res.best_score = s;
      res.argmax = ys;
    }
    for (std::size_t t = T; t-- > 0;) {
      if (++ys[t] < static_cast<int>(L)) break;
      ys[t] = 0;
    }
  }
  res.log_z = log_sum_exp(scores);

  res.node_marginals = Matrix(T, L);
  res.edge_marginals.assign(T > 0 ? T - 1 : 0, Matrix(L, L));
  std::fill(ys.begin(), ys.end(), 0);
  for (std::size_t k = 0; k < n; ++k) {
    const double p = std::exp(scores[k] - res.log_z);
    for (std::size_t t = 0; t < T; ++t) {
      res.node_marginals(t, static_cast<std::size_t>(ys[t])) += p;
      if (t + 1 < T) {
        res.edge_marginals[t](static_cast<std::size_t>(ys[t]), static_cast<std::size_t>(ys[t + 1])) += p;
      }
    }
    for (std::size_t t = T; t-- > 0;) {
      if (++ys[t] < static_cast<int>(L)) break;
      ys[t] = 0;
    }
  }
  return res;
}

// Random lattice with the given families active; entries uniform in [lo, hi].
// Rows whose source state lies outside the sentence are zero, as built by
// PotentialLayer.
inline PotentialLattice random_lattice(const std::vector<Family>& families, std::size_t T,
                                       std::size_t L, Rng& rng, double lo = -2.0,
                                       double hi = 2.0) {
  PotentialLattice lat;
  lat.length = T;
  lat.labels = L;
  lat.transition = Matrix(L + 1, L);
  for (double& v : lat.transition.values()) v = rng.uniform(lo, hi);
  for (Family f : families) {
    Matrix table(T, L);
    for (std::size_t t = 0; t < T; ++t) {
      if (f != Family::kWindow) {
        const long src = static_cast<long>(t) + family_offset(f);
        if (src < 0 || src >= static_cast<long>(T)) continue;
      }
      for (double& v : table.row(t)) v = rng.uniform(lo, hi);
    }
    lat.unary[static_cast<int>(f)] = std::move(table);
  }
  return lat;
}

}  // namespace chaintag
