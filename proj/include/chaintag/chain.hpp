#pragma once

// Exact inference on the label chain, in log space.
//
// The score of a label sequence y is
//   A[BOS, y_1] + sum_{t>1} A[y_{t-1}, y_t] + sum_t node_t(y_t)
// where node_t is the sum of every active unary family at t. A family that
// reads a neighbour state (e.g. the next-neighbour term of label y_{t-1}) is
// still a function of a single label, so folding it into that label's node
// score leaves the recursion O(T |Y|^2).

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "chaintag/numerics.hpp"
#include "chaintag/potentials.hpp"

namespace chaintag {

struct ForwardTrellis {
  Matrix log_alpha;    // T x |Y|
  Matrix node_scores;  // T x |Y|
};

struct PartitionResult {
  double log_z = 0.0;
  ForwardTrellis trellis;
};

struct ChainPosterior {
  double log_z = 0.0;
  Matrix node_marginals;              // T x |Y|
  std::vector<Matrix> edge_marginals;  // T-1 slabs of |Y| x |Y|; [t](a, b) = p(y_t = a, y_{t+1} = b)
};

struct ViterbiResult {
  std::vector<int> labels;
  double score = 0.0;
};

// Gradients of the negative log-likelihood with respect to lattice entries.
// `unary` applies to every active family's table (they enter the score
// additively).
struct ChainGradients {
  double nll = 0.0;
  Matrix transition;  // (|Y| + 1) x |Y|
  Matrix unary;       // T x |Y|
};

namespace detail {

// log sum_a exp(prev[a] + trans(a, b)) for each b, without allocating.
inline void log_matvec(const std::vector<double>& prev, const Matrix& trans, std::size_t rows,
                       std::span<double> out) {
  const std::size_t L = out.size();
  for (std::size_t b = 0; b < L; ++b) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < rows; ++a) m = std::max(m, prev[a] + trans(a, b));
    double s = 0.0;
    for (std::size_t a = 0; a < rows; ++a) s += std::exp(prev[a] + trans(a, b) - m);
    out[b] = m + std::log(s);
  }
}

}  // namespace detail

inline PartitionResult log_partition(const PotentialLattice& lat) {
  lat.validate();
  const std::size_t T = lat.length, L = lat.labels;
  PartitionResult res;
  res.trellis.node_scores = lat.node_scores();
  res.trellis.log_alpha = Matrix(T, L);
  const Matrix& node = res.trellis.node_scores;
  Matrix& alpha = res.trellis.log_alpha;
  for (std::size_t y = 0; y < L; ++y) alpha(0, y) = lat.transition(lat.bos(), y) + node(0, y);
  std::vector<double> prev(L);
  for (std::size_t t = 1; t < T; ++t) {
    auto prow = alpha.row(t - 1);
    std::copy(prow.begin(), prow.end(), prev.begin());
    auto row = alpha.row(t);
    detail::log_matvec(prev, lat.transition, L, row);
    for (std::size_t y = 0; y < L; ++y) row[y] += node(t, y);
  }
  res.log_z = log_sum_exp(alpha.row(T - 1));
  return res;
}

inline ChainPosterior posteriors(const PotentialLattice& lat) {
  auto fwd = log_partition(lat);
  const std::size_t T = lat.length, L = lat.labels;
  const Matrix& node = fwd.trellis.node_scores;
  const Matrix& alpha = fwd.trellis.log_alpha;
  Matrix beta(T, L);  // last row is zero
  std::vector<double> tmp(L);
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t a = 0; a < L; ++a) {
      for (std::size_t b = 0; b < L; ++b) {
        tmp[b] = lat.transition(a, b) + node(t + 1, b) + beta(t + 1, b);
      }
      beta(t, a) = log_sum_exp(tmp);
    }
  }
  ChainPosterior post;
  post.log_z = fwd.log_z;
  post.node_marginals = Matrix(T, L);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t y = 0; y < L; ++y) {
      post.node_marginals(t, y) = std::exp(alpha(t, y) + beta(t, y) - fwd.log_z);
    }
  }
  post.edge_marginals.reserve(T > 0 ? T - 1 : 0);
  for (std::size_t t = 0; t + 1 < T; ++t) {
    Matrix slab(L, L);
    for (std::size_t a = 0; a < L; ++a) {
      for (std::size_t b = 0; b < L; ++b) {
        slab(a, b) = std::exp(alpha(t, a) + lat.transition(a, b) + node(t + 1, b) +
                              beta(t + 1, b) - fwd.log_z);
      }
    }
    post.edge_marginals.push_back(std::move(slab));
  }
  return post;
}

// Max-product recursion. Ties go to the lowest label index, both for the
// final label and at every backpointer.
inline ViterbiResult viterbi(const PotentialLattice& lat) {
  lat.validate();
  const std::size_t T = lat.length, L = lat.labels;
  const Matrix node = lat.node_scores();
  Matrix delta(T, L);
  std::vector<std::vector<int>> back(T, std::vector<int>(L, 0));
  for (std::size_t y = 0; y < L; ++y) delta(0, y) = lat.transition(lat.bos(), y) + node(0, y);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t y = 0; y < L; ++y) {
      double best = delta(t - 1, 0) + lat.transition(0, y);
      int arg = 0;
      for (std::size_t a = 1; a < L; ++a) {
        const double s = delta(t - 1, a) + lat.transition(a, y);
        if (s > best) {
          best = s;
          arg = static_cast<int>(a);
        }
      }
      delta(t, y) = best + node(t, y);
      back[t][y] = arg;
    }
  }
  ViterbiResult res;
  res.labels.assign(T, 0);
  int y = 0;
  double best = delta(T - 1, 0);
  for (std::size_t a = 1; a < L; ++a) {
    if (delta(T - 1, a) > best) {
      best = delta(T - 1, a);
      y = static_cast<int>(a);
    }
  }
  res.score = best;
  for (std::size_t t = T; t-- > 0;) {
    res.labels[t] = y;
    if (t > 0) y = back[t][static_cast<std::size_t>(y)];
  }
  return res;
}

inline void check_gold(const PotentialLattice& lat, std::span<const int> gold) {
  if (gold.size() != lat.length) {
    throw ShapeError("gold sequence has length " + std::to_string(gold.size()) + ", lattice " +
                     std::to_string(lat.length));
  }
  for (int y : gold) {
    if (y < 0 || static_cast<std::size_t>(y) >= lat.labels) {
      throw std::out_of_range("gold label " + std::to_string(y) + " outside [0, " +
                              std::to_string(lat.labels) + ")");
    }
  }
}

inline double sequence_score(const PotentialLattice& lat, std::span<const int> labels) {
  check_gold(lat, labels);
  const Matrix node = lat.node_scores();
  double s = lat.transition(lat.bos(), labels[0]) + node(0, labels[0]);
  for (std::size_t t = 1; t < lat.length; ++t) {
    s = s + lat.transition(labels[t - 1], labels[t]) + node(t, labels[t]);
  }
  return s;
}

// nll = log Z - score(gold). d nll / d unary_t(y) = p(y_t = y) - [gold_t = y];
// the transition gradient sums edge marginals minus gold edge indicators,
// with the first position feeding the BOS row.
inline ChainGradients nll_and_potential_grads(const PotentialLattice& lat,
                                              std::span<const int> gold) {
  check_gold(lat, gold);
  const auto post = posteriors(lat);
  const std::size_t T = lat.length, L = lat.labels;
  ChainGradients g;
  g.nll = std::max(0.0, post.log_z - sequence_score(lat, gold));
  g.unary = post.node_marginals;
  for (std::size_t t = 0; t < T; ++t) g.unary(t, static_cast<std::size_t>(gold[t])) -= 1.0;
  g.transition = Matrix(L + 1, L);
  for (std::size_t y = 0; y < L; ++y) g.transition(L, y) = post.node_marginals(0, y);
  g.transition(L, static_cast<std::size_t>(gold[0])) -= 1.0;
  for (std::size_t t = 0; t + 1 < T; ++t) {
    add_into(g.transition.values().subspan(0, L * L), post.edge_marginals[t].values());
    g.transition(static_cast<std::size_t>(gold[t]), static_cast<std::size_t>(gold[t + 1])) -= 1.0;
  }
  return g;
}

}  // namespace chaintag
