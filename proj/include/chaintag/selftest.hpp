#pragma once

// Desk-scale verification suites: brute-force oracles for the chain,
// finite-difference gradient checks for whole models, and the zeroing
// identities between variants. Shared by the CLI `selftest` command and the
// acceptance tests.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "chaintag/chain.hpp"
#include "chaintag/chain_oracle.hpp"
#include "chaintag/gradcheck.hpp"
#include "chaintag/model.hpp"

namespace chaintag {

inline constexpr double kLogZTolerance = 1e-8;
inline constexpr double kViterbiScoreTolerance = 1e-8;
inline constexpr double kMarginalTolerance = 1e-10;
inline constexpr double kOracleMarginalTolerance = 1e-8;
inline constexpr double kGradientTolerance = 1e-4;
inline constexpr double kGradientStep = 1e-5;
inline constexpr double kAblationTolerance = 1e-10;

inline void dump_lattice(std::ostream& out, const PotentialLattice& lat) {
  char buf[64];
  out << "lattice T=" << lat.length << " labels=" << lat.labels << '\n';
  auto table = [&](const char* name, const Matrix& m) {
    out << "  " << name << '\n';
    for (std::size_t r = 0; r < m.rows(); ++r) {
      out << "   ";
      for (double v : m.row(r)) {
        std::snprintf(buf, sizeof(buf), " %+.17g", v);
        out << buf;
      }
      out << '\n';
    }
  };
  table("transition (last row BOS)", lat.transition);
  for (Family f : kAllFamilies) {
    if (lat.active(f)) table(family_name(f), lat.family(f));
  }
}

// ---- chain oracles ------------------------------------------------------

struct OracleStats {
  std::string variant;
  std::size_t instances = 0;
  double max_log_z_error = 0.0;
  double max_viterbi_score_error = 0.0;
  std::size_t viterbi_sequence_matches = 0;
  double max_node_norm_error = 0.0;   // |sum_y p_t(y) - 1|
  double max_edge_norm_error = 0.0;   // |sum_ab p_t(a,b) - 1|
  double max_consistency_error = 0.0; // edge slab marginalized vs node row
  double max_oracle_marginal_error = 0.0;
  double seconds = 0.0;
  std::optional<PotentialLattice> first_failure;
  std::string first_failure_reason;

  bool log_z_ok() const { return max_log_z_error <= kLogZTolerance; }
  bool viterbi_ok() const {
    return max_viterbi_score_error <= kViterbiScoreTolerance && viterbi_sequence_matches == instances;
  }
  bool marginals_ok() const {
    return max_node_norm_error <= kMarginalTolerance && max_edge_norm_error <= kMarginalTolerance &&
           max_consistency_error <= kMarginalTolerance &&
           max_oracle_marginal_error <= kOracleMarginalTolerance;
  }
};

// Random lattices with the unary families of `variant`; T in [1, max_length],
// labels in [2, max_labels], entries uniform in [-2, 2].
inline OracleStats run_chain_oracle(const std::string& variant, std::size_t instances,
                                    std::uint64_t seed, std::size_t max_length = 6,
                                    std::size_t max_labels = 5) {
  const auto families = families_for(VariantConfig::from_name(variant).context);
  Rng rng(seed);
  OracleStats st;
  st.variant = variant;
  st.instances = instances;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t n = 0; n < instances; ++n) {
    const std::size_t T = 1 + rng.below(max_length);
    const std::size_t L = 2 + rng.below(max_labels - 1);
    const PotentialLattice lat = random_lattice(families, T, L, rng);
    const BruteForceResult bf = brute_force(lat);
    std::string reason;

    const double ez = std::abs(log_partition(lat).log_z - bf.log_z);
    st.max_log_z_error = std::max(st.max_log_z_error, ez);
    if (ez > kLogZTolerance) reason = "log partition differs from enumeration";

    const ViterbiResult vr = viterbi(lat);
    const double es = std::abs(vr.score - bf.best_score);
    st.max_viterbi_score_error = std::max(st.max_viterbi_score_error, es);
    if (vr.labels == bf.argmax) {
      ++st.viterbi_sequence_matches;
    } else if (reason.empty()) {
      reason = "viterbi sequence differs from enumeration";
    }
    if (es > kViterbiScoreTolerance && reason.empty()) reason = "viterbi score differs from enumeration";

    const ChainPosterior post = posteriors(lat);
    double worst_marginal = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      double s = 0.0;
      for (std::size_t y = 0; y < L; ++y) {
        s += post.node_marginals(t, y);
        st.max_oracle_marginal_error = std::max(
            st.max_oracle_marginal_error, std::abs(post.node_marginals(t, y) - bf.node_marginals(t, y)));
      }
      st.max_node_norm_error = std::max(st.max_node_norm_error, std::abs(s - 1.0));
      worst_marginal = std::max(worst_marginal, std::abs(s - 1.0));
    }
    for (std::size_t t = 0; t + 1 < T; ++t) {
      const Matrix& e = post.edge_marginals[t];
      double total = 0.0;
      for (std::size_t a = 0; a < L; ++a) {
        double row = 0.0;
        for (std::size_t b = 0; b < L; ++b) {
          row += e(a, b);
          st.max_oracle_marginal_error =
              std::max(st.max_oracle_marginal_error, std::abs(e(a, b) - bf.edge_marginals[t](a, b)));
        }
        total += row;
        const double c = std::abs(row - post.node_marginals(t, a));
        st.max_consistency_error = std::max(st.max_consistency_error, c);
        worst_marginal = std::max(worst_marginal, c);
      }
      for (std::size_t b = 0; b < L; ++b) {
        double col = 0.0;
        for (std::size_t a = 0; a < L; ++a) col += e(a, b);
        const double c = std::abs(col - post.node_marginals(t + 1, b));
        st.max_consistency_error = std::max(st.max_consistency_error, c);
        worst_marginal = std::max(worst_marginal, c);
      }
      st.max_edge_norm_error = std::max(st.max_edge_norm_error, std::abs(total - 1.0));
      worst_marginal = std::max(worst_marginal, std::abs(total - 1.0));
    }
    if (worst_marginal > kMarginalTolerance && reason.empty()) reason = "marginals not normalized/consistent";
    if (st.max_oracle_marginal_error > kOracleMarginalTolerance && reason.empty()) {
      reason = "marginals differ from enumeration";
    }
    if (!reason.empty() && !st.first_failure) {
      st.first_failure = lat;
      st.first_failure_reason = reason;
    }
  }
  st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return st;
}

// ---- toy models ---------------------------------------------------------

struct ToySetup {
  std::string variant = "crf-xo";
  EncoderKind encoder = EncoderKind::kIdentity;
  EmbeddingSource source = EmbeddingSource::kTable;
  bool trainable_embeddings = true;
};

inline std::string describe(const ToySetup& s) {
  std::string out = s.variant;
  out += s.encoder == EncoderKind::kBiLstm ? "+bilstm" : "+identity";
  if (s.source == EmbeddingSource::kPrecomputed) {
    out += "+precomputed";
  } else {
    out += s.trainable_embeddings ? "+table" : "+frozen-table";
  }
  return out;
}

struct ToyInstance {
  Model model;
  std::vector<Sentence> sentences;
  std::vector<Matrix> features;  // per sentence, only for the precomputed source

  const Matrix* feature(std::size_t i) const { return features.empty() ? nullptr : &features[i]; }
};

// Small random model plus a couple of random labelled sentences. All
// parameters (biases and transition included) are jittered away from their
// initial values so no gradient is trivially zero.
inline ToyInstance make_toy_instance(const ToySetup& setup, Rng& rng, std::size_t sentences = 2,
                                     std::size_t max_length = 4) {
  VariantConfig config = VariantConfig::from_name(setup.variant);
  config.encoder = setup.encoder;
  config.source = setup.source;
  const std::size_t L = 2 + rng.below(3);
  std::vector<std::string> names;
  for (std::size_t y = 0; y < L; ++y) names.push_back("L" + std::to_string(y));
  config.labels = LabelSet(names);

  ModelDims dims;
  dims.input_dim = 2 + rng.below(5);
  dims.lstm_hidden = 2 + rng.below(3);
  dims.mlp_hidden = 3 + rng.below(6);

  const std::size_t vocab_words = 6;
  std::optional<EmbeddingTable> table;
  if (setup.source == EmbeddingSource::kTable) {
    EmbeddingTable t;
    for (std::size_t w = 0; w < vocab_words; ++w) t.vocabulary.add("w" + std::to_string(w));
    t.matrix = Matrix(t.vocabulary.size(), dims.input_dim);
    for (double& v : t.matrix.values()) v = rng.uniform(-1.0, 1.0);
    t.trainable = setup.trainable_embeddings;
    t.preset = true;
    table = std::move(t);
  }
  ToyInstance inst{Model::build(config, dims, rng, std::move(table)), {}, {}};
  for (auto& e : inst.model.store().entries()) {
    if (e.kind == ParamKind::kPreset) continue;
    for (double& v : e.value.values()) v += rng.uniform(-0.3, 0.3);
  }
  for (std::size_t n = 0; n < sentences; ++n) {
    Sentence s;
    const std::size_t T = 1 + rng.below(max_length);
    for (std::size_t t = 0; t < T; ++t) {
      // one index past the vocabulary exercises the UNK row
      s.words.push_back("w" + std::to_string(rng.below(vocab_words + 1)));
      s.labels.push_back(static_cast<int>(rng.below(L)));
    }
    if (setup.source == EmbeddingSource::kPrecomputed) {
      Matrix h(T, dims.input_dim);
      for (double& v : h.values()) v = rng.uniform(-1.0, 1.0);
      inst.features.push_back(std::move(h));
    }
    inst.sentences.push_back(std::move(s));
  }
  return inst;
}

inline double toy_loss(const ToyInstance& inst) {
  double total = 0.0;
  for (std::size_t i = 0; i < inst.sentences.size(); ++i) {
    total += inst.model.nll(inst.sentences[i], inst.feature(i));
  }
  return total;
}

inline GradientCheckReport check_toy_gradients(ToyInstance& inst) {
  Gradients analytic = inst.model.store().make_gradients();
  for (std::size_t i = 0; i < inst.sentences.size(); ++i) {
    inst.model.accumulate_gradient(inst.sentences[i], inst.feature(i), analytic, 1.0);
  }
  GradientCheckOptions opt;
  opt.step = kGradientStep;
  opt.tolerance = kGradientTolerance;
  return check_gradients(inst.model.store(), analytic,
                         [&](const ParameterStore&) { return toy_loss(inst); }, opt);
}

// Every variant crossed with {identity, BiLSTM} x {trainable table, precomputed}.
inline std::vector<ToySetup> gradient_setups() {
  std::vector<ToySetup> out;
  for (const auto& v : variant_names()) {
    for (EncoderKind enc : {EncoderKind::kIdentity, EncoderKind::kBiLstm}) {
      for (EmbeddingSource src : {EmbeddingSource::kTable, EmbeddingSource::kPrecomputed}) {
        out.push_back(ToySetup{v, enc, src, true});
      }
    }
  }
  return out;
}

// ---- zeroing identities -------------------------------------------------

struct AblationStats {
  std::string wide_variant;
  std::string narrow_variant;
  std::size_t sentences = 0;
  std::size_t shared_parameters = 0;
  double max_nll_difference = 0.0;

  bool ok() const { return max_nll_difference <= kAblationTolerance; }
};

inline bool is_neighbor_parameter(const std::string& name) {
  return name.rfind("potentials.prev.", 0) == 0 || name.rfind("potentials.next.", 0) == 0;
}

// Builds `wide` (crf-xo or crf-x), zeroes its neighbour-family parameters,
// copies every shared parameter into `narrow` (crf-o or crf) and compares
// per-sentence nll on random sentences.
inline AblationStats run_ablation_identity(const std::string& wide, const std::string& narrow,
                                           std::size_t sentences, std::uint64_t seed,
                                           EncoderKind encoder = EncoderKind::kIdentity) {
  Rng rng(seed);
  ToySetup setup{wide, encoder, EmbeddingSource::kTable, true};
  ToyInstance big = make_toy_instance(setup, rng, sentences, 8);
  for (auto& e : big.model.store().entries()) {
    if (is_neighbor_parameter(e.name)) e.value.fill(0.0);
  }
  VariantConfig nc = VariantConfig::from_name(narrow);
  nc.encoder = encoder;
  nc.source = EmbeddingSource::kTable;
  nc.labels = big.model.labels();
  EmbeddingTable table{*big.model.vocabulary(), big.model.store().value(Model::kEmbeddingParam), true, true};
  Rng other(seed + 1);
  Model small = Model::build(nc, big.model.dims(), other, std::move(table));

  AblationStats st;
  st.wide_variant = wide;
  st.narrow_variant = narrow;
  st.sentences = sentences;
  st.shared_parameters = small.store().copy_matching_values(big.model.store());
  if (st.shared_parameters != small.store().size()) {
    throw std::logic_error("narrow model has parameters missing from " + wide);
  }
  for (const auto& s : big.sentences) {
    st.max_nll_difference = std::max(st.max_nll_difference, std::abs(big.model.nll(s) - small.nll(s)));
  }
  return st;
}

// ---- the combined suite -------------------------------------------------

struct SelftestOptions {
  std::uint64_t seed = 0;
  std::size_t lattice_instances = 200;
  std::size_t ablation_sentences = 50;
  bool inject_next_sign_flip = false;
};

struct CheckOutcome {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Runs everything; writes one PASS/FAIL line per check to `out` and, for the
// first failure, a dump of the offending instance to `err`. Returns true iff
// all checks pass.
inline bool run_selftest(const SelftestOptions& opt, std::ostream& out, std::ostream& err,
                         std::vector<CheckOutcome>* outcomes = nullptr) {
  bool all = true;
  bool dumped = false;
  char buf[256];
  auto record = [&](const std::string& name, bool ok, const std::string& detail) {
    out << (ok ? "PASS " : "FAIL ") << name << ' ' << detail << '\n';
    if (outcomes) outcomes->push_back({name, ok, detail});
    all = all && ok;
  };

  for (std::size_t v = 0; v < variant_names().size(); ++v) {
    const auto& name = variant_names()[v];
    const OracleStats st = run_chain_oracle(name, opt.lattice_instances, opt.seed * 1000 + v);
    std::snprintf(buf, sizeof(buf), "max_err=%.3g", st.max_log_z_error);
    record("partition/" + name, st.log_z_ok(), buf);
    std::snprintf(buf, sizeof(buf), "matches=%zu/%zu max_score_err=%.3g", st.viterbi_sequence_matches,
                  st.instances, st.max_viterbi_score_error);
    record("viterbi/" + name, st.viterbi_ok(), buf);
    std::snprintf(buf, sizeof(buf), "node=%.3g edge=%.3g consistency=%.3g vs_enum=%.3g",
                  st.max_node_norm_error, st.max_edge_norm_error, st.max_consistency_error,
                  st.max_oracle_marginal_error);
    record("marginals/" + name, st.marginals_ok(), buf);
    if (st.first_failure && !dumped) {
      err << "first failing instance (" << name << "): " << st.first_failure_reason << '\n';
      dump_lattice(err, *st.first_failure);
      dumped = true;
    }
  }

  Rng rng(opt.seed ^ 0x5eedULL);
  for (const ToySetup& setup : gradient_setups()) {
    ToyInstance inst = make_toy_instance(setup, rng);
    if (opt.inject_next_sign_flip) inst.model.potentials().inject_next_sign_flip(true);
    const auto rep = check_toy_gradients(inst);
    std::snprintf(buf, sizeof(buf), "entries=%zu max_rel_err=%.3g", rep.checked, rep.max_relative_error);
    record("gradient/" + describe(setup), rep.passed(), buf);
    if (!rep.passed() && !dumped) {
      const auto& m = rep.failures.front();
      err << "first failing gradient (" << describe(setup) << "): " << m.parameter << '[' << m.entry
          << "] analytic " << m.analytic << " numeric " << m.numeric << " (at 10x step "
          << m.numeric_wide << ")\n";
      const auto& s = inst.sentences.front();
      dump_lattice(err, inst.model.lattice(s.words, inst.feature(0)));
      dumped = true;
    }
  }

  for (auto [wide, narrow] : {std::pair{"crf-xo", "crf-o"}, std::pair{"crf-x", "crf"}}) {
    const auto st = run_ablation_identity(wide, narrow, opt.ablation_sentences, opt.seed + 17);
    std::snprintf(buf, sizeof(buf), "sentences=%zu max_nll_diff=%.3g", st.sentences, st.max_nll_difference);
    record(std::string("ablation/") + wide + "-zeroed-vs-" + narrow, st.ok(), buf);
  }
  return all;
}

}  // namespace chaintag
