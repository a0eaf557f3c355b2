#pragma once

// A complete tagger: embedding source -> optional BiLSTM -> potentials ->
// chain. The variant names are
//   crf            chain-only, linear
//   crf-x          local context, linear
//   crf-o          chain-only, nonlinear
//   crf-xo         local context, nonlinear
//   crf-xo-concat  concatenated window, nonlinear
//   crf-xo-wide    +-2 context, nonlinear

#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "chaintag/chain.hpp"
#include "chaintag/data.hpp"
#include "chaintag/embeddings.hpp"
#include "chaintag/encoder.hpp"
#include "chaintag/label_set.hpp"
#include "chaintag/numerics.hpp"
#include "chaintag/potentials.hpp"

namespace chaintag {

enum class EncoderKind { kIdentity, kBiLstm };
enum class EmbeddingSource { kTable, kPrecomputed };

struct VariantConfig {
  Context context = Context::kLocal;
  PotentialForm form = PotentialForm::kNonlinear;
  EncoderKind encoder = EncoderKind::kIdentity;
  EmbeddingSource source = EmbeddingSource::kTable;
  LabelSet labels;

  static VariantConfig from_name(const std::string& name) {
    VariantConfig c;
    if (name == "crf") {
      c.context = Context::kChainOnly;
      c.form = PotentialForm::kLinear;
    } else if (name == "crf-x") {
      c.context = Context::kLocal;
      c.form = PotentialForm::kLinear;
    } else if (name == "crf-o") {
      c.context = Context::kChainOnly;
      c.form = PotentialForm::kNonlinear;
    } else if (name == "crf-xo") {
      c.context = Context::kLocal;
      c.form = PotentialForm::kNonlinear;
    } else if (name == "crf-xo-concat") {
      c.context = Context::kConcat;
      c.form = PotentialForm::kNonlinear;
    } else if (name == "crf-xo-wide") {
      c.context = Context::kWide;
      c.form = PotentialForm::kNonlinear;
    } else {
      throw std::invalid_argument("unknown variant '" + name +
                                  "' (expected crf, crf-x, crf-o, crf-xo, crf-xo-concat, crf-xo-wide)");
    }
    return c;
  }

  std::string name() const {
    const bool linear = form == PotentialForm::kLinear;
    switch (context) {
      case Context::kChainOnly: return linear ? "crf" : "crf-o";
      case Context::kLocal: return linear ? "crf-x" : "crf-xo";
      case Context::kConcat:
        if (!linear) return "crf-xo-concat";
        break;
      case Context::kWide:
        if (!linear) return "crf-xo-wide";
        break;
    }
    throw std::invalid_argument("linear potentials are only defined for chain-only and local contexts");
  }
};

inline const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names = {"crf",    "crf-x",         "crf-o",
                                                 "crf-xo", "crf-xo-concat", "crf-xo-wide"};
  return names;
}

struct ModelDims {
  std::size_t input_dim = 300;
  std::size_t lstm_hidden = 300;
  std::size_t mlp_hidden = 600;
};

class Model {
 public:
  static constexpr const char* kEmbeddingParam = "embedding";

  // `table` is required for the table source and must match dims.input_dim.
  static Model build(const VariantConfig& config, const ModelDims& dims, Rng& rng,
                     std::optional<EmbeddingTable> table = std::nullopt) {
    Model m;
    m.register_components(config, dims, std::move(table));
    init_parameters(m.store_, rng);
    if (m.bilstm_) m.bilstm_->set_forget_bias(m.store_, 1.0);
    return m;
  }

  const VariantConfig& config() const { return config_; }
  const ModelDims& dims() const { return dims_; }
  const LabelSet& labels() const { return config_.labels; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  PotentialLayer& potentials() { return potentials_; }
  const PotentialLayer& potentials() const { return potentials_; }
  const std::optional<BiLstm>& bilstm() const { return bilstm_; }
  const std::optional<Vocabulary>& vocabulary() const { return vocabulary_; }
  bool embeddings_trainable() const { return embedding_.valid() && store_.entries()[embedding_.index].trainable; }

  std::size_t parameter_count(bool include_embeddings = false) const {
    std::size_t n = store_.parameter_count();
    if (!include_embeddings && embedding_.valid()) n -= store_.value(embedding_).size();
    return n;
  }

  // h_1..h_T for a sentence: table rows, or the supplied precomputed vectors.
  Matrix features(const std::vector<std::string>& words, const Matrix* precomputed) const {
    if (words.empty()) throw std::invalid_argument("empty sentence");
    if (config_.source == EmbeddingSource::kTable) {
      return embed_rows(store_.value(embedding_), token_rows(*vocabulary_, words));
    }
    if (!precomputed) throw std::invalid_argument("model needs precomputed embeddings");
    if (precomputed->rows() != words.size() || precomputed->cols() != dims_.input_dim) {
      throw ShapeError("precomputed embeddings are " + std::to_string(precomputed->rows()) + "x" +
                       std::to_string(precomputed->cols()) + ", expected " +
                       std::to_string(words.size()) + "x" + std::to_string(dims_.input_dim));
    }
    return *precomputed;
  }

  PotentialLattice lattice(const std::vector<std::string>& words, const Matrix* precomputed) const {
    const Matrix h = features(words, precomputed);
    const EncodedSequence enc = encode(h, false);
    return potentials_.build(store_, enc.states, nullptr);
  }

  double nll(const Sentence& s, const Matrix* precomputed = nullptr) const {
    const auto lat = lattice(s.words, precomputed);
    return log_partition(lat).log_z - sequence_score(lat, s.labels);
  }

  // Adds scale * d nll / d theta into `grads` (laid out like the store) and
  // returns the unscaled nll.
  double accumulate_gradient(const Sentence& s, const Matrix* precomputed, Gradients& grads,
                             double scale = 1.0) const {
    const Matrix h = features(s.words, precomputed);
    const EncodedSequence enc = encode(h, true);
    LatticeCache cache;
    const PotentialLattice lat = potentials_.build(store_, enc.states, &cache);
    ChainGradients cg = nll_and_potential_grads(lat, s.labels);
    for (double& v : cg.transition.values()) v *= scale;
    for (double& v : cg.unary.values()) v *= scale;
    add_into(grads[potentials_.transition().index].values(), cg.transition.values());
    std::array<const Matrix*, kFamilyCount> upstream{};
    for (Family f : kAllFamilies) {
      if (lat.active(f)) upstream[static_cast<int>(f)] = &cg.unary;
    }
    Matrix dg = potentials_.backward(store_, lat.length, cache, upstream, grads);
    if (bilstm_) dg = bilstm_->backward(store_, h, enc, dg, grads);
    if (embeddings_trainable()) {
      const auto rows = token_rows(*vocabulary_, s.words);
      Matrix& ge = grads[embedding_.index];
      for (std::size_t t = 0; t < rows.size(); ++t) add_into(ge.row(rows[t]), dg.row(t));
    }
    return cg.nll;
  }

  // Same, into the store's own gradient buffers.
  double sentence_nll_grad(const Sentence& s, const Matrix* precomputed = nullptr,
                           double scale = 1.0) {
    Gradients g = store_.take_gradients();
    double nll = 0.0;
    try {
      nll = accumulate_gradient(s, precomputed, g, scale);
    } catch (...) {
      store_.set_gradients(std::move(g));
      throw;
    }
    store_.set_gradients(std::move(g));
    return nll;
  }

  std::vector<int> decode_indices(const std::vector<std::string>& words,
                                  const Matrix* precomputed = nullptr) const {
    return viterbi(lattice(words, precomputed)).labels;
  }

  std::vector<std::string> decode(const std::vector<std::string>& words,
                                  const Matrix* precomputed = nullptr) const {
    std::vector<std::string> out;
    for (int y : decode_indices(words, precomputed)) out.push_back(config_.labels.name(y));
    return out;
  }

  void save(std::ostream& out) const {
    write_parameters(out, store_);
    auto line = [&](const std::string& k, const std::string& v) {
      out << "CONFIG " << k << '=' << v << '\n';
    };
    line("variant", config_.name());
    line("encoder", config_.encoder == EncoderKind::kBiLstm ? "bilstm" : "identity");
    line("embedding_source", config_.source == EmbeddingSource::kTable ? "table" : "precomputed");
    line("labels", join(config_.labels.names()));
    line("input_dim", std::to_string(dims_.input_dim));
    line("lstm_hidden", std::to_string(dims_.lstm_hidden));
    line("mlp_hidden", std::to_string(dims_.mlp_hidden));
    if (vocabulary_) {
      line("trainable_embeddings", embeddings_trainable() ? "1" : "0");
      line("case_fold", vocabulary_->case_fold() ? "1" : "0");
      // Rows 0 and 1 are the reserved UNK/PAD entries.
      std::vector<std::string> words(vocabulary_->words().begin() + 2, vocabulary_->words().end());
      line("vocab", join(words));
    }
  }

  static Model load(std::istream& in) {
    auto params = read_parameters(in);
    std::map<std::string, std::string> kv;
    std::string text;
    while (std::getline(in, text)) {
      if (!text.empty() && text.back() == '\r') text.pop_back();
      if (text.empty()) continue;
      if (text.rfind("CONFIG ", 0) != 0) throw ParseError("unexpected checkpoint line: " + text.substr(0, 40));
      const auto eq = text.find('=', 7);
      if (eq == std::string::npos) throw ParseError("malformed CONFIG line");
      kv[text.substr(7, eq - 7)] = text.substr(eq + 1);
    }
    auto get = [&](const std::string& k) -> const std::string& {
      auto it = kv.find(k);
      if (it == kv.end()) throw ParseError("checkpoint missing CONFIG " + k);
      return it->second;
    };
    VariantConfig config = VariantConfig::from_name(get("variant"));
    config.encoder = get("encoder") == "bilstm" ? EncoderKind::kBiLstm : EncoderKind::kIdentity;
    config.source = get("embedding_source") == "table" ? EmbeddingSource::kTable
                                                        : EmbeddingSource::kPrecomputed;
    config.labels = LabelSet(split(get("labels")));
    ModelDims dims;
    dims.input_dim = std::stoul(get("input_dim"));
    dims.lstm_hidden = std::stoul(get("lstm_hidden"));
    dims.mlp_hidden = std::stoul(get("mlp_hidden"));
    std::optional<EmbeddingTable> table;
    if (config.source == EmbeddingSource::kTable) {
      Vocabulary vocab(get("case_fold") == "1");
      for (const auto& w : split(get("vocab"))) vocab.add(w);
      const std::size_t n = vocab.size();
      table = EmbeddingTable{std::move(vocab), Matrix(n, dims.input_dim),
                             get("trainable_embeddings") == "1", true};
    }
    Model m;
    m.register_components(config, dims, std::move(table));
    assign_parameters(std::move(params), m.store_);
    return m;
  }

 private:
  static std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (i) out += ' ';
      out += items[i];
    }
    return out;
  }

  static std::vector<std::string> split(const std::string& s) { return detail::split_ws(s); }

  EncodedSequence encode(const Matrix& h, bool training) const {
    if (bilstm_) return bilstm_->forward(store_, h, training);
    return identity_encode(h);
  }

  void register_components(const VariantConfig& config, const ModelDims& dims,
                           std::optional<EmbeddingTable> table) {
    config.name();  // rejects linear wide/concat
    if (config.labels.size() == 0) throw std::invalid_argument("model needs a non-empty label set");
    if (dims.input_dim == 0 || dims.mlp_hidden == 0) throw ShapeError("model dims must be positive");
    config_ = config;
    dims_ = dims;
    if (config.source == EmbeddingSource::kTable) {
      if (!table) throw std::invalid_argument("table embedding source needs an embedding table");
      if (table->dim() != dims.input_dim) {
        throw ShapeError("embedding table dim " + std::to_string(table->dim()) +
                         " does not match input dim " + std::to_string(dims.input_dim));
      }
      if (table->matrix.rows() != table->vocabulary.size()) {
        throw ShapeError("embedding table rows do not match vocabulary size");
      }
      embedding_ = store_.add(kEmbeddingParam, std::move(table->matrix),
                              table->preset ? ParamKind::kPreset : ParamKind::kWeight,
                              table->trainable);
      vocabulary_ = std::move(table->vocabulary);
    }
    std::size_t state_dim = dims.input_dim;
    if (config.encoder == EncoderKind::kBiLstm) {
      bilstm_.emplace(store_, "encoder", dims.input_dim, dims.lstm_hidden);
      state_dim = bilstm_->output_dim();
    }
    potentials_ = PotentialLayer(store_, config.context, config.form, state_dim, dims.mlp_hidden,
                                 config.labels.size());
  }

  VariantConfig config_;
  ModelDims dims_;
  ParameterStore store_;
  ParamRef embedding_;
  std::optional<Vocabulary> vocabulary_;
  std::optional<BiLstm> bilstm_;
  PotentialLayer potentials_;
};

}  // namespace chaintag
