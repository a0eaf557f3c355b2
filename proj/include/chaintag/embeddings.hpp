#pragma once

// Word-lookup tables (pretrained text vectors or corpus-built) and
// precomputed per-token vector files.

#include <cctype>
#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "chaintag/data.hpp"
#include "chaintag/numerics.hpp"

namespace chaintag {

class AlignmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Word-to-row mapping. Row 0 is UNK, row 1 is PAD; words follow.
class Vocabulary {
 public:
  static constexpr std::size_t kUnk = 0;
  static constexpr std::size_t kPad = 1;
  static constexpr const char* kUnkToken = "<unk>";
  static constexpr const char* kPadToken = "<pad>";

  explicit Vocabulary(bool case_fold = false) : case_fold_(case_fold) {
    words_ = {kUnkToken, kPadToken};
  }

  bool case_fold() const { return case_fold_; }
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  std::string normalize(const std::string& w) const {
    if (!case_fold_) return w;
    std::string out = w;
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
  }

  // Returns false if the (normalized) word was already present.
  bool add(const std::string& word) {
    std::string key = normalize(word);
    if (index_.count(key)) return false;
    index_.emplace(key, words_.size());
    words_.push_back(std::move(key));
    return true;
  }

  std::optional<std::size_t> find(const std::string& word) const {
    auto it = index_.find(normalize(word));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t lookup(const std::string& word) const { return find(word).value_or(kUnk); }

 private:
  bool case_fold_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct EmbeddingTable {
  Vocabulary vocabulary;
  Matrix matrix;  // vocabulary.size() x dim
  bool trainable = true;
  bool preset = true;  // false: values are drawn by init_parameters

  std::size_t dim() const { return matrix.cols(); }
};

struct LoadReport {
  std::size_t duplicates = 0;
  std::size_t skipped_by_filter = 0;
};

// Text vectors: one word per line followed by `expected_dim` floats. UNK is
// the mean of the loaded vectors and PAD is zero. When `keep` is given, only
// those words are retained (the UNK mean still covers every line).
inline EmbeddingTable load_pretrained(std::istream& in, std::size_t expected_dim,
                                      bool case_fold = false,
                                      const std::unordered_set<std::string>* keep = nullptr,
                                      LoadReport* report = nullptr) {
  if (expected_dim == 0) throw std::invalid_argument("embedding dim must be positive");
  EmbeddingTable table{Vocabulary(case_fold), Matrix(), true};
  std::vector<double> values(2 * expected_dim, 0.0);
  std::vector<double> sum(expected_dim, 0.0);
  std::size_t loaded = 0;
  LoadReport local;
  std::string line;
  std::size_t line_no = 0;
  std::vector<double> row(expected_dim);
  std::unordered_set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto fields = detail::split_ws(line);
    if (fields.empty()) continue;
    if (fields.size() != expected_dim + 1) {
      throw ParseError("embeddings line " + std::to_string(line_no) + ": expected " +
                       std::to_string(expected_dim + 1) + " fields, found " +
                       std::to_string(fields.size()));
    }
    for (std::size_t d = 0; d < expected_dim; ++d) {
      const std::string& f = fields[d + 1];
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), row[d]);
      if (ec != std::errc() || ptr != f.data() + f.size()) {
        throw ParseError("embeddings line " + std::to_string(line_no) + ": bad number '" + f +
                         "'");
      }
    }
    const bool wanted = keep == nullptr || keep->count(fields[0]) ||
                        keep->count(table.vocabulary.normalize(fields[0]));
    if (!seen.insert(table.vocabulary.normalize(fields[0])).second) {
      ++local.duplicates;
      continue;
    }
    for (std::size_t d = 0; d < expected_dim; ++d) sum[d] += row[d];
    ++loaded;
    if (!wanted) {
      ++local.skipped_by_filter;
      continue;
    }
    table.vocabulary.add(fields[0]);
    values.insert(values.end(), row.begin(), row.end());
  }
  if (loaded == 0) throw ParseError("embedding file is empty");
  for (std::size_t d = 0; d < expected_dim; ++d) {
    values[Vocabulary::kUnk * expected_dim + d] = sum[d] / static_cast<double>(loaded);
  }
  table.matrix = Matrix(table.vocabulary.size(), expected_dim, std::move(values));
  if (report) *report = local;
  return table;
}

inline EmbeddingTable load_pretrained(const std::string& path, std::size_t expected_dim,
                                      bool case_fold = false,
                                      const std::unordered_set<std::string>* keep = nullptr,
                                      LoadReport* report = nullptr) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embeddings " + path);
  return load_pretrained(in, expected_dim, case_fold, keep, report);
}

// Vocabulary from corpus words. The matrix is zero and marked for random
// initialization when the table joins a model.
inline EmbeddingTable table_from_corpus(const Corpus& corpus, std::size_t dim,
                                        bool case_fold = false) {
  EmbeddingTable table{Vocabulary(case_fold), Matrix(), true, false};
  for (const auto& s : corpus.sentences) {
    for (const auto& w : s.words) table.vocabulary.add(w);
  }
  table.matrix = Matrix(table.vocabulary.size(), dim);
  return table;
}

// Token rows for a sentence (UNK for out-of-vocabulary words).
inline std::vector<std::size_t> token_rows(const Vocabulary& vocab,
                                           const std::vector<std::string>& words) {
  std::vector<std::size_t> rows;
  rows.reserve(words.size());
  for (const auto& w : words) rows.push_back(vocab.lookup(w));
  return rows;
}

inline Matrix embed_rows(const Matrix& table, const std::vector<std::size_t>& rows) {
  Matrix h(rows.size(), table.cols());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    auto src = table.row(rows[t]);
    std::copy(src.begin(), src.end(), h.row(t).begin());
  }
  return h;
}

// T x dim sequence of table rows.
inline Matrix embed_sentence(const EmbeddingTable& table, const std::vector<std::string>& words) {
  if (words.empty()) throw std::invalid_argument("cannot embed an empty sentence");
  return embed_rows(table.matrix, token_rows(table.vocabulary, words));
}

// Contents of a precomputed-embedding file, in file order.
struct PrecomputedEmbeddings {
  std::size_t dim = 0;
  std::vector<std::string> ids;
  std::map<std::string, Matrix> by_id;

  // Pairs the i-th file sentence with the i-th corpus sentence.
  std::vector<Matrix> align(const Corpus& corpus) const {
    if (ids.size() != corpus.size()) {
      throw AlignmentError("embedding file has " + std::to_string(ids.size()) +
                           " sentences, corpus has " + std::to_string(corpus.size()));
    }
    std::vector<Matrix> out;
    out.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const Matrix& m = by_id.at(ids[i]);
      if (m.rows() != corpus.sentences[i].size()) {
        throw AlignmentError("sentence " + ids[i] + ": " + std::to_string(m.rows()) +
                             " vectors for " + std::to_string(corpus.sentences[i].size()) +
                             " tokens");
      }
      out.push_back(m);
    }
    return out;
  }
};

// "DIM d", then per sentence "SENT <id> <n>" and n lines of d floats.
inline PrecomputedEmbeddings load_precomputed(std::istream& in) {
  PrecomputedEmbeddings out;
  std::string line;
  std::size_t line_no = 0;
  auto next_nonblank = [&](std::vector<std::string>& fields) {
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      fields = detail::split_ws(line);
      if (!fields.empty()) return true;
    }
    return false;
  };
  auto fail = [&](const std::string& msg) {
    return ParseError("precomputed embeddings line " + std::to_string(line_no) + ": " + msg);
  };

  std::vector<std::string> fields;
  if (!next_nonblank(fields) || fields.size() != 2 || fields[0] != "DIM") {
    throw fail("expected header 'DIM <d>'");
  }
  out.dim = std::stoul(fields[1]);
  if (out.dim == 0) throw fail("dimension must be positive");

  while (next_nonblank(fields)) {
    if (fields.size() != 3 || fields[0] != "SENT") throw fail("expected 'SENT <id> <count>'");
    const std::string id = fields[1];
    const std::size_t count = std::stoul(fields[2]);
    if (count == 0) throw fail("sentence " + id + " has no tokens");
    if (out.by_id.count(id)) throw fail("duplicate sentence id " + id);
    Matrix m(count, out.dim);
    for (std::size_t t = 0; t < count; ++t) {
      if (!next_nonblank(fields)) throw fail("sentence " + id + " truncated");
      if (fields.size() != out.dim) {
        throw fail("sentence " + id + " token " + std::to_string(t) + " has " +
                   std::to_string(fields.size()) + " values, expected " +
                   std::to_string(out.dim));
      }
      for (std::size_t d = 0; d < out.dim; ++d) {
        const std::string& f = fields[d];
        auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), m(t, d));
        if (ec != std::errc() || ptr != f.data() + f.size()) throw fail("bad number '" + f + "'");
      }
    }
    out.ids.push_back(id);
    out.by_id.emplace(id, std::move(m));
  }
  return out;
}

inline PrecomputedEmbeddings load_precomputed(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open precomputed embeddings " + path);
  return load_precomputed(in);
}

inline void write_precomputed(std::ostream& out, const std::vector<std::string>& ids,
                              const std::vector<Matrix>& sequences) {
  if (ids.size() != sequences.size()) throw ShapeError("ids/sequences count mismatch");
  const std::size_t dim = sequences.empty() ? 0 : sequences.front().cols();
  out << "DIM " << dim << '\n';
  char buf[32];
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (sequences[i].cols() != dim) throw ShapeError("dimension varies across sentences");
    if (i) out << '\n';
    out << "SENT " << ids[i] << ' ' << sequences[i].rows() << '\n';
    for (std::size_t t = 0; t < sequences[i].rows(); ++t) {
      for (std::size_t d = 0; d < dim; ++d) {
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), sequences[i](t, d));
        out << (d ? " " : "") << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
      }
      out << '\n';
    }
  }
}

}  // namespace chaintag
