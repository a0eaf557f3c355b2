#pragma once

// Column-format corpora, tag schemes, validation splits and batching.

#include <algorithm>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "chaintag/label_set.hpp"
#include "chaintag/numerics.hpp"

namespace chaintag {

enum class TagScheme { kRaw, kIob1, kBio2 };

inline std::string to_string(TagScheme s) {
  switch (s) {
    case TagScheme::kRaw: return "raw";
    case TagScheme::kIob1: return "iob1";
    case TagScheme::kBio2: return "bio2";
  }
  return "raw";
}

inline TagScheme parse_scheme(std::string_view s) {
  if (s == "raw") return TagScheme::kRaw;
  if (s == "iob1") return TagScheme::kIob1;
  if (s == "bio2") return TagScheme::kBio2;
  throw std::invalid_argument("unknown tag scheme '" + std::string(s) + "'");
}

struct Sentence {
  std::vector<std::string> words;
  std::vector<int> labels;  // empty for unlabeled input
  // Raw whitespace-separated columns per token, as read.
  std::vector<std::vector<std::string>> columns;
  std::size_t first_line = 0;
  std::size_t last_line = 0;

  std::size_t size() const { return words.size(); }
};

struct Corpus {
  std::vector<Sentence> sentences;
  LabelSet labels;
  TagScheme scheme = TagScheme::kRaw;

  std::size_t size() const { return sentences.size(); }
  bool empty() const { return sentences.empty(); }

  std::size_t token_count() const {
    std::size_t n = 0;
    for (const auto& s : sentences) n += s.size();
    return n;
  }

  std::vector<std::vector<std::string>> label_strings() const {
    std::vector<std::vector<std::string>> out;
    out.reserve(sentences.size());
    for (const auto& s : sentences) {
      std::vector<std::string> row;
      row.reserve(s.labels.size());
      for (int id : s.labels) row.push_back(labels.name(id));
      out.push_back(std::move(row));
    }
    return out;
  }
};

class LabelMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Re-indexes labels against `target`. Every label must exist there.
inline Corpus relabel(const Corpus& corpus, const LabelSet& target) {
  Corpus out = corpus;
  out.labels = target;
  for (auto& s : out.sentences) {
    for (int& id : s.labels) {
      const std::string& name = corpus.labels.name(id);
      auto mapped = target.find(name);
      if (!mapped) {
        throw LabelMismatchError("label '" + name + "' (line " + std::to_string(s.first_line) +
                                 ") is not in the model's label set");
      }
      id = *mapped;
    }
  }
  return out;
}

struct ReadOptions {
  std::size_t word_column = 0;
  int label_column = -1;  // negative counts from the end
  bool labeled = true;
  TagScheme scheme = TagScheme::kRaw;
};

namespace detail {

inline std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    if (i >= line.size()) break;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace detail

inline Corpus read_conll(std::istream& in, const ReadOptions& opts = {}) {
  Corpus corpus;
  corpus.scheme = opts.scheme;
  Sentence current;
  std::size_t expected_cols = 0;
  std::size_t line_no = 0;
  std::string line;

  auto flush = [&] {
    if (!current.words.empty()) corpus.sentences.push_back(std::move(current));
    current = Sentence{};
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    auto cols = detail::split_ws(line);
    if (cols.empty()) {
      flush();
      continue;
    }
    if (cols[0] == "-DOCSTART-") continue;
    if (expected_cols == 0) {
      expected_cols = cols.size();
    } else if (cols.size() != expected_cols) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(expected_cols) + " columns, found " +
                       std::to_string(cols.size()));
    }
    if (opts.word_column >= cols.size()) {
      throw ParseError("line " + std::to_string(line_no) + ": no word column " +
                       std::to_string(opts.word_column));
    }
    if (current.words.empty()) current.first_line = line_no;
    current.last_line = line_no;
    current.words.push_back(cols[opts.word_column]);
    if (opts.labeled) {
      const long idx = opts.label_column < 0
                           ? static_cast<long>(cols.size()) + opts.label_column
                           : opts.label_column;
      if (idx < 0 || static_cast<std::size_t>(idx) >= cols.size()) {
        throw ParseError("line " + std::to_string(line_no) + ": no label column");
      }
      current.labels.push_back(corpus.labels.add(cols[static_cast<std::size_t>(idx)]));
    }
    current.columns.push_back(std::move(cols));
  }
  flush();
  return corpus;
}

inline Corpus read_conll(const std::string& path, const ReadOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus " + path);
  return read_conll(in, opts);
}

// Writes the token columns back with the label column (the last one, when
// labeled) replaced by the corpus label string.
inline void write_conll(std::ostream& out, const Corpus& corpus) {
  bool first = true;
  for (const auto& s : corpus.sentences) {
    if (!first) out << '\n';
    first = false;
    for (std::size_t t = 0; t < s.size(); ++t) {
      std::vector<std::string> cols = s.columns.empty()
                                          ? std::vector<std::string>{s.words[t]}
                                          : s.columns[t];
      if (!s.labels.empty()) {
        if (cols.size() < 2) cols.push_back(corpus.labels.name(s.labels[t]));
        else cols.back() = corpus.labels.name(s.labels[t]);
      }
      for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? " " : "") << cols[c];
      out << '\n';
    }
  }
}

struct TagParts {
  char prefix = 'O';  // 'B', 'I' or 'O'
  std::string type;
};

inline TagParts parse_tag(const std::string& tag) {
  if (tag == "O") return {'O', ""};
  if (tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-') {
    return {tag[0], tag.substr(2)};
  }
  throw ParseError("malformed tag '" + tag + "' (expected B-X, I-X or O)");
}

namespace detail {

inline std::vector<std::string> iob1_to_bio2(const std::vector<std::string>& tags) {
  std::vector<std::string> out;
  out.reserve(tags.size());
  TagParts prev{'O', ""};
  for (const auto& tag : tags) {
    TagParts cur = parse_tag(tag);
    if (cur.prefix == 'I' && !(prev.prefix != 'O' && prev.type == cur.type)) {
      out.push_back("B-" + cur.type);
    } else {
      out.push_back(tag);
    }
    prev = cur;
  }
  return out;
}

inline std::vector<std::string> bio2_to_iob1(const std::vector<std::string>& tags) {
  std::vector<std::string> out;
  out.reserve(tags.size());
  TagParts prev{'O', ""};
  for (const auto& tag : tags) {
    TagParts cur = parse_tag(tag);
    if (cur.prefix == 'B' && !(prev.prefix != 'O' && prev.type == cur.type)) {
      out.push_back("I-" + cur.type);
    } else {
      out.push_back(tag);
    }
    prev = cur;
  }
  return out;
}

}  // namespace detail

inline Corpus convert_scheme(const Corpus& corpus, TagScheme target) {
  if (corpus.scheme == target) return corpus;
  if (corpus.scheme == TagScheme::kRaw || target == TagScheme::kRaw) {
    throw std::invalid_argument("cannot convert between " + to_string(corpus.scheme) +
                                " and " + to_string(target));
  }
  Corpus out;
  out.scheme = target;
  out.sentences.reserve(corpus.size());
  for (const auto& s : corpus.sentences) {
    std::vector<std::string> tags;
    tags.reserve(s.labels.size());
    for (int id : s.labels) tags.push_back(corpus.labels.name(id));
    const auto converted = target == TagScheme::kBio2 ? detail::iob1_to_bio2(tags)
                                                      : detail::bio2_to_iob1(tags);
    Sentence ns = s;
    for (std::size_t t = 0; t < converted.size(); ++t) {
      ns.labels[t] = out.labels.add(converted[t]);
    }
    out.sentences.push_back(std::move(ns));
  }
  return out;
}

// Validation takes n sentences sampled without replacement; both halves keep
// corpus order. The mask marks the validation members.
inline std::vector<bool> validation_mask(std::size_t size, std::size_t n, Rng rng) {
  if (n >= size) {
    throw std::invalid_argument("validation size " + std::to_string(n) +
                                " must be smaller than corpus size " + std::to_string(size));
  }
  std::vector<std::size_t> order(size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::vector<bool> in_valid(size, false);
  for (std::size_t i = 0; i < n; ++i) in_valid[order[i]] = true;
  return in_valid;
}

inline std::pair<Corpus, Corpus> split_validation(const Corpus& corpus, std::size_t n, Rng rng) {
  const auto in_valid = validation_mask(corpus.size(), n, std::move(rng));
  Corpus train, valid;
  train.labels = valid.labels = corpus.labels;
  train.scheme = valid.scheme = corpus.scheme;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    (in_valid[i] ? valid : train).sentences.push_back(corpus.sentences[i]);
  }
  return {std::move(train), std::move(valid)};
}

// Endless stream of index batches. Each epoch visits every index once; the
// last batch of an epoch may be short.
class BatchStream {
 public:
  BatchStream(std::size_t n_items, std::size_t batch_size, Rng rng, bool shuffle = true)
      : n_(n_items), batch_size_(batch_size), rng_(std::move(rng)), shuffle_(shuffle) {
    if (batch_size_ == 0) throw std::invalid_argument("batch size must be >= 1");
    if (n_ == 0) throw std::invalid_argument("cannot batch an empty corpus");
    order_.resize(n_);
  }

  std::vector<std::size_t> next() {
    if (pos_ == 0 || pos_ >= n_) start_epoch();
    const std::size_t end = std::min(n_, pos_ + batch_size_);
    std::vector<std::size_t> batch(order_.begin() + static_cast<long>(pos_),
                                   order_.begin() + static_cast<long>(end));
    pos_ = end;
    return batch;
  }

  std::size_t epoch() const { return epoch_; }

 private:
  void start_epoch() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (shuffle_) rng_.shuffle(order_);
    pos_ = 0;
    ++epoch_;
  }

  std::size_t n_;
  std::size_t batch_size_;
  Rng rng_;
  bool shuffle_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::size_t epoch_ = 0;
};

}  // namespace chaintag
