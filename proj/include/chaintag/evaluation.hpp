#pragma once

// Exact-match span F1 (conlleval semantics) and token accuracy.

#include <cstdio>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "chaintag/data.hpp"

namespace chaintag {

struct Span {
  std::string type;
  std::size_t start = 0;  // inclusive
  std::size_t end = 0;    // inclusive

  friend bool operator==(const Span&, const Span&) = default;
  friend bool operator<(const Span& a, const Span& b) {
    return std::tie(a.start, a.end, a.type) < std::tie(b.start, b.end, b.type);
  }
};

struct SpanExtraction {
  std::vector<Span> spans;
  std::size_t repaired = 0;  // stray I-X tags treated as B-X
};

// Maximal spans of a BIO2 sequence. An I-X that does not continue an open X
// span opens a new one, as the CoNLL scorer does.
inline SpanExtraction extract_spans_with_diagnostics(const std::vector<std::string>& labels) {
  SpanExtraction out;
  bool open = false;
  Span cur;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    const TagParts tag = parse_tag(labels[t]);
    const bool continues = tag.prefix == 'I' && open && cur.type == tag.type;
    if (open && !continues) {
      out.spans.push_back(cur);
      open = false;
    }
    if (tag.prefix == 'O') continue;
    if (!continues) {
      if (tag.prefix == 'I') ++out.repaired;
      cur = Span{tag.type, t, t};
      open = true;
    } else {
      cur.end = t;
    }
  }
  if (open) out.spans.push_back(cur);
  return out;
}

inline std::vector<Span> extract_spans(const std::vector<std::string>& labels) {
  return extract_spans_with_diagnostics(labels).spans;
}

// Inverse of extract_spans for non-overlapping spans.
inline std::vector<std::string> spans_to_bio2(const std::vector<Span>& spans, std::size_t length) {
  std::vector<std::string> out(length, "O");
  for (const auto& s : spans) {
    if (s.start > s.end || s.end >= length) throw std::out_of_range("span out of range");
    out[s.start] = "B-" + s.type;
    for (std::size_t t = s.start + 1; t <= s.end; ++t) out[t] = "I-" + s.type;
  }
  return out;
}

struct TypeCounts {
  std::size_t correct = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;

  double precision() const { return predicted ? double(correct) / double(predicted) : 0.0; }
  double recall() const { return gold ? double(correct) / double(gold) : 0.0; }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
};

struct ScoreReport {
  TypeCounts overall;
  std::map<std::string, TypeCounts> per_type;
  std::size_t tokens = 0;
  std::size_t correct_tokens = 0;
  std::size_t repaired_tags = 0;

  double precision() const { return overall.precision(); }
  double recall() const { return overall.recall(); }
  double f1() const { return overall.f1(); }
  double accuracy() const { return tokens ? double(correct_tokens) / double(tokens) : 0.0; }
};

namespace detail {

inline void check_shapes(const std::vector<std::vector<std::string>>& gold,
                         const std::vector<std::vector<std::string>>& predicted) {
  if (gold.size() != predicted.size()) {
    throw ShapeError("gold has " + std::to_string(gold.size()) + " sentences, predictions " +
                     std::to_string(predicted.size()));
  }
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i].size() != predicted[i].size()) {
      throw ShapeError("sentence " + std::to_string(i) + ": gold length " +
                       std::to_string(gold[i].size()) + ", predicted length " +
                       std::to_string(predicted[i].size()));
    }
  }
}

}  // namespace detail

inline double token_accuracy(const std::vector<std::vector<std::string>>& gold,
                             const std::vector<std::vector<std::string>>& predicted) {
  detail::check_shapes(gold, predicted);
  std::size_t total = 0, right = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    for (std::size_t t = 0; t < gold[i].size(); ++t) {
      ++total;
      right += gold[i][t] == predicted[i][t];
    }
  }
  if (total == 0) throw std::invalid_argument("token accuracy of an empty corpus is undefined");
  return double(right) / double(total);
}

// Micro-averaged over the corpus; a predicted span counts iff its type,
// start and end all match a gold span of the same sentence.
inline ScoreReport span_f1(const std::vector<std::vector<std::string>>& gold,
                           const std::vector<std::vector<std::string>>& predicted) {
  detail::check_shapes(gold, predicted);
  ScoreReport rep;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    auto g = extract_spans_with_diagnostics(gold[i]);
    auto p = extract_spans_with_diagnostics(predicted[i]);
    rep.repaired_tags += p.repaired;
    for (const auto& s : g.spans) {
      ++rep.overall.gold;
      ++rep.per_type[s.type].gold;
    }
    for (const auto& s : p.spans) {
      ++rep.overall.predicted;
      auto& tc = rep.per_type[s.type];
      ++tc.predicted;
      for (const auto& gs : g.spans) {
        if (gs == s) {
          ++rep.overall.correct;
          ++tc.correct;
          break;
        }
      }
    }
    for (std::size_t t = 0; t < gold[i].size(); ++t) {
      ++rep.tokens;
      rep.correct_tokens += gold[i][t] == predicted[i][t];
    }
  }
  return rep;
}

inline void write_report(std::ostream& out, const ScoreReport& rep) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "ALL P %.6f R %.6f F1 %.6f\n", rep.precision(), rep.recall(),
                rep.f1());
  out << buf;
  for (const auto& [type, tc] : rep.per_type) {
    std::snprintf(buf, sizeof(buf), " P %.6f R %.6f F1 %.6f GOLD %zu PRED %zu CORRECT %zu\n",
                  tc.precision(), tc.recall(), tc.f1(), tc.gold, tc.predicted, tc.correct);
    out << "TYPE " << type << buf;
  }
  std::snprintf(buf, sizeof(buf), "ACC %.6f\n", rep.accuracy());
  out << buf;
}

}  // namespace chaintag
