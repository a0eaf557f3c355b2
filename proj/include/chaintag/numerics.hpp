#pragma once

// Dense matrices, log-domain reductions, seeded randomness and the
// parameter/gradient store shared by every other module.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace chaintag {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class EmptySupportError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

namespace detail {

inline std::string shape_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace detail

// Row-major double-precision matrix. A column vector is an n x 1 matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
      throw ShapeError("matrix of shape " + detail::shape_str(rows_, cols_) +
                       " given " + std::to_string(values_.size()) + " values");
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {values_.data() + r * cols_, cols_};
  }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.values_ == b.values_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

// log(sum(exp(v))) with max subtraction. Entries may be -inf, but not all.
inline double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw EmptySupportError("log_sum_exp of an empty vector");
  const double m = *std::max_element(v.begin(), v.end());
  if (m == -std::numeric_limits<double>::infinity()) {
    throw EmptySupportError("log_sum_exp: every entry is -inf (empty support)");
  }
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

inline std::vector<double> matvec(const Matrix& m, std::span<const double> v) {
  if (v.size() != m.cols()) {
    throw ShapeError("matvec: matrix " + detail::shape_str(m.rows(), m.cols()) +
                     " with vector of length " + std::to_string(v.size()));
  }
  std::vector<double> out(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) acc += row[c] * v[c];
    out[r] = acc;
  }
  return out;
}

// out += m^T v
inline void add_matvec_transposed(const Matrix& m, std::span<const double> v,
                                  std::span<double> out) {
  if (v.size() != m.rows() || out.size() != m.cols()) {
    throw ShapeError("matvec^T: matrix " + detail::shape_str(m.rows(), m.cols()) +
                     " with vector " + std::to_string(v.size()) + " into " +
                     std::to_string(out.size()));
  }
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double s = v[r];
    if (s == 0.0) continue;
    const auto row = m.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) out[c] += s * row[c];
  }
}

// m += a b^T
inline void add_outer(Matrix& m, std::span<const double> a, std::span<const double> b) {
  if (a.size() != m.rows() || b.size() != m.cols()) {
    throw ShapeError("outer product shape mismatch");
  }
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double s = a[r];
    if (s == 0.0) continue;
    auto row = m.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += s * b[c];
  }
}

inline void add_into(std::span<double> dst, std::span<const double> src) {
  if (dst.size() != src.size()) throw ShapeError("add_into: length mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// splitmix64-seeded xoshiro256** generator. The stream is fully specified
// here so runs are reproducible across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {
    std::uint64_t x = seed;
    for (auto& s : state_) s = splitmix(x);
  }

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() {
    const std::uint64_t result = std::rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = std::rotl(state_[3], 45);
    return result;
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n), rejection sampled so there is no modulo bias.
  std::size_t below(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below(0)");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  static std::uint64_t splitmix(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t state_[4];
};

// How init_parameters treats an entry.
enum class ParamKind {
  kWeight,      // uniform in +-sqrt(6 / (fan_in + fan_out))
  kBias,        // zero
  kTransition,  // zero
  kPreset,      // left untouched (loaded embeddings, fixed tables)
};

struct ParamRef {
  std::size_t index = static_cast<std::size_t>(-1);
  bool valid() const { return index != static_cast<std::size_t>(-1); }
};

// One gradient buffer per store entry, same order and shapes as the store.
using Gradients = std::vector<Matrix>;

class ParameterStore {
 public:
  struct Entry {
    std::string name;
    ParamKind kind = ParamKind::kWeight;
    bool trainable = true;
    Matrix value;
    Matrix grad;
  };

  ParamRef add(std::string name, std::size_t rows, std::size_t cols, ParamKind kind,
               bool trainable = true) {
    return add(std::move(name), Matrix(rows, cols), kind, trainable);
  }

  ParamRef add(std::string name, Matrix value, ParamKind kind, bool trainable = true) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
    index_.emplace(name, entries_.size());
    Entry e;
    e.name = std::move(name);
    e.kind = kind;
    e.trainable = trainable;
    e.grad = Matrix(value.rows(), value.cols());
    e.value = std::move(value);
    entries_.push_back(std::move(e));
    return ParamRef{entries_.size() - 1};
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  ParamRef find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return ParamRef{it->second};
  }

  Matrix& value(ParamRef r) { return entries_.at(r.index).value; }
  const Matrix& value(ParamRef r) const { return entries_.at(r.index).value; }
  Matrix& grad(ParamRef r) { return entries_.at(r.index).grad; }
  const Matrix& grad(ParamRef r) const { return entries_.at(r.index).grad; }
  Matrix& value(const std::string& name) { return value(find(name)); }
  const Matrix& value(const std::string& name) const { return value(find(name)); }

  void zero_grad() {
    for (auto& e : entries_) e.grad.fill(0.0);
  }

  Gradients make_gradients() const {
    Gradients g;
    g.reserve(entries_.size());
    for (const auto& e : entries_) g.emplace_back(e.value.rows(), e.value.cols());
    return g;
  }

  Gradients take_gradients() {
    Gradients g;
    g.reserve(entries_.size());
    for (auto& e : entries_) {
      g.push_back(std::move(e.grad));
      e.grad = Matrix(e.value.rows(), e.value.cols());
    }
    return g;
  }

  void set_gradients(Gradients g) {
    if (g.size() != entries_.size()) throw ShapeError("gradient buffer count mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!g[i].same_shape(entries_[i].value)) {
        throw ShapeError("gradient shape mismatch for " + entries_[i].name);
      }
      entries_[i].grad = std::move(g[i]);
    }
  }

  std::size_t parameter_count(bool include_untrainable = true) const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
      if (include_untrainable || e.trainable) n += e.value.size();
    }
    return n;
  }

  // Copies values for every entry present in both stores with equal shape.
  // Returns the number of entries copied.
  std::size_t copy_matching_values(const ParameterStore& other) {
    std::size_t copied = 0;
    for (auto& e : entries_) {
      auto it = other.index_.find(e.name);
      if (it == other.index_.end()) continue;
      const Matrix& src = other.entries_[it->second].value;
      if (!src.same_shape(e.value)) continue;
      e.value = src;
      ++copied;
    }
    return copied;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline void init_parameters(ParameterStore& store, Rng& rng) {
  for (auto& e : store.entries()) {
    switch (e.kind) {
      case ParamKind::kWeight: {
        const double fan = static_cast<double>(e.value.rows() + e.value.cols());
        const double bound = std::sqrt(6.0 / fan);
        for (double& v : e.value.values()) v = rng.uniform(-bound, bound);
        break;
      }
      case ParamKind::kBias:
      case ParamKind::kTransition:
        e.value.fill(0.0);
        break;
      case ParamKind::kPreset:
        break;
    }
    e.grad.fill(0.0);
  }
}

// Checkpoint container:
//   "CHAINTAG1" | u64 count | count x (u32 name_len | name | u64 rows | u64 cols |
//   rows*cols f64), all integers and floats little-endian.
inline constexpr char kCheckpointMagic[] = "CHAINTAG1";

namespace detail {

template <typename T>
void write_le(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) {
    throw ParseError("checkpoint truncated");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace detail

inline void write_parameters(std::ostream& out, const ParameterStore& store) {
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
  detail::write_le<std::uint64_t>(out, store.size());
  for (const auto& e : store.entries()) {
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::write_le<std::uint64_t>(out, e.value.rows());
    detail::write_le<std::uint64_t>(out, e.value.cols());
    for (double v : e.value.values()) detail::write_le<double>(out, v);
  }
}

struct NamedMatrix {
  std::string name;
  Matrix value;
};

inline std::vector<NamedMatrix> read_parameters(std::istream& in) {
  char magic[sizeof(kCheckpointMagic) - 1];
  if (!in.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw ParseError("not a checkpoint (bad magic)");
  }
  const auto count = detail::read_le<std::uint64_t>(in);
  std::vector<NamedMatrix> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = detail::read_le<std::uint32_t>(in);
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw ParseError("checkpoint truncated in name");
    const auto rows = detail::read_le<std::uint64_t>(in);
    const auto cols = detail::read_le<std::uint64_t>(in);
    if (cols != 0 && rows > (std::uint64_t{1} << 34) / cols) {
      throw ParseError("checkpoint entry " + name + " has implausible shape");
    }
    std::vector<double> values(rows * cols);
    for (auto& v : values) v = detail::read_le<double>(in);
    out.push_back({std::move(name), Matrix(rows, cols, std::move(values))});
  }
  return out;
}

// Assigns loaded values into an already-registered store. Every loaded entry
// must exist with the same shape, and every registered entry must be present.
inline void assign_parameters(std::vector<NamedMatrix> loaded, ParameterStore& store) {
  if (loaded.size() != store.size()) {
    throw ParseError("checkpoint has " + std::to_string(loaded.size()) +
                     " entries, model expects " + std::to_string(store.size()));
  }
  for (auto& nm : loaded) {
    if (!store.contains(nm.name)) throw ParseError("unexpected checkpoint entry " + nm.name);
    Matrix& dst = store.value(nm.name);
    if (!dst.same_shape(nm.value)) {
      throw ParseError("shape mismatch for " + nm.name + ": checkpoint " +
                       detail::shape_str(nm.value.rows(), nm.value.cols()) + ", model " +
                       detail::shape_str(dst.rows(), dst.cols()));
    }
    dst = std::move(nm.value);
  }
}

inline void load_parameters(std::istream& in, ParameterStore& store) {
  assign_parameters(read_parameters(in), store);
}

}  // namespace chaintag
