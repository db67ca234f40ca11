#pragma once

// Sobol' points with random linear scrambling and digital shift.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rqmc/error.hpp"

namespace rqmc {

inline constexpr int kDigits = 32;

// Smallest/largest coordinate ever handed to an integrand. The upper clamp is
// the largest double below one.
inline constexpr double kCoordMin = 0x1p-64;
inline constexpr double kCoordMax = 1.0 - 0x1p-53;

struct DimensionRecord {
  unsigned degree = 0;
  std::uint32_t poly = 0;  // interior coefficient bits, Joe-Kuo "a"
  std::vector<std::uint32_t> m;
};

// Direction-number table. Record k describes dimension k + 2; dimension 1 is
// always the van der Corput identity construction and has no record.
struct DirectionNumbers {
  std::vector<DimensionRecord> records;

  std::size_t dimension_count() const { return records.size() + 1; }
};

// Parses the Joe-Kuo text layout: one header line, then "d s a m_1 ... m_s".
inline DirectionNumbers load_direction_numbers(std::istream& in, std::size_t required_dims = 1) {
  DirectionNumbers out;
  std::string line;
  std::size_t line_no = 0;
  bool header = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (header) {
      header = false;
      continue;
    }
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    long long d = 0, s = 0, a = 0;
    if (!(fields >> d >> s >> a)) throw ParseError("expected 'd s a m_1 ... m_s'", line_no);
    if (d != static_cast<long long>(out.records.size()) + 2)
      throw ParseError("dimension index " + std::to_string(d) + " out of sequence", line_no);
    if (s < 1 || s > kDigits) throw ParseError("polynomial degree out of range", line_no);
    if (a < 0 || (s > 1 && a >= (1LL << (s - 1))) || (s == 1 && a != 0))
      throw ParseError("polynomial code out of range", line_no);
    DimensionRecord rec;
    rec.degree = static_cast<unsigned>(s);
    rec.poly = static_cast<std::uint32_t>(a);
    for (long long k = 1; k <= s; ++k) {
      long long mk = 0;
      if (!(fields >> mk)) throw ParseError("missing direction integer m_" + std::to_string(k), line_no);
      if (mk <= 0 || mk % 2 == 0) throw ParseError("direction integer m_" + std::to_string(k) + " must be odd", line_no);
      if (mk >= (1LL << k)) throw ParseError("direction integer m_" + std::to_string(k) + " must be < 2^k", line_no);
      rec.m.push_back(static_cast<std::uint32_t>(mk));
    }
    std::string extra;
    if (fields >> extra) throw ParseError("trailing field '" + extra + "'", line_no);
    out.records.push_back(std::move(rec));
    if (out.dimension_count() >= required_dims && required_dims > 1) break;
  }
  if (out.dimension_count() < required_dims)
    throw ConfigError("direction-number table provides " + std::to_string(out.dimension_count()) +
                      " dimensions, " + std::to_string(required_dims) + " required");
  return out;
}

#ifndef RQMC_DEFAULT_DIRECTION_FILE
#define RQMC_DEFAULT_DIRECTION_FILE "new-joe-kuo-6.1024"
#endif

// RQMC_DIRECTION_NUMBERS overrides the compiled-in default table.
inline std::string default_direction_numbers_path() {
  if (const char* env = std::getenv("RQMC_DIRECTION_NUMBERS"); env != nullptr && *env != '\0') return env;
  return RQMC_DEFAULT_DIRECTION_FILE;
}

inline DirectionNumbers load_direction_numbers(const std::string& path, std::size_t required_dims = 1) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open direction-number file '" + path + "'");
  return load_direction_numbers(in, required_dims);
}

// Splittable counter-based generator (SplitMix64 finalizer over a keyed counter).
class KeyedRng {
 public:
  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  constexpr KeyedRng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t substream = 0)
      : key_(mix(mix(mix(seed + kGolden) ^ (stream + 0x632be59bd9b4e019ULL)) ^ (substream + 0x8cb92ba72f3d8dd7ULL))) {}

  constexpr std::uint64_t next() { return mix(key_ + kGolden * ++counter_); }
  constexpr std::uint32_t next32() { return static_cast<std::uint32_t>(next() >> 32); }
  // Uniform on the open interval (0,1) with 53-bit resolution.
  constexpr double uniform() { return (static_cast<double>(next() >> 11) + 0.5) * 0x1p-53; }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// Per-dimension random unit-lower-triangular bit matrix L_j and digital shift d_j.
// columns[l] holds the image of digit l (digit 0 is the most significant bit).
struct ScrambleState {
  std::uint64_t seed = 0;
  std::uint64_t replicate = 0;
  std::vector<std::array<std::uint32_t, kDigits>> columns;
  std::vector<std::uint32_t> shift;

  std::size_t dimension() const { return shift.size(); }

  static ScrambleState identity(std::size_t dims) {
    ScrambleState st;
    st.columns.resize(dims);
    st.shift.assign(dims, 0);
    for (auto& cols : st.columns)
      for (int l = 0; l < kDigits; ++l) cols[l] = 1u << (kDigits - 1 - l);
    return st;
  }

  // y = L_j x for a 32-digit vector x.
  std::uint32_t apply_matrix(std::size_t dim, std::uint32_t x) const {
    std::uint32_t y = 0;
    const auto& cols = columns[dim];
    while (x != 0) {
      const int bit = 31 - std::countl_zero(x);
      y ^= cols[kDigits - 1 - bit];
      x &= ~(1u << bit);
    }
    return y;
  }

  bool operator==(const ScrambleState&) const = default;
};

inline ScrambleState fresh_scramble(std::uint64_t master_seed, std::uint64_t replicate_index, std::size_t dims) {
  ScrambleState st;
  st.seed = master_seed;
  st.replicate = replicate_index;
  st.columns.resize(dims);
  st.shift.resize(dims);
  for (std::size_t j = 0; j < dims; ++j) {
    KeyedRng rng(master_seed, replicate_index, j);
    for (int l = 0; l < kDigits; ++l) {
      const std::uint32_t diag = 1u << (kDigits - 1 - l);
      st.columns[j][l] = diag | (rng.next32() & (diag - 1));
    }
    st.shift[j] = rng.next32();
  }
  return st;
}

inline double digits_to_unit(std::uint32_t y) {
  const double u = (static_cast<double>(y) + 0.5) * 0x1p-32;
  return u < kCoordMin ? kCoordMin : (u > kCoordMax ? kCoordMax : u);
}

// Unscrambled Sobol' generator: 32 direction integers per dimension.
class SobolGenerator {
 public:
  SobolGenerator(const DirectionNumbers& table, std::size_t dims) : dims_(dims), v_(dims) {
    if (dims == 0) throw ConfigError("Sobol' dimension must be positive");
    if (dims > table.dimension_count())
      throw ConfigError("direction-number table provides " + std::to_string(table.dimension_count()) +
                        " dimensions, " + std::to_string(dims) + " requested");
    for (int b = 0; b < kDigits; ++b) v_[0][b] = 1u << (kDigits - 1 - b);
    for (std::size_t j = 1; j < dims; ++j) {
      const auto& rec = table.records[j - 1];
      const unsigned deg = rec.degree;
      auto& v = v_[j];
      for (unsigned b = 0; b < deg && b < kDigits; ++b) v[b] = rec.m[b] << (kDigits - 1 - b);
      for (unsigned b = deg; b < kDigits; ++b) {
        std::uint32_t w = v[b - deg] ^ (v[b - deg] >> deg);
        for (unsigned k = 1; k < deg; ++k)
          if ((rec.poly >> (deg - 1 - k)) & 1u) w ^= v[b - k];
        v[b] = w;
      }
    }
  }

  std::size_t dimension() const { return dims_; }
  const std::array<std::uint32_t, kDigits>& directions(std::size_t dim) const { return v_[dim]; }

  // Digit vector of the Gray-code ordered point `index`.
  std::uint32_t digits(std::uint64_t index, std::size_t dim) const {
    check_index(index);
    std::uint32_t gray = static_cast<std::uint32_t>(index ^ (index >> 1));
    std::uint32_t x = 0;
    for (int b = 0; gray != 0; ++b, gray >>= 1)
      if (gray & 1u) x ^= v_[dim][b];
    return x;
  }

  static void check_index(std::uint64_t index) {
    if (index >= (std::uint64_t{1} << kDigits))
      throw RangeError("Sobol' index " + std::to_string(index) + " exceeds 2^32 - 1");
  }

 private:
  std::size_t dims_;
  std::vector<std::array<std::uint32_t, kDigits>> v_;
};

// A scrambled (or plain) Sobol' point set. The scramble is folded into the
// generating matrices once: y_i = (L C) i XOR d.
class RandomizedPointSet {
 public:
  explicit RandomizedPointSet(const SobolGenerator& gen) : RandomizedPointSet(gen, ScrambleState::identity(gen.dimension())) {}

  RandomizedPointSet(const SobolGenerator& gen, const ScrambleState& state)
      : dims_(gen.dimension()), v_(gen.dimension()), shift_(state.shift) {
    if (state.dimension() != dims_) throw ConfigError("scramble state dimension does not match generator");
    for (std::size_t j = 0; j < dims_; ++j)
      for (int b = 0; b < kDigits; ++b) v_[j][b] = state.apply_matrix(j, gen.directions(j)[b]);
  }

  std::size_t dimension() const { return dims_; }

  std::uint32_t digits(std::uint64_t index, std::size_t dim) const {
    SobolGenerator::check_index(index);
    std::uint32_t gray = static_cast<std::uint32_t>(index ^ (index >> 1));
    std::uint32_t x = shift_[dim];
    for (int b = 0; gray != 0; ++b, gray >>= 1)
      if (gray & 1u) x ^= v_[dim][b];
    return x;
  }

  void point(std::uint64_t index, std::span<double> out) const {
    for (std::size_t j = 0; j < dims_; ++j) out[j] = digits_to_unit(digits(index, j));
  }

  std::vector<double> point(std::uint64_t index) const {
    std::vector<double> out(dims_);
    point(index, out);
    return out;
  }

  // Sequential Gray-code walk; one XOR per dimension per step.
  class Cursor {
   public:
    explicit Cursor(const RandomizedPointSet& set) : set_(&set), x_(set.shift_), u_(set.dims_) { refresh(); }

    std::uint64_t index() const { return index_; }
    std::span<const double> point() const { return u_; }
    std::span<const std::uint32_t> digits() const { return x_; }

    void advance() {
      ++index_;
      SobolGenerator::check_index(index_);
      const int bit = std::countr_zero(index_);
      for (std::size_t j = 0; j < x_.size(); ++j) x_[j] ^= set_->v_[j][bit];
      refresh();
    }

   private:
    void refresh() {
      for (std::size_t j = 0; j < x_.size(); ++j) u_[j] = digits_to_unit(x_[j]);
    }

    const RandomizedPointSet* set_;
    std::vector<std::uint32_t> x_;
    std::vector<double> u_;
    std::uint64_t index_ = 0;
  };

  Cursor cursor() const { return Cursor(*this); }

 private:
  std::size_t dims_;
  std::vector<std::array<std::uint32_t, kDigits>> v_;
  std::vector<std::uint32_t> shift_;
};

}  // namespace rqmc
