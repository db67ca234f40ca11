#include <gsl/gsl_cdf.h>
#include <gtest/gtest.h>

#include <array>
#include <bit>
#include <functional>
#include <cmath>
#include <sstream>
#include <vector>

#include "rqmc/lds.hpp"

using namespace rqmc;

namespace {

const DirectionNumbers& table() {
  static const DirectionNumbers t = load_direction_numbers(default_direction_numbers_path(), 64);
  return t;
}

// Smallest t for which the first 2^m points of dims [0, s) form a (t, m, s)-net,
// found by counting every elementary interval.
int measured_t(const std::vector<std::vector<std::uint32_t>>& pts, int m, int s) {
  for (int t = 0; t <= m; ++t) {
    const int k = m - t;  // total resolution sum d_1 + ... + d_s = k
    bool ok = true;
    std::vector<int> d(s, 0);
    // enumerate compositions of k into s nonnegative parts
    auto check = [&](const std::vector<int>& dv) {
      std::vector<int> counts(std::size_t{1} << k, 0);
      for (const auto& p : pts) {
        std::size_t cell = 0;
        for (int j = 0; j < s; ++j) cell = (cell << dv[j]) | (dv[j] == 0 ? 0 : (p[j] >> (32 - dv[j])));
        ++counts[cell];
      }
      for (int c : counts)
        if (c != (1 << t)) return false;
      return true;
    };
    std::function<void(int, int)> rec = [&](int j, int left) {
      if (!ok) return;
      if (j == s - 1) {
        d[j] = left;
        ok = check(d);
        return;
      }
      for (int v = 0; v <= left; ++v) {
        d[j] = v;
        rec(j + 1, left - v);
      }
    };
    rec(0, k);
    if (ok) return t;
  }
  return m;
}

}  // namespace

TEST(DirectionNumbers, ParsesJoeKuoRecords) {
  std::istringstream in("d s a m_i\n2 1 0 1\n3 2 1 1 3\n4 3 1 1 3 1\n");
  auto t = load_direction_numbers(in, 4);
  ASSERT_EQ(t.dimension_count(), 4u);
  EXPECT_EQ(t.records[0].degree, 1u);
  EXPECT_EQ(t.records[0].poly, 0u);
  EXPECT_EQ(t.records[0].m, std::vector<std::uint32_t>({1}));
  EXPECT_EQ(t.records[1].m, std::vector<std::uint32_t>({1, 3}));
}

TEST(DirectionNumbers, ShippedFileMatchesPublishedRows) {
  const auto& t = table();
  EXPECT_EQ(t.records[0].degree, 1u);
  EXPECT_EQ(t.records[0].m, std::vector<std::uint32_t>({1}));
  EXPECT_EQ(t.records[1].degree, 2u);
  EXPECT_EQ(t.records[1].poly, 1u);
  EXPECT_EQ(t.records[1].m, std::vector<std::uint32_t>({1, 3}));
  EXPECT_EQ(t.records[2].degree, 3u);
  EXPECT_EQ(t.records[2].poly, 1u);
  EXPECT_EQ(t.records[2].m, std::vector<std::uint32_t>({1, 3, 1}));
  EXPECT_EQ(t.records[3].poly, 2u);
  EXPECT_EQ(t.records[3].m, std::vector<std::uint32_t>({1, 1, 1}));
}

TEST(DirectionNumbers, FullFileLoads) {
  auto t = load_direction_numbers(default_direction_numbers_path(), 0);
  EXPECT_EQ(t.dimension_count(), 1024u);
}

TEST(DirectionNumbers, EvenDirectionIntegerReportsLine) {
  std::istringstream in("header\n2 1 0 1\n3 2 1 1 2\n");
  try {
    load_direction_numbers(in, 3);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(DirectionNumbers, RejectsMalformedRecords) {
  for (const char* text : {"h\n2 1 0 2\n", "h\n2 1 0 1 1\n", "h\n3 1 0 1\n", "h\n2 2 0 1 5\n", "h\n2 2 2 1 1\n",
                           "h\n2 1 0\n", "h\n2 x 0 1\n"}) {
    std::istringstream in(text);
    EXPECT_THROW(load_direction_numbers(in, 2), ParseError) << text;
  }
}

TEST(DirectionNumbers, InsufficientDimensionsIsCapacityError) {
  std::istringstream in("h\n2 1 0 1\n");
  EXPECT_THROW(load_direction_numbers(in, 3), ConfigError);
  std::istringstream in2("h\n2 1 0 1\n");
  EXPECT_NO_THROW(load_direction_numbers(in2, 2));
}

TEST(DirectionNumbers, MissingFileIsConfigError) {
  EXPECT_THROW(load_direction_numbers(std::string("/nonexistent/dirs.txt"), 2), ConfigError);
}

TEST(DirectionNumbers, EnvironmentOverridesDefaultPath) {
  setenv("RQMC_DIRECTION_NUMBERS", "/tmp/custom-dirs", 1);
  EXPECT_EQ(default_direction_numbers_path(), "/tmp/custom-dirs");
  unsetenv("RQMC_DIRECTION_NUMBERS");
  EXPECT_NE(default_direction_numbers_path(), "/tmp/custom-dirs");
}

TEST(Sobol, DimensionOneNeedsNoRecords) {
  std::istringstream in("header only\n");
  auto t = load_direction_numbers(in, 1);
  SobolGenerator gen(t, 1);
  EXPECT_EQ(gen.digits(1, 0), 0x80000000u);
  EXPECT_EQ(gen.digits(2, 0), 0xC0000000u);
  EXPECT_EQ(gen.digits(3, 0), 0x40000000u);
}

TEST(Sobol, DirectionMatricesAreBitUpperTriangular) {
  SobolGenerator gen(table(), 64);
  for (std::size_t j = 0; j < 64; ++j)
    for (int b = 0; b < kDigits; ++b) {
      const auto v = gen.directions(j)[b];
      EXPECT_EQ(std::countr_zero(v), kDigits - 1 - b) << "dim " << j << " column " << b;  // diagonal set, zeros below
    }
}

TEST(Sobol, MatchesReferenceDigits) {
  // First points and index 1000 of an independent implementation using the same table.
  const std::vector<std::array<std::uint32_t, 6>> expected = {
      {0u, 0u, 0u, 0u, 0u, 0u},
      {2147483648u, 2147483648u, 2147483648u, 2147483648u, 2147483648u, 2147483648u},
      {3221225472u, 1073741824u, 1073741824u, 1073741824u, 3221225472u, 3221225472u},
      {1073741824u, 3221225472u, 3221225472u, 3221225472u, 1073741824u, 1073741824u},
      {1610612736u, 1610612736u, 2684354560u, 3758096384u, 1610612736u, 536870912u},
      {3758096384u, 3758096384u, 536870912u, 1610612736u, 3758096384u, 2684354560u},
      {2684354560u, 536870912u, 3758096384u, 2684354560u, 2684354560u, 3758096384u},
      {536870912u, 2684354560u, 1610612736u, 536870912u, 536870912u, 1610612736u}};
  SobolGenerator gen(table(), 6);
  for (std::size_t i = 0; i < expected.size(); ++i)
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(gen.digits(i, j), expected[i][j]) << i << "," << j;
  const std::array<std::uint32_t, 6> at1000 = {943718400u, 415236096u, 2227175424u, 2906652672u, 1203765248u, 3896508416u};
  for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(gen.digits(1000, j), at1000[j]);
}

TEST(Sobol, ZeroPointAndFirstPoint) {
  SobolGenerator gen(table(), 2);
  RandomizedPointSet plain(gen);
  auto p0 = plain.point(0);
  EXPECT_EQ(plain.digits(0, 0), 0u);
  EXPECT_EQ(p0[0], 0x1p-33);  // half-ulp offset keeps the zero point off the boundary
  EXPECT_GE(p0[0], kCoordMin);
  auto p1 = plain.point(1);
  EXPECT_EQ(p1[0], 0.5 + 0x1p-33);
  EXPECT_EQ(p1[1], 0.5 + 0x1p-33);
}

TEST(Sobol, IndexOverflowIsRangeError) {
  SobolGenerator gen(table(), 2);
  RandomizedPointSet plain(gen);
  EXPECT_THROW(plain.point(std::uint64_t{1} << 32), RangeError);
  EXPECT_NO_THROW(plain.point((std::uint64_t{1} << 32) - 1));
}

TEST(Sobol, CoordinatesStayInsideClampedCube) {
  SobolGenerator gen(table(), 3);
  RandomizedPointSet set(gen, fresh_scramble(11, 0, 3));
  for (std::uint64_t i : {std::uint64_t{0}, std::uint64_t{1}, std::uint64_t{12345}, (std::uint64_t{1} << 32) - 1}) {
    for (double u : set.point(i)) {
      EXPECT_GE(u, kCoordMin);
      EXPECT_LE(u, kCoordMax);
      EXPECT_LT(u, 1.0);
    }
  }
  EXPECT_EQ(digits_to_unit(0xFFFFFFFFu), 1.0 - 0x1p-33);
  EXPECT_LT(digits_to_unit(0xFFFFFFFFu), 1.0);
}

TEST(Sobol, IdentityScrambleEqualsPlain) {
  SobolGenerator gen(table(), 5);
  RandomizedPointSet plain(gen);
  RandomizedPointSet ident(gen, ScrambleState::identity(5));
  for (std::uint64_t i = 0; i < 300; ++i) EXPECT_EQ(plain.point(i), ident.point(i));
  for (std::uint64_t i = 0; i < 300; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(plain.digits(i, j), gen.digits(i, j));
}

TEST(Sobol, CursorMatchesRandomAccess) {
  SobolGenerator gen(table(), 7);
  RandomizedPointSet set(gen, fresh_scramble(3, 2, 7));
  auto cur = set.cursor();
  for (std::uint64_t i = 0; i < 4096; ++i) {
    ASSERT_EQ(cur.index(), i);
    auto p = set.point(i);
    for (std::size_t j = 0; j < 7; ++j) ASSERT_EQ(cur.point()[j], p[j]);
    cur.advance();
  }
}

TEST(Sobol, ScrambledDigitsFollowMatrixThenShift) {
  SobolGenerator gen(table(), 4);
  auto st = fresh_scramble(99, 5, 4);
  RandomizedPointSet set(gen, st);
  for (std::uint64_t i : {1u, 2u, 77u, 1023u, 65537u})
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(set.digits(i, j), st.apply_matrix(j, gen.digits(i, j)) ^ st.shift[j]);
}

TEST(Scramble, DeterministicAndKeyed) {
  auto a = fresh_scramble(2024, 7, 16);
  auto b = fresh_scramble(2024, 7, 16);
  EXPECT_EQ(a, b);
  auto c = fresh_scramble(2024, 8, 16);
  EXPECT_NE(a.shift, c.shift);
  auto d = fresh_scramble(2025, 7, 16);
  EXPECT_NE(a.shift, d.shift);
}

TEST(Scramble, MatricesAreUnitLowerTriangular) {
  auto st = fresh_scramble(1, 1, 8);
  for (std::size_t j = 0; j < 8; ++j)
    for (int l = 0; l < kDigits; ++l) {
      const std::uint32_t col = st.columns[j][l];
      EXPECT_EQ(std::countl_zero(col), l);  // diagonal set, nothing above it
    }
}

TEST(Scramble, CoordinateMarginalIsUniform) {
  // Coordinate of a fixed point under 2^16 independent scrambles, binned on its leading 8 digits.
  SobolGenerator gen(table(), 3);
  const int bins = 256, draws = 1 << 16;
  std::vector<double> counts(bins, 0.0);
  for (int r = 0; r < draws; ++r) {
    RandomizedPointSet set(gen, fresh_scramble(777, static_cast<std::uint64_t>(r), 3));
    counts[set.digits(5, 2) >> 24] += 1.0;
  }
  const double expect = static_cast<double>(draws) / bins;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expect) * (c - expect) / expect;
  EXPECT_GT(gsl_cdf_chisq_Q(chi2, bins - 1), 1e-3) << "chi2 = " << chi2;
}

TEST(Nets, MeasuredQualityWithinPublishedBound) {
  SobolGenerator gen(table(), 3);
  // t of the first s dimensions is at most sum of (degree - 1) over dimensions 2..s.
  const int published[4] = {0, 0, 0, 1};
  for (int s = 1; s <= 3; ++s)
    for (int m = 1; m <= 8; ++m) {
      std::vector<std::vector<std::uint32_t>> pts(std::size_t{1} << m, std::vector<std::uint32_t>(s));
      for (std::size_t i = 0; i < pts.size(); ++i)
        for (int j = 0; j < s; ++j) pts[i][j] = gen.digits(i, j);
      EXPECT_LE(measured_t(pts, m, s), published[s]) << "s=" << s << " m=" << m;
    }
}

TEST(Nets, ScramblingPreservesElementaryIntervalCounts) {
  SobolGenerator gen(table(), 3);
  for (std::uint64_t r = 0; r < 3; ++r) {
    RandomizedPointSet set(gen, fresh_scramble(42, r, 3));
    RandomizedPointSet plain(gen);
    for (int m = 1; m <= 8; ++m) {
      std::vector<std::vector<std::uint32_t>> a(std::size_t{1} << m, std::vector<std::uint32_t>(3)), b = a;
      for (std::size_t i = 0; i < a.size(); ++i)
        for (int j = 0; j < 3; ++j) {
          a[i][j] = set.digits(i, j);
          b[i][j] = plain.digits(i, j);
        }
      EXPECT_EQ(measured_t(a, m, 3), measured_t(b, m, 3)) << "m=" << m;
    }
  }
}

TEST(Nets, ScrambledAverageIsUnbiased) {
  const std::size_t s = 3;
  const int n = 256, R = 200;
  SobolGenerator gen(table(), s);
  std::vector<double> means(R);
  for (int r = 0; r < R; ++r) {
    RandomizedPointSet set(gen, fresh_scramble(5150, static_cast<std::uint64_t>(r), s));
    double acc = 0.0;
    for (auto cur = set.cursor(); cur.index() < static_cast<std::uint64_t>(n); cur.advance()) {
      double sum = 0.0;
      for (double u : cur.point()) sum += u;
      acc += std::exp(sum);
    }
    means[r] = acc / n;
  }
  double mean = 0.0;
  for (double m : means) mean += m;
  mean /= R;
  double var = 0.0;
  for (double m : means) var += (m - mean) * (m - mean);
  const double se = std::sqrt(var / (R * (R - 1.0)));
  const double exact = std::pow(std::exp(1.0) - 1.0, 3.0);
  EXPECT_LE(std::abs(mean - exact), 4.0 * se) << "mean " << mean << " se " << se;
}
