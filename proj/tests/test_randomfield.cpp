#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <vector>

#include "oracles.hpp"
#include "rqmc/randomfield.hpp"

using namespace rqmc;

namespace {

const FourierBasis& reference_basis() {
  static const FourierBasis b = build_fourier_basis(MaternKernel{4.5, 1.0}, 2.0, 256, 64);
  return b;
}

}  // namespace

TEST(Matern, UnitAtZero) {
  for (double nu : {0.5, 1.5, 2.5, 4.5}) EXPECT_DOUBLE_EQ(matern_cov(0.0, nu, 1.0), 1.0);
}

TEST(Matern, HalfIsExponential) {
  for (double h : {0.0, 0.1, 0.7, 2.0, 5.0}) EXPECT_NEAR(matern_cov(h, 0.5, 1.3), std::exp(-h / 1.3), 1e-15);
}

TEST(Matern, MatchesBesselForm) {
  for (double h : {0.05, 0.3, 1.0, 1.7, 2.8}) {
    const double ref = oracle::matern_bessel(h, 4.5, 1.0);
    EXPECT_NEAR(matern_cov(h, 4.5, 1.0), ref, 1e-8) << "h = " << h;
  }
  EXPECT_NEAR(matern_cov(1.0, 2.5, 0.5), oracle::matern_bessel(1.0, 2.5, 0.5), 1e-8);
}

TEST(Matern, DecreasingOnGrid) {
  double prev = matern_cov(0.0, 4.5, 1.0);
  for (int i = 1; i <= 2000; ++i) {
    const double c = matern_cov(i * 0.005, 4.5, 1.0);
    ASSERT_LT(c, prev) << "h = " << i * 0.005;
    prev = c;
  }
}

TEST(Matern, RejectsNonHalfInteger) {
  EXPECT_THROW(matern_cov(1.0, 1.0, 1.0), ConfigError);
  EXPECT_THROW(matern_cov(1.0, 1.5, 0.0), ConfigError);
  EXPECT_THROW(build_fourier_basis(MaternKernel{2.0, 1.0}, 2.0, 64, 4), ConfigError);
}

TEST(FourierBasis, ConstantKernelHasOneMode) {
  auto b = build_fourier_basis([](double) { return 1.0; }, 2.0, 64, 3);
  EXPECT_NEAR(b.mode(0).lambda, 1.0, 1e-14);
  EXPECT_EQ(b.mode(0).ax.k, 0);
  EXPECT_EQ(b.mode(0).ay.k, 0);
  EXPECT_NEAR(b.mode(1).lambda, 0.0, 1e-14);
  EXPECT_NEAR(b.mode(2).lambda, 0.0, 1e-14);
  EXPECT_DOUBLE_EQ(b.value(0, 0.3, -0.8), 1.0);
  EXPECT_DOUBLE_EQ(b.sup_norm(0), 1.0);
  EXPECT_DOUBLE_EQ(b.mode(0).b_extended, b.sup_norm(0));
}

TEST(FourierBasis, RetainedCoefficientsPositiveAndSorted) {
  const auto& b = reference_basis();
  ASSERT_EQ(b.size(), 64u);
  for (std::size_t j = 0; j < b.size(); ++j) {
    EXPECT_GT(b.mode(j).lambda, 0.0) << j;
    if (j > 0) {
      EXPECT_LE(b.mode(j).lambda, b.mode(j - 1).lambda) << j;
    }
  }
  EXPECT_GT(b.stats().lambda_min_retained, 0.0);
}

TEST(FourierBasis, LeadingModeIsConstant) {
  const auto& b = reference_basis();
  EXPECT_EQ(b.mode(0).ax.k, 0);
  EXPECT_EQ(b.mode(0).ay.k, 0);
  EXPECT_DOUBLE_EQ(b.sup_norm(0), b.mode(0).lambda);
}

TEST(FourierBasis, TiesComeInSymmetryGroups) {
  // the four lowest nonconstant modes share one coefficient and are ordered by frequency key
  const auto& b = reference_basis();
  for (std::size_t j = 2; j <= 4; ++j) EXPECT_EQ(b.mode(j).lambda, b.mode(1).lambda);
  EXPECT_EQ(b.mode(1).ax.k, 0);
  EXPECT_EQ(b.mode(3).ax.k, 1);
  EXPECT_FALSE(b.mode(3).ax.sine);
  EXPECT_TRUE(b.mode(4).ax.sine);
}

TEST(FourierBasis, CoefficientsMatchDirectSum) {
  // direct cosine sum over the torus grid
  const MaternKernel k{4.5, 1.0};
  const std::size_t M = 64;
  const double gamma = 2.0;
  const auto lam = torus_fourier_coefficients(k, gamma, M);
  for (auto [k1, k2] : std::vector<std::pair<int, int>>{{0, 0}, {1, 0}, {1, 2}, {3, 5}}) {
    double acc = 0.0;
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < M; ++j) {
        const double hx = -gamma + 2.0 * gamma * i / M, hy = -gamma + 2.0 * gamma * j / M;
        acc += k(std::hypot(hx, hy)) * std::cos(std::numbers::pi * (k1 * hx + k2 * hy) / gamma);
      }
    EXPECT_NEAR(lam[k1 * (M / 2) + k2], acc / (M * M), 1e-13) << k1 << "," << k2;
  }
}

TEST(FourierBasis, DecayRatioRegression) {
  // golden value established on first build
  const auto& b = reference_basis();
  EXPECT_NEAR(b.mode(63).lambda / b.mode(0).lambda, 5.2579957487350706e-4, 1e-12);
}

TEST(FourierBasis, TorusSpectrumHasNegativeTail) {
  // the wrapped kernel has a kink at |h| = gamma, so some high-frequency coefficients are negative
  const auto& st = reference_basis().stats();
  EXPECT_GT(st.negative_count, 0u);
  EXPECT_LT(st.lambda_min_all, 0.0);
  // frozen on first build; the most negative coefficient exceeds the smallest retained one in size
  EXPECT_EQ(st.negative_count, 8184u);
  EXPECT_NEAR(st.lambda_min_all, -1.7091241318160446e-3, 1e-15);
  EXPECT_NEAR(st.lambda_min_retained, 1.7822496327662179e-4, 1e-15);
}

TEST(FourierBasis, RestrictionCannotIncreaseSupNorm) {
  for (auto scaling : {BasisScaling::lambda, BasisScaling::sqrt_lambda}) {
    auto b = build_fourier_basis(MaternKernel{4.5, 1.0}, 2.0, 128, 40, scaling);
    for (std::size_t j = 0; j < b.size(); ++j) EXPECT_LE(b.sup_norm(j), b.mode(j).b_extended * (1 + 1e-15)) << j;
  }
}

TEST(FourierBasis, SupNormMatchesAnalyticAxisMaximum) {
  // on [-1, 1] with gamma = 3: cos always peaks at x = 0; sin reaches its peak only once pi k / 3 >= pi / 2
  const double gamma = 3.0;
  for (int k = 1; k < 6; ++k) {
    EXPECT_NEAR(axis_sup_numeric({k, false}, gamma), std::numbers::sqrt2, 1e-12) << k;
    const double w = std::numbers::pi * k / gamma;
    const double sine = w >= std::numbers::pi / 2 ? 1.0 : std::sin(w);
    EXPECT_NEAR(axis_sup_numeric({k, true}, gamma), std::numbers::sqrt2 * sine, 1e-12) << k;
  }
  EXPECT_EQ(axis_sup_numeric({0, false}, gamma), 1.0);
}

TEST(FourierBasis, RejectsBadArguments) {
  const MaternKernel k{4.5, 1.0};
  EXPECT_THROW(build_fourier_basis(k, 2.0, 48, 4), ConfigError);
  EXPECT_THROW(build_fourier_basis(k, 2.0, 32, 4), ConfigError);
  EXPECT_THROW(build_fourier_basis(k, 0.5, 64, 4), ConfigError);
  EXPECT_THROW(build_fourier_basis(k, 2.0, 64, 0), ConfigError);
  EXPECT_THROW(build_fourier_basis(k, 2.0, 64, 64 * 64), ConfigError);
}

TEST(FourierBasis, MaterialNegativeRetainedIsRejected) {
  // a kernel with a hard cutoff has strongly oscillating coefficients; keeping every mode must hit them
  auto box = [](double h) { return h < 1.0 ? 1.0 : 0.0; };
  EXPECT_THROW(build_fourier_basis(box, 1.0, 64, 63 * 63), NumericError);
}

TEST(BasisFile, RoundTripInterpolation) {
  auto fb = build_fourier_basis(MaternKernel{4.5, 1.0}, 2.0, 256, 16);
  std::stringstream ss;
  write_basis(ss, fb, 512);
  const auto tb = load_basis(ss);
  ASSERT_EQ(tb.size(), fb.size());
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (std::size_t j = 0; j < fb.size(); ++j) {
    EXPECT_EQ(tb.sup_norm(j), fb.sup_norm(j));
    for (int i = 0; i < 100; ++i) {
      const double x = u(rng), y = u(rng);
      EXPECT_LE(std::abs(tb.value(j, x, y) - fb.value(j, x, y)), 1e-3 * fb.sup_norm(j)) << j;
    }
  }
}

TEST(BasisFile, GridNodesAreExact) {
  auto fb = build_fourier_basis(MaternKernel{4.5, 1.0}, 2.0, 64, 5);
  std::stringstream ss;
  write_basis(ss, fb, 9);
  const auto tb = load_basis(ss);
  for (std::size_t j = 0; j < 5; ++j) {
    EXPECT_EQ(tb.value(j, -1.0, -1.0), fb.value(j, -1.0, -1.0));
    EXPECT_EQ(tb.value(j, 1.0, 1.0), fb.value(j, 1.0, 1.0));
    EXPECT_NEAR(tb.value(j, 0.25, -0.5), fb.value(j, 0.25, -0.5), 1e-15);
  }
}

TEST(BasisFile, HeaderLayout) {
  auto fb = build_fourier_basis(MaternKernel{4.5, 1.0}, 2.0, 64, 2);
  std::stringstream ss;
  write_basis(ss, fb, 3);
  const std::string s = ss.str();
  EXPECT_EQ(s.size(), 5u + 4 + 4 + 32 + 2 * (8 + 9 * 8));
  EXPECT_EQ(s.substr(0, 5), "QMCB1");
  EXPECT_EQ(static_cast<unsigned char>(s[5]), 2);
  EXPECT_EQ(static_cast<unsigned char>(s[9]), 3);
}

TEST(BasisFile, NormBelowGridMaximumIsRejected) {
  EXPECT_THROW(TabulatedBasis(2, {}, {0.5}, {{0.1, 0.2, 0.3, -0.9}}), ConfigError);
  EXPECT_NO_THROW(TabulatedBasis(2, {}, {0.9}, {{0.1, 0.2, 0.3, -0.9}}));
}

TEST(BasisFile, EmptyModeListIsRejected) {
  EXPECT_THROW(TabulatedBasis(2, {}, {}, {}), ConfigError);
  std::stringstream ss;
  ss.write(kBasisMagic, 5);
  detail::write_le<std::uint32_t>(ss, 0);
  detail::write_le<std::uint32_t>(ss, 4);
  for (double d : {-1.0, 1.0, -1.0, 1.0}) detail::write_le<double>(ss, d);
  EXPECT_THROW(load_basis(ss), ConfigError);
}

TEST(BasisFile, DomainMismatchIsRejected) {
  auto fb = build_fourier_basis(MaternKernel{4.5, 1.0}, 2.0, 64, 2);
  std::stringstream ss;
  write_basis(ss, fb, 8, {0.0, 1.0, 0.0, 1.0});
  EXPECT_THROW(load_basis(ss), ConfigError);
}

TEST(BasisFile, TruncationAndMagic) {
  auto fb = build_fourier_basis(MaternKernel{4.5, 1.0}, 2.0, 64, 2);
  std::stringstream ss;
  write_basis(ss, fb, 8);
  std::string s = ss.str();
  std::stringstream cut(s.substr(0, s.size() - 3));
  EXPECT_THROW(load_basis(cut), ConfigError);
  s[0] = 'X';
  std::stringstream bad(s);
  EXPECT_THROW(load_basis(bad), ConfigError);
}

TEST(CoefficientField, ZeroSampleIsOne) {
  auto basis = std::make_shared<FourierBasis>(reference_basis());
  auto a = coefficient_field(basis, std::vector<double>(64, 0.0), {});
  EXPECT_EQ(a(0.1, -0.4), 1.0);
  EXPECT_EQ(a(-1.0, 1.0), 1.0);
}

TEST(CoefficientField, LogIsLinear) {
  auto basis = std::make_shared<FourierBasis>(reference_basis());
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd;
  std::vector<double> y(64), y2(64), sigma(64);
  for (std::size_t j = 0; j < 64; ++j) {
    y[j] = nd(rng);
    y2[j] = 2.0 * y[j];
    sigma[j] = 1.0 + 0.1 * j;
  }
  auto a1 = coefficient_field(basis, y, sigma);
  auto a2 = coefficient_field(basis, y2, sigma);
  for (double x : {-0.9, -0.2, 0.4, 1.0}) {
    const double v = a1(x, -x / 2);
    EXPECT_NEAR(a2(x, -x / 2), v * v, 1e-12 * v * v);
  }
}

TEST(CoefficientField, LogBoundedByWeightedSupNorms) {
  auto basis = std::make_shared<FourierBasis>(build_fourier_basis(MaternKernel{4.5, 1.0}, 2.0, 256, 16, BasisScaling::sqrt_lambda));
  std::mt19937_64 rng(13);
  std::normal_distribution<double> nd;
  std::vector<double> sigma(16, 1.5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> y(16);
    double bound = 0.0;
    for (std::size_t j = 0; j < 16; ++j) {
      y[j] = nd(rng);
      bound += std::abs(y[j]) * sigma[j] * basis->sup_norm(j);
    }
    auto a = coefficient_field(basis, y, sigma);
    double mx = 0.0;
    for (int i = 0; i <= 64; ++i)
      for (int k = 0; k <= 64; ++k) mx = std::max(mx, std::abs(std::log(a(-1.0 + i / 32.0, -1.0 + k / 32.0))));
    EXPECT_LE(mx, bound * (1 + 1e-12));
  }
}

TEST(CoefficientField, LengthMismatch) {
  auto basis = std::make_shared<FourierBasis>(reference_basis());
  EXPECT_THROW(coefficient_field(basis, std::vector<double>(3, 0.0), {}), ConfigError);
  EXPECT_THROW(coefficient_field(basis, std::vector<double>(64, 0.0), std::vector<double>(2, 1.0)), ConfigError);
}

TEST(WeightedNorm, Definition) {
  const std::vector<double> s{1.0, 2.0}, b{3.0, 0.5};
  EXPECT_DOUBLE_EQ(weighted_norm(s, b), std::sqrt(9.0 + 1.0));
}

TEST(Scaling, ParseRoundTrip) {
  EXPECT_EQ(parse_scaling(to_string(BasisScaling::lambda)), BasisScaling::lambda);
  EXPECT_EQ(parse_scaling(to_string(BasisScaling::sqrt_lambda)), BasisScaling::sqrt_lambda);
  EXPECT_THROW(parse_scaling("sqrt"), ConfigError);
}
