#pragma once

// Lognormal coefficient fields on D = [-1,1]^2: Matern covariance, a
// trigonometric basis from the Fourier series of the kernel on the periodic
// extension [-gamma, gamma]^2, and tabulated bases read from disk.

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <memory>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "rqmc/error.hpp"

namespace rqmc {

// Half-integer Matern kernel nu = p + 1/2, unit variance:
// C(h) = e^{-z} p!/(2p)! sum_{i=0}^{p} (p+i)!/(i!(p-i)!) (2z)^{p-i}, z = sqrt(2 nu) h / r.
struct MaternKernel {
  double nu = 4.5;
  double r = 1.0;

  int half_integer_order() const {
    const double p = nu - 0.5;
    if (!(p >= 0.0) || std::abs(p - std::round(p)) > 1e-12)
      throw ConfigError("Matern kernel: only half-integer smoothness nu = p + 1/2 is supported");
    if (!(r > 0.0)) throw ConfigError("Matern kernel: correlation length must be positive");
    return static_cast<int>(std::round(p));
  }

  double operator()(double h) const {
    const int p = half_integer_order();
    const double z = std::sqrt(2.0 * nu) * std::abs(h) / r;
    double acc = 0.0;
    for (int i = 0; i <= p; ++i) {
      const double coef = std::exp(std::lgamma(p + i + 1.0) - std::lgamma(i + 1.0) - std::lgamma(p - i + 1.0));
      acc += coef * std::pow(2.0 * z, p - i);
    }
    return std::exp(-z + std::lgamma(p + 1.0) - std::lgamma(2.0 * p + 1.0)) * acc;
  }
};

inline double matern_cov(double h, double nu, double r) { return MaternKernel{nu, r}(h); }

// Mode functions evaluable anywhere in D; b_j = sup over D of |psi_j|.
class SpatialBasis {
 public:
  virtual ~SpatialBasis() = default;
  virtual std::size_t size() const = 0;
  virtual double value(std::size_t j, double x, double y) const = 0;
  virtual double sup_norm(std::size_t j) const = 0;

  std::vector<double> sup_norms() const {
    std::vector<double> b(size());
    for (std::size_t j = 0; j < b.size(); ++j) b[j] = sup_norm(j);
    return b;
  }
};

enum class BasisScaling { lambda, sqrt_lambda };

inline std::string to_string(BasisScaling s) { return s == BasisScaling::lambda ? "lambda" : "sqrt_lambda"; }

inline BasisScaling parse_scaling(const std::string& s) {
  if (s == "lambda") return BasisScaling::lambda;
  if (s == "sqrt_lambda") return BasisScaling::sqrt_lambda;
  throw ConfigError("unknown basis scaling '" + s + "' (expected lambda or sqrt_lambda)");
}

// One real trigonometric factor: 1 (k = 0), sqrt2 cos(pi k x / gamma) or sqrt2 sin(pi k x / gamma).
struct AxisMode {
  int k = 0;
  bool sine = false;

  double operator()(double x, double gamma) const {
    if (k == 0) return 1.0;
    const double w = std::numbers::pi * k * x / gamma;
    return std::numbers::sqrt2 * (sine ? std::sin(w) : std::cos(w));
  }

  auto key() const { return std::array<int, 2>{k, sine ? 1 : 0}; }
};

struct SpectralMode {
  double lambda = 0.0;
  AxisMode ax, ay;
  double coefficient = 0.0;  // lambda or sqrt(lambda)
  double b = 0.0;            // sup over D
  double b_extended = 0.0;   // sup over D_p
};

struct SpectralStats {
  double lambda_max = 0.0;
  double lambda_min_all = 0.0;  // most negative Fourier coefficient on the torus
  std::size_t negative_count = 0;
  double lambda_min_retained = 0.0;
};

// Sup over [-1,1] of |f| for a 1-D mode, from a dense grid plus local refinement passes.
inline double axis_sup_numeric(const AxisMode& m, double gamma, int grid = 512) {
  double best = -1.0, arg = -1.0;
  for (int i = 0; i < grid; ++i) {
    const double x = -1.0 + 2.0 * i / (grid - 1);
    const double v = std::abs(m(x, gamma));
    if (v > best) {
      best = v;
      arg = x;
    }
  }
  // zoom around the running argmax; each pass shrinks the bracket 128-fold
  double h = 2.0 / (grid - 1);
  for (int pass = 0; pass < 4; ++pass) {
    const double lo = std::max(-1.0, arg - h), hi = std::min(1.0, arg + h);
    for (int i = 0; i <= 256; ++i) {
      const double x = lo + (hi - lo) * i / 256.0;
      const double v = std::abs(m(x, gamma));
      if (v > best) {
        best = v;
        arg = x;
      }
    }
    h /= 128.0;
  }
  return best;
}

class FourierBasis : public SpatialBasis {
 public:
  FourierBasis(double gamma, std::size_t grid_m, BasisScaling scaling, std::vector<SpectralMode> modes, SpectralStats stats)
      : gamma_(gamma), grid_m_(grid_m), scaling_(scaling), modes_(std::move(modes)), stats_(stats) {}

  std::size_t size() const override { return modes_.size(); }
  double value(std::size_t j, double x, double y) const override {
    const auto& m = modes_[j];
    return m.coefficient * m.ax(x, gamma_) * m.ay(y, gamma_);
  }
  double sup_norm(std::size_t j) const override { return modes_[j].b; }

  double gamma() const { return gamma_; }
  std::size_t grid_m() const { return grid_m_; }
  BasisScaling scaling() const { return scaling_; }
  const SpectralMode& mode(std::size_t j) const { return modes_[j]; }
  const SpectralStats& stats() const { return stats_; }

 private:
  double gamma_;
  std::size_t grid_m_;
  BasisScaling scaling_;
  std::vector<SpectralMode> modes_;
  SpectralStats stats_;
};

// Fourier-series coefficients of C(|h|) on the M x M torus of [-gamma, gamma]^2
// (spacing 2 gamma / M), symmetrized over the eight lattice symmetries, for 0 <= k < M/2.
inline std::vector<double> torus_fourier_coefficients(const std::function<double(double)>& kernel, double gamma,
                                                      std::size_t M) {
  const std::size_t half = M / 2;
  const double dx = 2.0 * gamma / static_cast<double>(M);
  std::vector<double> samples(M * M);
  for (std::size_t i = 0; i < M; ++i) {
    const double hx = static_cast<double>(std::min(i, M - i)) * dx;
    for (std::size_t j = 0; j < M; ++j) {
      const double hy = static_cast<double>(std::min(j, M - j)) * dx;
      samples[i * M + j] = kernel(std::hypot(hx, hy));
    }
  }
  const std::size_t cols = M / 2 + 1;
  fftw_complex* out = fftw_alloc_complex(M * cols);
  fftw_plan plan = fftw_plan_dft_r2c_2d(static_cast<int>(M), static_cast<int>(M), samples.data(), out, FFTW_ESTIMATE);
  fftw_execute(plan);
  auto re = [&](std::size_t k1, std::size_t k2) {
    // r2c stores k2 in [0, M/2]; use conjugate symmetry for the rest
    if (k2 <= M / 2) return out[k1 * cols + k2][0];
    return out[((M - k1) % M) * cols + (M - k2)][0];
  };
  const double scale = 1.0 / static_cast<double>(M * M);
  std::vector<double> lam(half * half);
  for (std::size_t k1 = 0; k1 < half; ++k1)
    for (std::size_t k2 = 0; k2 < half; ++k2) {
      const std::size_t n1 = (M - k1) % M, n2 = (M - k2) % M;
      const double v = re(k1, k2) + re(n1, k2) + re(k1, n2) + re(n1, n2) + re(k2, k1) + re(n2, k1) + re(k2, n1) + re(n2, n1);
      lam[k1 * half + k2] = v * scale / 8.0;
    }
  fftw_destroy_plan(plan);
  fftw_free(out);
  return lam;
}

// Keeps the s largest coefficients; ties are ordered by (k1, parity1, k2, parity2).
// Positivity is enforced on the retained modes; the torus spectrum as a whole
// may have small negative entries, which are reported in stats.
inline FourierBasis build_fourier_basis(const std::function<double(double)>& kernel, double gamma, std::size_t M,
                                        std::size_t s, BasisScaling scaling = BasisScaling::lambda) {
  if (M < 64 || (M & (M - 1)) != 0) throw ConfigError("Fourier basis: grid M must be a power of two >= 64");
  if (!(gamma >= 1.0)) throw ConfigError("Fourier basis: extension half-width gamma must be >= 1");
  if (s == 0) throw ConfigError("Fourier basis: dimension s must be positive");
  const std::size_t half = M / 2;
  const auto lam = torus_fourier_coefficients(kernel, gamma, M);

  SpectralStats stats;
  stats.lambda_max = *std::max_element(lam.begin(), lam.end());
  stats.lambda_min_all = *std::min_element(lam.begin(), lam.end());
  stats.negative_count = static_cast<std::size_t>(std::count_if(lam.begin(), lam.end(), [](double v) { return v < 0.0; }));

  std::vector<SpectralMode> all;
  for (int k1 = 0; k1 < static_cast<int>(half); ++k1)
    for (int k2 = 0; k2 < static_cast<int>(half); ++k2) {
      const double l = lam[static_cast<std::size_t>(k1) * half + static_cast<std::size_t>(k2)];
      for (int p1 = 0; p1 < (k1 == 0 ? 1 : 2); ++p1)
        for (int p2 = 0; p2 < (k2 == 0 ? 1 : 2); ++p2) {
          SpectralMode m;
          m.lambda = l;
          m.ax = {k1, p1 == 1};
          m.ay = {k2, p2 == 1};
          all.push_back(m);
        }
    }
  if (s > all.size()) throw ConfigError("Fourier basis: requested more modes than the grid provides");
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(s), all.end(),
                    [](const SpectralMode& a, const SpectralMode& b) {
                      if (a.lambda != b.lambda) return a.lambda > b.lambda;
                      if (a.ax.key() != b.ax.key()) return a.ax.key() < b.ax.key();
                      return a.ay.key() < b.ay.key();
                    });
  all.resize(s);

  // Clamp rounding-level negatives, reject material ones.
  for (auto& m : all) {
    if (m.lambda < -1e-12 * stats.lambda_max)
      throw NumericError("Fourier basis: retained coefficient " + std::to_string(m.lambda) +
                         " is negative; the extension is too small, increase gamma");
    if (m.lambda < 0.0) m.lambda = 0.0;
  }
  stats.lambda_min_retained = all.back().lambda;

  for (auto& m : all) {
    m.coefficient = scaling == BasisScaling::lambda ? m.lambda : std::sqrt(m.lambda);
    m.b = m.coefficient * axis_sup_numeric(m.ax, gamma) * axis_sup_numeric(m.ay, gamma);
    m.b_extended = m.coefficient * (m.ax.k == 0 ? 1.0 : std::numbers::sqrt2) * (m.ay.k == 0 ? 1.0 : std::numbers::sqrt2);
  }
  return FourierBasis(gamma, M, scaling, std::move(all), stats);
}

inline FourierBasis build_fourier_basis(const MaternKernel& k, double gamma, std::size_t M, std::size_t s,
                                        BasisScaling scaling = BasisScaling::lambda) {
  k.half_integer_order();
  return build_fourier_basis(std::function<double(double)>(k), gamma, M, s, scaling);
}

// ---------------------------------------------------------------------------
// Tabulated bases (binary, little-endian):
//   "QMCB1", u32 s, u32 grid_n, f64 x0, x1, y0, y1,
//   then per mode: f64 b_j, grid_n^2 f64 values (row-major, row = y index).

struct BasisDomain {
  double x0 = -1.0, x1 = 1.0, y0 = -1.0, y1 = 1.0;
  bool operator==(const BasisDomain&) const = default;
};

class TabulatedBasis : public SpatialBasis {
 public:
  TabulatedBasis(std::uint32_t grid_n, BasisDomain domain, std::vector<double> b, std::vector<std::vector<double>> values)
      : n_(grid_n), dom_(domain), b_(std::move(b)), values_(std::move(values)) {
    if (b_.empty()) throw ConfigError("basis file: empty mode list");
    if (n_ < 2) throw ConfigError("basis file: grid resolution must be at least 2");
    if (!(dom_.x1 > dom_.x0 && dom_.y1 > dom_.y0)) throw ConfigError("basis file: degenerate domain");
    for (std::size_t j = 0; j < b_.size(); ++j) {
      if (values_[j].size() != std::size_t{n_} * n_) throw ConfigError("basis file: mode " + std::to_string(j) + " has wrong size");
      double mx = 0.0;
      for (double v : values_[j]) {
        if (!std::isfinite(v)) throw ConfigError("basis file: non-finite value in mode " + std::to_string(j));
        mx = std::max(mx, std::abs(v));
      }
      if (!(b_[j] >= mx * (1.0 - 1e-12)))
        throw ConfigError("basis file: b_" + std::to_string(j) + " = " + std::to_string(b_[j]) +
                          " is below the tabulated maximum " + std::to_string(mx));
    }
  }

  std::size_t size() const override { return b_.size(); }
  double sup_norm(std::size_t j) const override { return b_[j]; }

  // Bilinear interpolation; points outside the tabulated domain are clamped to it.
  double value(std::size_t j, double x, double y) const override {
    const double fx = std::clamp((x - dom_.x0) / (dom_.x1 - dom_.x0), 0.0, 1.0) * (n_ - 1);
    const double fy = std::clamp((y - dom_.y0) / (dom_.y1 - dom_.y0), 0.0, 1.0) * (n_ - 1);
    const std::size_t ix = std::min<std::size_t>(static_cast<std::size_t>(fx), n_ - 2);
    const std::size_t iy = std::min<std::size_t>(static_cast<std::size_t>(fy), n_ - 2);
    const double tx = fx - ix, ty = fy - iy;
    const auto& v = values_[j];
    const double v00 = v[iy * n_ + ix], v01 = v[iy * n_ + ix + 1];
    const double v10 = v[(iy + 1) * n_ + ix], v11 = v[(iy + 1) * n_ + ix + 1];
    return (1.0 - ty) * ((1.0 - tx) * v00 + tx * v01) + ty * ((1.0 - tx) * v10 + tx * v11);
  }

  std::uint32_t grid_n() const { return n_; }
  const BasisDomain& domain() const { return dom_; }
  const std::vector<double>& values(std::size_t j) const { return values_[j]; }

 private:
  std::uint32_t n_;
  BasisDomain dom_;
  std::vector<double> b_;
  std::vector<std::vector<double>> values_;
};

namespace detail {
static_assert(std::numeric_limits<double>::is_iec559, "basis files assume IEEE-754 doubles");

inline bool host_little_endian() {
  const std::uint16_t probe = 1;
  unsigned char c;
  std::memcpy(&c, &probe, 1);
  return c == 1;
}

template <class T>
void write_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if (!host_little_endian()) std::reverse(buf, buf + sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T read_le(std::istream& is, const char* what) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw ConfigError(std::string("basis file: truncated ") + what);
  if (!host_little_endian()) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}
}  // namespace detail

inline constexpr char kBasisMagic[5] = {'Q', 'M', 'C', 'B', '1'};

// Samples any basis on a grid_n x grid_n grid over the domain; b_j is taken from the basis.
inline void write_basis(std::ostream& os, const SpatialBasis& basis, std::uint32_t grid_n, BasisDomain dom = {}) {
  if (grid_n < 2) throw ConfigError("basis file: grid resolution must be at least 2");
  os.write(kBasisMagic, sizeof kBasisMagic);
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(basis.size()));
  detail::write_le<std::uint32_t>(os, grid_n);
  for (double d : {dom.x0, dom.x1, dom.y0, dom.y1}) detail::write_le<double>(os, d);
  for (std::size_t j = 0; j < basis.size(); ++j) {
    detail::write_le<double>(os, basis.sup_norm(j));
    for (std::uint32_t iy = 0; iy < grid_n; ++iy) {
      const double y = dom.y0 + (dom.y1 - dom.y0) * iy / (grid_n - 1);
      for (std::uint32_t ix = 0; ix < grid_n; ++ix) {
        const double x = dom.x0 + (dom.x1 - dom.x0) * ix / (grid_n - 1);
        detail::write_le<double>(os, basis.value(j, x, y));
      }
    }
  }
  if (!os) throw ConfigError("basis file: write failed");
}

// `expected` is the mesh domain the basis will be evaluated on.
inline TabulatedBasis load_basis(std::istream& is, BasisDomain expected = {}) {
  char magic[5];
  if (!is.read(magic, 5) || std::memcmp(magic, kBasisMagic, 5) != 0) throw ConfigError("basis file: bad magic (expected QMCB1)");
  const auto s = detail::read_le<std::uint32_t>(is, "header");
  const auto n = detail::read_le<std::uint32_t>(is, "header");
  BasisDomain dom;
  dom.x0 = detail::read_le<double>(is, "domain");
  dom.x1 = detail::read_le<double>(is, "domain");
  dom.y0 = detail::read_le<double>(is, "domain");
  dom.y1 = detail::read_le<double>(is, "domain");
  if (s == 0) throw ConfigError("basis file: empty mode list");
  if (n < 2) throw ConfigError("basis file: grid resolution must be at least 2");
  if (!(dom == expected))
    throw ConfigError("basis file: domain [" + std::to_string(dom.x0) + "," + std::to_string(dom.x1) + "]x[" +
                      std::to_string(dom.y0) + "," + std::to_string(dom.y1) + "] does not match the mesh domain");
  std::vector<double> b(s);
  std::vector<std::vector<double>> vals(s, std::vector<double>(std::size_t{n} * n));
  for (std::uint32_t j = 0; j < s; ++j) {
    b[j] = detail::read_le<double>(is, "mode norm");
    for (auto& v : vals[j]) v = detail::read_le<double>(is, "mode values");
  }
  return TabulatedBasis(n, dom, std::move(b), std::move(vals));
}

inline void save_basis_file(const std::string& path, const SpatialBasis& basis, std::uint32_t grid_n) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open '" + path + "' for writing");
  write_basis(os, basis, grid_n);
}

inline TabulatedBasis load_basis_file(const std::string& path, BasisDomain expected = {}) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open basis file '" + path + "'");
  return load_basis(is, expected);
}

// ---------------------------------------------------------------------------

// a(x) = exp(sum_j y_j sigma_j psi_j(x)).
inline std::function<double(double, double)> coefficient_field(std::shared_ptr<const SpatialBasis> basis,
                                                               std::vector<double> y, std::vector<double> sigma) {
  if (y.size() != basis->size()) throw ConfigError("coefficient field: sample length does not match the basis");
  if (sigma.empty()) sigma.assign(y.size(), 1.0);
  if (sigma.size() != y.size()) throw ConfigError("coefficient field: sigma length does not match the basis");
  return [basis, y = std::move(y), sigma = std::move(sigma)](double x1, double x2) {
    double acc = 0.0;
    for (std::size_t j = 0; j < y.size(); ++j) acc += y[j] * sigma[j] * basis->value(j, x1, x2);
    return std::exp(acc);
  };
}

// sqrt(sum_j sigma_j^2 b_j^2), the abscissa of the PDE rate plot.
inline double weighted_norm(std::span<const double> sigma, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t j = 0; j < sigma.size(); ++j) acc += sigma[j] * sigma[j] * b[j] * b[j];
  return std::sqrt(acc);
}

}  // namespace rqmc
