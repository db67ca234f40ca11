#pragma once

// Nonasymptotic RQMC error model: corner probabilities, boundary-growth
// exponents from the anchor optimization, the constants of the error bound
// and closed-form tail integrals of prod t_j^{-A_j}.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "rqmc/error.hpp"

namespace rqmc::bound {

// Worst-case error of the rational inverse-CDF approximation, used inside K_1.
inline constexpr double kInverseCdfError = 4.5e-4;

// Pr(prod_j t_j <= C n^{-r}) for t ~ U[0,1]^s, i.e. the regularized upper
// incomplete gamma Q(s, x) with x = r log n - log C, via the Poisson sum.
inline double regularized_upper_gamma_int(unsigned s, double x) {
  if (s == 0) throw DomainError("incomplete gamma shape must be positive");
  if (!(x >= 0.0)) throw DomainError("incomplete gamma argument must be nonnegative");
  double term = 1.0, sum = 1.0;
  for (unsigned k = 1; k < s; ++k) {
    term *= x / k;
    sum += term;
  }
  return std::exp(-x) * sum;
}

inline double corner_probability(unsigned s, double n, double r, double C) {
  if (!(r > 1.0)) throw DomainError("corner_probability: r must exceed 1");
  if (!(C > 0.0)) throw DomainError("corner_probability: C must be positive");
  const double x = r * std::log(n) - std::log(C);
  if (!(x > 0.0)) throw DomainError("corner_probability: threshold r log n - log C must be positive");
  return regularized_upper_gamma_int(s, x);
}

// G_s(x) / Gamma(s), an upper bound on Q(s, x). Needs s >= 2: b_s = Gamma(s+1)^{1/(s-1)}.
inline double pinelis_bound(unsigned s, double x) {
  if (s < 2) throw DomainError("pinelis_bound: b_s is undefined for s < 2");
  if (!(x > 0.0)) throw DomainError("pinelis_bound: x must be positive");
  const double bs = std::exp(std::lgamma(s + 1.0) / (s - 1.0));
  const double g = (std::pow(x + bs, s) - std::pow(x, s)) / (s * bs) * std::exp(-x);
  return g / std::tgamma(static_cast<double>(s));
}

inline double pinelis_b(unsigned s) {
  if (s < 2) throw DomainError("pinelis_bound: b_s is undefined for s < 2");
  return std::exp(std::lgamma(s + 1.0) / (s - 1.0));
}

// K_{n,s} membership: prod_j min(t_j, 1 - t_j) >= C / n.
inline bool in_hyperbolic_set(std::span<const double> t, double n, double C) {
  double prod = 1.0;
  for (double tj : t) prod *= std::min(tj, 1.0 - tj);
  return prod >= C / n;
}

inline double sum_of_squares(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0, [](double acc, double x) { return acc + x * x; });
}

// Maximizer of sum_j sigma_j sqrt(-2 log v_j) subject to prod_j v_j = delta:
// -log v_j = sigma_j^2 / sum sigma^2 * log(1/delta).
inline std::vector<double> anchor_optimum(std::span<const double> sigma, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw DomainError("anchor_optimum: delta must lie in (0,1)");
  const double total = sum_of_squares(sigma);
  const double log_inv_delta = -std::log(delta);
  std::vector<double> v(sigma.size());
  for (std::size_t j = 0; j < sigma.size(); ++j) v[j] = std::exp(-sigma[j] * sigma[j] / total * log_inv_delta);
  return v;
}

// Objective of the anchor problem: log B(v) - sum_j A_j(v) log v_j.
inline double anchor_objective(std::span<const double> v, std::span<const double> sigma) {
  double acc = 0.0;
  for (std::size_t j = 0; j < v.size(); ++j) acc += sigma[j] * std::sqrt(-2.0 * std::log(v[j]));
  return acc;
}

struct LocalGrowth {
  std::vector<double> A;
  double B = 0.0;
};

// Tangent bound h(v) <= B(v_c) prod v_j^{-A_j(v_c)} with h(v) = exp(sum sigma_j sqrt(-2 log v_j)).
inline LocalGrowth local_growth(std::span<const double> v_c, std::span<const double> sigma) {
  LocalGrowth out;
  out.A.resize(v_c.size());
  double log_b = 0.0;
  for (std::size_t j = 0; j < v_c.size(); ++j) {
    const double z = -std::log(v_c[j]);
    out.A[j] = sigma[j] / std::sqrt(2.0 * z);
    log_b += sigma[j] * std::sqrt(z / 2.0);
  }
  out.B = std::exp(log_b);
  return out;
}

inline double growth_function(std::span<const double> v, std::span<const double> sigma) {
  return std::exp(anchor_objective(v, sigma));
}

inline double log_n_over_c(double n, double C) {
  if (!(n > C)) throw DomainError("bound model requires n > C");
  return std::log(n) - std::log(C);
}

// A* = sqrt(sum sigma^2 / (2 (log n - log C))).
inline double a_star(std::span<const double> sigma, double n, double C) {
  return std::sqrt(sum_of_squares(sigma) / (2.0 * log_n_over_c(n, C)));
}

// B(v_c*) = exp(sqrt(sum sigma^2 / 2 * (log n - log C))).
inline double b_star(std::span<const double> sigma, double n, double C) {
  return std::exp(std::sqrt(sum_of_squares(sigma) / 2.0 * log_n_over_c(n, C)));
}

// phi'(A_j) = prod_{k != j} (A_j - A_k).
inline double phi_prime(std::span<const double> A, std::size_t j) {
  double p = 1.0;
  for (std::size_t k = 0; k < A.size(); ++k)
    if (k != j) p *= A[j] - A[k];
  return p;
}

inline void require_distinct(std::span<const double> A, double min_gap) {
  for (std::size_t i = 0; i < A.size(); ++i)
    for (std::size_t k = i + 1; k < A.size(); ++k)
      if (std::abs(A[i] - A[k]) < min_gap)
        throw DomainError("sobol_tail_integral: exponents " + std::to_string(i) + " and " + std::to_string(k) +
                          " are not distinct; use the equal-exponent form or perturb");
}

// Integral of prod t_j^{-A_j} over G(eps) = {t in [0,1]^s : prod t_j >= eps}:
// 1/phi(1) + sum_j eps^{1-A_j} / ((A_j - 1) phi'(A_j)).
inline double sobol_region_integral(std::span<const double> A, double eps) {
  require_distinct(A, 1e-9);
  double phi1 = 1.0;
  for (double a : A) phi1 *= 1.0 - a;
  double acc = 1.0 / phi1;
  for (std::size_t j = 0; j < A.size(); ++j) acc += std::pow(eps, 1.0 - A[j]) / ((A[j] - 1.0) * phi_prime(A, j));
  return acc;
}

// Integral of prod t_j^{-A_j} over the corner [0,1]^s \ G(eps), distinct A_j < 1.
inline double sobol_tail_integral(std::span<const double> A, double eps) {
  for (double a : A)
    if (!(a < 1.0)) throw DomainError("sobol_tail_integral: exponents must be < 1");
  if (!(eps > 0.0 && eps <= 1.0)) throw DomainError("sobol_tail_integral: eps must lie in (0,1]");
  require_distinct(A, 1e-9);
  double acc = 0.0;
  for (std::size_t j = 0; j < A.size(); ++j) acc += std::pow(eps, 1.0 - A[j]) / ((1.0 - A[j]) * phi_prime(A, j));
  return acc;
}

// Equal exponents: sum_{k=1}^s eps^{1-A} / (1-A)^k * (-log eps)^{s-k} / (s-k)!.
inline double sobol_tail_integral_equal(double A, unsigned s, double eps) {
  if (!(A < 1.0)) throw DomainError("sobol_tail_integral: exponent must be < 1");
  if (s == 0) throw DomainError("sobol_tail_integral: dimension must be positive");
  if (!(eps > 0.0 && eps <= 1.0)) throw DomainError("sobol_tail_integral: eps must lie in (0,1]");
  const double L = -std::log(eps);
  const double lead = std::pow(eps, 1.0 - A);
  double acc = 0.0;
  for (unsigned k = 1; k <= s; ++k)
    acc += lead / std::pow(1.0 - A, k) * std::pow(L, s - k) / std::tgamma(s - k + 1.0);
  return acc;
}

// Equal exponents over G(eps): the full-cube integral (1-A)^{-s} minus the tail.
inline double sobol_region_integral_equal(double A, unsigned s, double eps) {
  return std::pow(1.0 - A, -static_cast<double>(s)) - sobol_tail_integral_equal(A, s, eps);
}

// Error bound exp(sqrt(c log n)) n^{-1 + sqrt(c / log n)} at n, and the same
// envelope with the rate frozen at n1.
struct MonotoneExample {
  double lhs = 0.0;
  double rhs = 0.0;
};

inline MonotoneExample example_bound_monotone(double c, double n1, double n) {
  const double ln = std::log(n), ln1 = std::log(n1);
  MonotoneExample out;
  out.lhs = std::exp(std::sqrt(c * ln)) * std::pow(n, -1.0 + std::sqrt(c / ln));
  out.rhs = std::exp(std::sqrt(c * ln1)) * std::pow(n, -1.0 + std::sqrt(c / ln1));
  return out;
}

enum class IsKind { none, scaled_normal, beta_like };

// Predicted RQMC rate exponent after importance sampling. The max(0, .) clamp
// encodes that removing the singularity cannot beat -1 + eps + delta.
inline double predicted_is_exponent(IsKind kind, std::span<const double> params, double eps, double delta) {
  if (params.empty()) throw DomainError("predicted_is_exponent: empty parameter vector");
  const double base = -1.0 + eps + delta;
  switch (kind) {
    case IsKind::scaled_normal: {
      const double amin = *std::min_element(params.begin(), params.end());
      if (!(amin > 0.0)) throw DomainError("predicted_is_exponent: alpha must be positive");
      return base + std::max(0.0, 1.0 - amin * amin);
    }
    case IsKind::beta_like: {
      const double bmax = *std::max_element(params.begin(), params.end());
      const double bmin = *std::min_element(params.begin(), params.end());
      if (!(bmin > 0.0 && bmax <= 1.0)) throw DomainError("predicted_is_exponent: beta must lie in (0,1]");
      return base + std::max(0.0, 1.0 - 1.0 / bmax);
    }
    case IsKind::none:
      break;
  }
  throw DomainError("predicted_is_exponent: no importance sampling selected");
}

// Free constants of the model.
struct GrowthSpec {
  std::vector<double> coefficients;  // sigma_j (lognormal) or b_j (PDE)
  double C = 1.0;                    // hyperbolic-set constant
  double epsilon = 0.05;             // discrepancy exponent
  double delta_bar = 1e-6;           // perturbation separating the A_j*
  double C_eps_s = 1.0;              // star-discrepancy constant
};

struct BoundEval {
  double n = 0.0;
  std::vector<double> A_star;  // perturbed, ascending
  double B_star = 0.0;
  double B_tilde = 0.0;
  double C1 = 0.0;
  double C2 = 0.0;
  double bound_value = 0.0;
  double rate_exponent = 0.0;
  bool in_range = true;  // false when some A_j* >= 1 (model not applicable)

  double a_star_max() const { return A_star.empty() ? 0.0 : A_star.back(); }
};

// Assembles the constants of the nonasymptotic RQMC error bound
//   E|I - I_n| <= C1 n^{-1 + max A*} + C2 n^{-1 + eps + max A*}.
// C1 takes absolute values term-wise since phi'(A_j*) alternates in sign.
inline BoundEval theorem_bound(const GrowthSpec& spec, double n) {
  const auto& sigma = spec.coefficients;
  const std::size_t s = sigma.size();
  if (s == 0) throw DomainError("theorem_bound: empty coefficient vector");
  if (!(spec.C / n <= 1.0)) throw DomainError("theorem_bound: requires C / n <= 1");
  BoundEval out;
  out.n = n;
  const double a0 = a_star(sigma, n, spec.C);
  out.A_star.resize(s);
  for (std::size_t j = 0; j < s; ++j) out.A_star[j] = static_cast<double>(j) * spec.delta_bar + a0;
  const double a_max = out.A_star.back();
  out.rate_exponent = -1.0 + spec.epsilon + a_max;
  if (!(a_max < 1.0)) {
    out.in_range = false;
    return out;
  }
  for (std::size_t j = 1; j < s; ++j)
    if (!(out.A_star[j] > out.A_star[j - 1])) throw NumericError("theorem_bound: perturbed exponents are not distinct");

  const double eb = kInverseCdfError;
  double sum_sigma = 0.0, prod_sigma = 1.0;
  for (double x : sigma) {
    sum_sigma += x;
    prod_sigma *= x;
  }
  const double K1 = std::exp(eb * sum_sigma) * std::sqrt(2.0 * std::numbers::pi) * std::exp(eb * eb / 2.0) * prod_sigma;
  out.B_star = b_star(sigma, n, spec.C) * K1;

  double prod_a = 1.0;
  for (double a : out.A_star) prod_a *= 1.0 + 1.0 / a;
  out.B_tilde = std::ldexp(out.B_star * prod_a, static_cast<int>(s));

  double c1_sum = 0.0;
  for (std::size_t j = 0; j < s; ++j) {
    const double a = out.A_star[j];
    c1_sum += std::abs(std::pow(spec.C, 1.0 - a) / ((a - 1.0) * phi_prime(out.A_star, j)));
  }
  out.C1 = std::ldexp(out.B_tilde * c1_sum, static_cast<int>(s) + 1);

  // Subset sum over nonempty u; A* ascends with index so m(u) is the largest member.
  double c2_sum = 0.0;
  const std::uint64_t subsets = std::uint64_t{1} << s;
  for (std::uint64_t mask = 1; mask < subsets; ++mask) {
    const int m = 63 - std::countl_zero(mask);
    const double am = out.A_star[m];
    double term = 1.0 / am;
    for (int j = 0; j < m; ++j)
      if ((mask >> j) & 1u) term /= am - out.A_star[j];
    c2_sum += term;
  }
  out.C2 = spec.C_eps_s * out.B_star * std::pow(2.5, static_cast<double>(s)) * c2_sum * std::pow(spec.C, -a_max);

  out.bound_value = out.C1 * std::pow(n, -1.0 + a_max) + out.C2 * std::pow(n, -1.0 + spec.epsilon + a_max);
  return out;
}

}  // namespace rqmc::bound
