#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "rqmc/error.hpp"

namespace rqmc {

enum class InverseCdfVariant {
  AS_26_2_23,  // Abramowitz-Stegun rational approximation, |error| < 4.5e-4
  Refined,     // AS start polished by two Halley-Newton steps on the erfc-based CDF
};

namespace as26223 {
inline constexpr double c0 = 2.515517;
inline constexpr double c1 = 0.802853;
inline constexpr double c2 = 0.010328;
inline constexpr double d1 = 1.432788;
inline constexpr double d2 = 0.189269;
inline constexpr double d3 = 0.001308;
inline constexpr double max_error = 4.5e-4;

// tau - (c0 + c1 tau + c2 tau^2) / (1 + d1 tau + d2 tau^2 + d3 tau^3)
inline double tail_value(double tau) {
  return tau - (c0 + tau * (c1 + tau * c2)) / (1.0 + tau * (d1 + tau * (d2 + tau * d3)));
}
}  // namespace as26223

inline double norm_pdf(double x) { return std::exp(-0.5 * x * x) * (0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2); }

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * (0.5 * std::numbers::sqrt2)); }

namespace detail {
// Lower half (0, 1/2]; two Newton steps on Phi(x) - t with the Halley curvature
// correction. Plain Newton from the AS start leaves ~2e-12 near t = 1e-15.
inline double refined_lower(double t) {
  double x = -as26223::tail_value(std::sqrt(-2.0 * std::log(t)));
  for (int step = 0; step < 2; ++step) {
    const double e = (norm_cdf(x) - t) / norm_pdf(x);
    x -= e / (1.0 + 0.5 * x * e);
  }
  return x;
}
}  // namespace detail

inline double inv_norm(double t, InverseCdfVariant variant = InverseCdfVariant::Refined) {
  if (!(t > 0.0 && t < 1.0)) throw DomainError("inv_norm: argument " + std::to_string(t) + " outside (0,1)");
  if (variant == InverseCdfVariant::AS_26_2_23) {
    if (t <= 0.5) return -as26223::tail_value(std::sqrt(-2.0 * std::log(t)));
    return as26223::tail_value(std::sqrt(-2.0 * std::log1p(-t)));
  }
  if (t <= 0.5) return detail::refined_lower(t);
  return -detail::refined_lower(1.0 - t);
}

}  // namespace rqmc
