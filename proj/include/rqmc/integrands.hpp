#pragma once

// Integrands on the open unit cube, the two importance-sampling transforms and
// their pilot-based parameter search.

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rqmc/error.hpp"
#include "rqmc/gauss.hpp"
#include "rqmc/lds.hpp"

namespace rqmc {

using PointFn = std::function<double(std::span<const double>)>;

// Evaluators are produced by factories so that stateful integrands (the PDE
// solver) can hand every worker its own scratch space.
struct Integrand {
  std::string name;
  std::size_t dimension = 0;
  std::optional<double> exact_mean;
  std::function<PointFn()> cube;      // t in (0,1)^s
  std::function<PointFn()> gaussian;  // y in R^s, with g(t) = nu(inv_norm(t)); may be empty

  PointFn evaluator() const { return cube(); }
  bool has_gaussian_view() const { return static_cast<bool>(gaussian); }

  double operator()(std::span<const double> t) const { return cube()(t); }
};

// Wraps a Gaussian-domain function nu into a cube-domain integrand via the refined inverse CDF.
inline Integrand from_gaussian(std::string name, std::size_t s, std::function<PointFn()> nu,
                               std::optional<double> mean = std::nullopt) {
  Integrand g;
  g.name = std::move(name);
  g.dimension = s;
  g.exact_mean = mean;
  g.gaussian = nu;
  g.cube = [nu, s]() -> PointFn {
    PointFn inner = nu();
    auto y = std::make_shared<std::vector<double>>(s);
    return [inner, y](std::span<const double> t) {
      for (std::size_t j = 0; j < t.size(); ++j) (*y)[j] = inv_norm(t[j]);
      return inner(*y);
    };
  };
  return g;
}

inline Integrand constant_integrand(std::size_t s, double c) {
  return from_gaussian("constant", s, [c]() -> PointFn { return [c](std::span<const double>) { return c; }; }, c);
}

// g(t) = exp(sum_j sigma_j inv_norm(t_j)), mean prod_j exp(sigma_j^2 / 2).
inline Integrand lognormal_product(std::vector<double> sigma) {
  if (sigma.empty()) throw ConfigError("lognormal_product: sigma must be nonempty");
  double log_mean = 0.0;
  for (double x : sigma) {
    if (!(x > 0.0) || !std::isfinite(x)) throw ConfigError("lognormal_product: sigma entries must be positive");
    log_mean += 0.5 * x * x;
  }
  const std::size_t s = sigma.size();
  auto nu = [sigma]() -> PointFn {
    return [sigma](std::span<const double> y) {
      double acc = 0.0;
      for (std::size_t j = 0; j < sigma.size(); ++j) acc += sigma[j] * y[j];
      return std::exp(acc);
    };
  };
  return from_gaussian("lognormal", s, nu, std::exp(log_mean));
}

// ---------------------------------------------------------------------------
// Scaled-normal proposal N(0, diag(alpha^2)).

inline void check_alpha(std::span<const double> alpha, std::size_t s) {
  if (alpha.size() != s) throw ConfigError("scaled-normal IS: alpha has wrong length");
  for (double a : alpha)
    if (!(a >= 1.0) || !std::isfinite(a)) throw ConfigError("scaled-normal IS: alpha entries must be >= 1");
}

// g_IS(t) = (prod alpha) nu(alpha * y) prod exp(-y^2 (alpha^2 - 1) / 2), y = inv_norm(t).
inline Integrand scaled_normal_is(const Integrand& inner, std::vector<double> alpha) {
  if (!inner.has_gaussian_view()) throw ConfigError("scaled-normal IS needs a Gaussian-domain integrand");
  check_alpha(alpha, inner.dimension);
  double prod = 1.0;
  for (double a : alpha) prod *= a;
  Integrand g;
  g.name = inner.name + "+scaled_normal";
  g.dimension = inner.dimension;
  g.exact_mean = inner.exact_mean;
  auto nu = inner.gaussian;
  const std::size_t s = inner.dimension;
  g.cube = [nu, alpha, prod, s]() -> PointFn {
    PointFn f = nu();
    auto z = std::make_shared<std::vector<double>>(s);
    return [f, alpha, prod, z](std::span<const double> t) {
      double log_w = 0.0;
      for (std::size_t j = 0; j < t.size(); ++j) {
        const double y = inv_norm(t[j]);
        (*z)[j] = alpha[j] * y;
        log_w -= 0.5 * y * y * (alpha[j] * alpha[j] - 1.0);
      }
      return prod * f(*z) * std::exp(log_w);
    };
  };
  return g;
}

// ---------------------------------------------------------------------------
// Beta-like proposal: rho(t) = C t^{beta-1} on (0, 1/2], mirrored, C = beta (1/2)^{1-beta}.

namespace beta_like {

inline void check(double beta) {
  if (!(beta > 0.0 && beta <= 1.0)) throw ConfigError("beta-like IS: beta must lie in (0,1]");
}

inline double normalizer(double beta) { return beta * std::pow(0.5, 1.0 - beta); }

inline double pdf(double t, double beta) {
  const double x = t <= 0.5 ? t : 1.0 - t;
  return normalizer(beta) * std::pow(x, beta - 1.0);
}

inline double cdf(double t, double beta) {
  if (t <= 0.5) return std::pow(0.5, 1.0 - beta) * std::pow(t, beta);
  return 1.0 - std::pow(0.5, 1.0 - beta) * std::pow(1.0 - t, beta);
}

// Lower branch (2w)^{1/beta} / 2; upper branch by reflection.
inline double inv_cdf(double w, double beta) {
  if (w <= 0.5) return 0.5 * std::pow(2.0 * w, 1.0 / beta);
  return 1.0 - 0.5 * std::pow(2.0 * (1.0 - w), 1.0 / beta);
}

// The mapped point is kept in [2^-53, 1 - 2^-53] on both sides so the inner
// integrand never sees 0 or 1; the weight is evaluated at the clamped point.
inline constexpr double kMappedMin = 0x1p-53;
inline constexpr double kMappedMax = 1.0 - 0x1p-53;

}  // namespace beta_like

// g_IS(w) = g(t) / prod rho_beta(t_j) with t = Phi_beta^{-1}(w).
inline Integrand beta_like_is(const Integrand& inner, std::vector<double> beta) {
  if (beta.size() != inner.dimension) throw ConfigError("beta-like IS: beta has wrong length");
  for (double b : beta) beta_like::check(b);
  Integrand g;
  g.name = inner.name + "+beta_like";
  g.dimension = inner.dimension;
  g.exact_mean = inner.exact_mean;
  auto cube = inner.cube;
  const std::size_t s = inner.dimension;
  g.cube = [cube, beta, s]() -> PointFn {
    PointFn f = cube();
    auto t = std::make_shared<std::vector<double>>(s);
    return [f, beta, t](std::span<const double> w) {
      double dens = 1.0;
      for (std::size_t j = 0; j < w.size(); ++j) {
        if (beta[j] == 1.0) {
          (*t)[j] = w[j];
          continue;
        }
        const double x = std::clamp(beta_like::inv_cdf(w[j], beta[j]), beta_like::kMappedMin, beta_like::kMappedMax);
        (*t)[j] = x;
        dens *= beta_like::pdf(x, beta[j]);
      }
      return f(*t) / dens;
    };
  };
  return g;
}

// ---------------------------------------------------------------------------
// Pilot-based parameter search.

struct TraceRow {
  int restart = 0;
  int iteration = 0;
  double objective = 0.0;
  std::vector<double> params;
};

struct IsOptResult {
  std::vector<double> params;
  double objective = 0.0;
  double objective_at_identity = 0.0;  // alpha = 1 or beta = 1
  bool fallback = false;               // no finite objective found; identity returned
  std::vector<TraceRow> trace;
};

struct PilotOptions {
  std::uint64_t pilot_n = 4096;
  std::uint64_t seed = 0x9170;
  int restarts = 3;
  int max_iterations = 2000;
  double size_tolerance = 1e-7;
  std::string direction_file;  // empty -> default table
};

inline void check_pilot_n(std::uint64_t n) {
  if (n == 0 || (n & (n - 1)) != 0) throw ConfigError("pilot_n must be a power of two");
}

// Pilot points are scrambled Sobol' points from a stream separate from the
// study replicates (replicate index 2^63 + seed).
inline std::vector<std::vector<double>> pilot_points(std::size_t s, const PilotOptions& opt) {
  check_pilot_n(opt.pilot_n);
  const auto path = opt.direction_file.empty() ? default_direction_numbers_path() : opt.direction_file;
  SobolGenerator gen(load_direction_numbers(path, s), s);
  RandomizedPointSet set(gen, fresh_scramble(opt.seed, std::uint64_t{1} << 63, s));
  std::vector<std::vector<double>> pts;
  pts.reserve(opt.pilot_n);
  for (auto cur = set.cursor(); cur.index() < opt.pilot_n; cur.advance())
    pts.emplace_back(cur.point().begin(), cur.point().end());
  return pts;
}

namespace detail {

// Nelder-Mead (GSL nmsimplex2) with restarts from the incumbent.
inline void nelder_mead(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x0,
                        double step, const PilotOptions& opt, std::vector<double>& best_x, double& best_f,
                        std::vector<TraceRow>& trace, const std::function<std::vector<double>(const std::vector<double>&)>& to_params) {
  const std::size_t dim = x0.size();
  struct Ctx {
    const std::function<double(const std::vector<double>&)>* f;
    std::vector<double> buf;
  } ctx{&f, std::vector<double>(dim)};
  gsl_multimin_function fn;
  fn.n = dim;
  fn.params = &ctx;
  fn.f = [](const gsl_vector* v, void* p) {
    auto* c = static_cast<Ctx*>(p);
    for (std::size_t i = 0; i < c->buf.size(); ++i) c->buf[i] = gsl_vector_get(v, i);
    const double val = (*c->f)(c->buf);
    return std::isfinite(val) ? val : std::numeric_limits<double>::max();
  };
  gsl_set_error_handler_off();
  std::unique_ptr<gsl_multimin_fminimizer, void (*)(gsl_multimin_fminimizer*)> m(
      gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, dim), gsl_multimin_fminimizer_free);
  std::unique_ptr<gsl_vector, void (*)(gsl_vector*)> x(gsl_vector_alloc(dim), gsl_vector_free);
  std::unique_ptr<gsl_vector, void (*)(gsl_vector*)> ss(gsl_vector_alloc(dim), gsl_vector_free);

  for (int restart = 0; restart < opt.restarts; ++restart) {
    for (std::size_t i = 0; i < dim; ++i) gsl_vector_set(x.get(), i, x0[i]);
    gsl_vector_set_all(ss.get(), step);
    gsl_multimin_fminimizer_set(m.get(), &fn, x.get(), ss.get());
    for (int it = 1; it <= opt.max_iterations; ++it) {
      if (gsl_multimin_fminimizer_iterate(m.get()) != GSL_SUCCESS) break;
      std::vector<double> cur(dim);
      for (std::size_t i = 0; i < dim; ++i) cur[i] = gsl_vector_get(m->x, i);
      trace.push_back({restart, it, m->fval, to_params(cur)});
      if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(m.get()), opt.size_tolerance) == GSL_SUCCESS) break;
    }
    std::vector<double> cur(dim);
    for (std::size_t i = 0; i < dim; ++i) cur[i] = gsl_vector_get(m->x, i);
    if (m->fval < best_f) {
      best_f = m->fval;
      best_x = cur;
    }
    x0 = best_x.empty() ? cur : best_x;
  }
}

}  // namespace detail

// Pilot estimate of the relative second moment of the scaled-normal IS integrand,
// (prod alpha) (1/n) sum nu^2(y_i) rho(y_i) / rho(y_i / alpha).
class AlphaObjective {
 public:
  AlphaObjective(const Integrand& inner, const PilotOptions& opt) : s_(inner.dimension) {
    if (!inner.has_gaussian_view()) throw ConfigError("optimize_alpha needs a Gaussian-domain integrand");
    PointFn nu = inner.gaussian();
    for (const auto& t : pilot_points(s_, opt)) {
      std::vector<double> y(s_);
      for (std::size_t j = 0; j < s_; ++j) y[j] = inv_norm(t[j]);
      const double v = nu(y);
      nu2_.push_back(v * v);
      y2_.insert(y2_.end(), y.begin(), y.end());
    }
  }

  double operator()(std::span<const double> alpha) const {
    double log_prod = 0.0;
    std::vector<double> k(s_);
    for (std::size_t j = 0; j < s_; ++j) {
      log_prod += std::log(alpha[j]);
      k[j] = 0.5 * (1.0 - 1.0 / (alpha[j] * alpha[j]));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < nu2_.size(); ++i) {
      double e = 0.0;
      for (std::size_t j = 0; j < s_; ++j) {
        const double y = y2_[i * s_ + j];
        e -= k[j] * y * y;
      }
      acc += nu2_[i] * std::exp(e);
    }
    return std::exp(log_prod) * acc / static_cast<double>(nu2_.size());
  }

 private:
  std::size_t s_;
  std::vector<double> nu2_;
  std::vector<double> y2_;
};

inline constexpr double kAlphaEta = 1e-6;

inline IsOptResult optimize_alpha(const Integrand& inner, const PilotOptions& opt = {}) {
  const std::size_t s = inner.dimension;
  AlphaObjective obj(inner, opt);
  auto to_alpha = [](const std::vector<double>& p) {
    std::vector<double> a(p.size());
    for (std::size_t j = 0; j < p.size(); ++j) a[j] = std::max(1.0, 1.0 - kAlphaEta + std::exp(p[j]));
    return a;
  };
  auto f = [&](const std::vector<double>& p) { return obj(to_alpha(p)); };

  IsOptResult out;
  const std::vector<double> ones(s, 1.0);
  out.objective_at_identity = obj(ones);

  // Isotropic start at alpha = 1.5; shrink toward alpha = 1 while the objective overflows.
  double a0 = 1.5, step = 1.0;
  std::vector<double> p0(s);
  bool finite = false;
  for (int attempt = 0; attempt < 10 && !finite; ++attempt) {
    std::fill(p0.begin(), p0.end(), std::log(a0 - 1.0 + kAlphaEta));
    finite = std::isfinite(f(p0));
    if (!finite) {
      a0 = 1.0 + 0.5 * (a0 - 1.0);
      step *= 0.5;
    }
  }
  std::vector<double> best_p;
  double best = std::numeric_limits<double>::infinity();
  if (finite) detail::nelder_mead(f, p0, step, opt, best_p, best, out.trace, to_alpha);

  if (!std::isfinite(best) && !std::isfinite(out.objective_at_identity)) {
    out.fallback = true;
    out.params = ones;
    out.objective = out.objective_at_identity;
    return out;
  }
  if (std::isfinite(best) && best < out.objective_at_identity) {
    out.params = to_alpha(best_p);
    out.objective = best;
  } else {
    out.params = ones;
    out.objective = out.objective_at_identity;
  }
  return out;
}

// Pilot estimate of the IS second moment (1/n) sum g^2(w_i) / rho_beta(w_i), w_i uniform pilot points.
class BetaObjective {
 public:
  BetaObjective(const Integrand& inner, const PilotOptions& opt) : s_(inner.dimension) {
    PointFn g = inner.evaluator();
    for (const auto& w : pilot_points(s_, opt)) {
      const double v = g(w);
      g2_.push_back(v * v);
      // log of the folded coordinate min(w, 1 - w)
      for (double x : w) logx_.push_back(std::log(x <= 0.5 ? x : 1.0 - x));
    }
  }

  double operator()(std::span<const double> beta) const {
    double log_c = 0.0;
    for (double b : beta) log_c += std::log(beta_like::normalizer(b));
    double acc = 0.0;
    for (std::size_t i = 0; i < g2_.size(); ++i) {
      double e = -log_c;
      for (std::size_t j = 0; j < s_; ++j) e -= (beta[j] - 1.0) * logx_[i * s_ + j];
      acc += g2_[i] * std::exp(e);
    }
    return acc / static_cast<double>(g2_.size());
  }

 private:
  std::size_t s_;
  std::vector<double> g2_;
  std::vector<double> logx_;
};

inline IsOptResult optimize_beta(const Integrand& inner, const PilotOptions& opt = {}) {
  const std::size_t s = inner.dimension;
  BetaObjective obj(inner, opt);
  auto to_beta = [](const std::vector<double>& q) {
    std::vector<double> b(q.size());
    for (std::size_t j = 0; j < q.size(); ++j) b[j] = std::clamp(1.0 / (1.0 + std::exp(-q[j])), 1e-3, 1.0);
    return b;
  };
  auto f = [&](const std::vector<double>& q) { return obj(to_beta(q)); };

  IsOptResult out;
  const std::vector<double> ones(s, 1.0);
  out.objective_at_identity = obj(ones);

  double b0 = 0.7, step = 1.0;
  std::vector<double> q0(s);
  bool finite = false;
  for (int attempt = 0; attempt < 10 && !finite; ++attempt) {
    std::fill(q0.begin(), q0.end(), std::log(b0 / (1.0 - b0)));
    finite = std::isfinite(f(q0));
    if (!finite) {
      b0 = 1.0 - 0.5 * (1.0 - b0);
      step *= 0.5;
    }
  }
  std::vector<double> best_q;
  double best = std::numeric_limits<double>::infinity();
  if (finite) detail::nelder_mead(f, q0, step, opt, best_q, best, out.trace, to_beta);

  if (!std::isfinite(best) && !std::isfinite(out.objective_at_identity)) {
    out.fallback = true;
    out.params = ones;
    out.objective = out.objective_at_identity;
    return out;
  }
  if (std::isfinite(best) && best < out.objective_at_identity) {
    out.params = to_beta(best_q);
    out.objective = best;
  } else {
    out.params = ones;
    out.objective = out.objective_at_identity;
  }
  return out;
}

}  // namespace rqmc
