#pragma once

// RQMC mean/RMSE over independent scramble replicates, and log-log rate fits.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "rqmc/error.hpp"
#include "rqmc/integrands.hpp"
#include "rqmc/lds.hpp"

namespace rqmc {

struct RqmcConfig {
  std::vector<std::uint64_t> n_grid;
  int replicates = 30;
  int batches = 1;  // independent RQMC estimators per n, each with `replicates` scrambles
  std::uint64_t seed = 20240501;
  unsigned threads = 0;        // 0 -> hardware concurrency
  std::string direction_file;  // empty -> default table

  void validate() const {
    if (n_grid.empty()) throw ConfigError("n grid is empty");
    for (std::size_t i = 0; i < n_grid.size(); ++i) {
      const auto n = n_grid[i];
      if (n == 0 || (n & (n - 1)) != 0) throw ConfigError("n grid entries must be powers of two");
      if (i > 0 && n <= n_grid[i - 1]) throw ConfigError("n grid must be strictly increasing");
      if (n > (std::uint64_t{1} << 32)) throw ConfigError("n grid entries must not exceed 2^32");
    }
    if (replicates < 2) throw ConfigError("at least two replicates are needed for an RMSE");
    if (batches < 1) throw ConfigError("batches must be positive");
  }
};

// Powers of two 2^lo, ..., 2^hi.
inline std::vector<std::uint64_t> pow2_grid(int lo, int hi) {
  if (lo < 0 || hi > 32 || lo > hi) throw ConfigError("invalid power-of-two grid bounds");
  std::vector<std::uint64_t> g;
  for (int m = lo; m <= hi; ++m) g.push_back(std::uint64_t{1} << m);
  return g;
}

struct RqmcLevel {
  std::uint64_t n = 0;
  std::vector<double> replicate_means;  // all batches, batch-major
  std::vector<double> batch_rmse;       // one RMSE per batch
  double pooled_mean = 0.0;
  double rmse = 0.0;  // median of batch_rmse; the plain RMSE when there is one batch
};

struct RqmcResult {
  std::vector<RqmcLevel> levels;

  const RqmcLevel& at(std::uint64_t n) const {
    for (const auto& l : levels)
      if (l.n == n) return l;
    throw ConfigError("n = " + std::to_string(n) + " is not on the grid");
  }
};

inline double pooled_mean(const std::vector<double>& means) {
  double acc = 0.0;
  for (double m : means) acc += m;
  return acc / static_cast<double>(means.size());
}

// sqrt( sum_r (I_r - I_bar)^2 / (R (R - 1)) )
inline double rmse_of(const std::vector<double>& means) {
  const double R = static_cast<double>(means.size());
  const double mean = pooled_mean(means);
  double ss = 0.0;
  for (double m : means) ss += (m - mean) * (m - mean);
  return std::sqrt(ss / (R * (R - 1.0)));
}

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size();
  return k % 2 == 1 ? v[k / 2] : 0.5 * (v[k / 2 - 1] + v[k / 2]);
}

inline unsigned resolve_threads(unsigned requested) {
  if (requested != 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

// Runs body(r) for r in [0, count) on a small pool; the first failure (lowest r) is rethrown.
template <class Body>
void parallel_for(std::size_t count, unsigned threads, Body&& body) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t r = next++; r < count; r = next++) {
      try {
        body(r);
      } catch (...) {
        errors[r] = std::current_exception();
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// For every replicate r: a fresh scramble keyed on (seed, r); running sums over
// the first n_max points give the estimate at each grid n (the point sets are nested).
// Replicates r in [b R, (b + 1) R) form batch b.
inline RqmcResult estimate(const Integrand& g, const RqmcConfig& cfg) {
  cfg.validate();
  const std::size_t s = g.dimension;
  const auto path = cfg.direction_file.empty() ? default_direction_numbers_path() : cfg.direction_file;
  const SobolGenerator gen(load_direction_numbers(path, s), s);
  const std::size_t Rb = static_cast<std::size_t>(cfg.replicates);
  const std::size_t R = Rb * static_cast<std::size_t>(cfg.batches);
  const std::size_t L = cfg.n_grid.size();
  std::vector<double> sums(R * L);

  parallel_for(R, resolve_threads(cfg.threads), [&](std::size_t r) {
    const RandomizedPointSet set(gen, fresh_scramble(cfg.seed, r, s));
    PointFn f = g.evaluator();
    double acc = 0.0;
    std::size_t level = 0;
    for (auto cur = set.cursor();; cur.advance()) {
      const double v = f(cur.point());
      if (!std::isfinite(v))
        throw NumericError("non-finite integrand value at n = " + std::to_string(cfg.n_grid[level]) +
                           ", replicate " + std::to_string(r) + ", point " + std::to_string(cur.index()));
      acc += v;
      if (cur.index() + 1 == cfg.n_grid[level]) {
        sums[r * L + level] = acc;
        if (++level == L) break;
      }
    }
  });

  RqmcResult out;
  for (std::size_t l = 0; l < L; ++l) {
    RqmcLevel lev;
    lev.n = cfg.n_grid[l];
    lev.replicate_means.resize(R);
    for (std::size_t r = 0; r < R; ++r) lev.replicate_means[r] = sums[r * L + l] / static_cast<double>(lev.n);
    lev.pooled_mean = pooled_mean(lev.replicate_means);
    for (std::size_t b = 0; b < R; b += Rb)
      lev.batch_rmse.push_back(rmse_of(std::vector<double>(lev.replicate_means.begin() + b, lev.replicate_means.begin() + b + Rb)));
    lev.rmse = median_of(lev.batch_rmse);
    out.levels.push_back(std::move(lev));
  }
  return out;
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  double residual_norm = 0.0;
};

// Ordinary least squares y = intercept + slope x.
inline LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ConfigError("line fit needs at least two points");
  const double m = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= m;
  my /= m;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw NumericError("line fit: abscissae are all equal");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double rss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - f.intercept - f.slope * x[i];
    rss += e * e;
  }
  f.residual_norm = std::sqrt(rss);
  f.r_squared = syy > 0.0 ? 1.0 - rss / syy : 1.0;
  return f;
}

struct RateFit {
  double gamma = 0.0;      // -slope of log2 rmse on log2 n
  double intercept = 0.0;  // log2 rmse at n = 1
  std::uint64_t n_lo = 0, n_hi = 0;
  double residual_norm = 0.0;
};

inline RateFit fit_rate(const RqmcResult& res, std::uint64_t n_lo, std::uint64_t n_hi) {
  std::vector<double> x, y;
  for (const auto& l : res.levels) {
    if (l.n < n_lo || l.n > n_hi) continue;
    if (!(l.rmse > 0.0)) throw NumericError("rate fit: zero RMSE at n = " + std::to_string(l.n));
    x.push_back(std::log2(static_cast<double>(l.n)));
    y.push_back(std::log2(l.rmse));
  }
  if (x.size() < 2) throw ConfigError("rate fit: window contains fewer than two grid points");
  const bool lo_on_grid = std::any_of(res.levels.begin(), res.levels.end(), [&](const auto& l) { return l.n == n_lo; });
  const bool hi_on_grid = std::any_of(res.levels.begin(), res.levels.end(), [&](const auto& l) { return l.n == n_hi; });
  if (!lo_on_grid || !hi_on_grid) throw ConfigError("rate fit: window endpoints must be grid points");
  const auto f = fit_line(x, y);
  return {-f.slope, f.intercept, n_lo, n_hi, f.residual_norm};
}

// Window of the largest `count` grid points.
inline RateFit fit_rate_top(const RqmcResult& res, std::size_t count) {
  if (res.levels.size() < count || count < 2) throw ConfigError("rate fit: grid too short for the window");
  return fit_rate(res, res.levels[res.levels.size() - count].n, res.levels.back().n);
}

// Shortest round-trip decimal representation.
inline std::string fmt(double x) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

inline void write_summary_csv(std::ostream& os, const RqmcResult& res) {
  os << "n,pooled_mean,rmse\n";
  for (const auto& l : res.levels) os << l.n << ',' << fmt(l.pooled_mean) << ',' << fmt(l.rmse) << '\n';
}

inline void write_replicates_csv(std::ostream& os, const RqmcResult& res) {
  os << "n,r,replicate_mean\n";
  for (const auto& l : res.levels)
    for (std::size_t r = 0; r < l.replicate_means.size(); ++r) os << l.n << ',' << r << ',' << fmt(l.replicate_means[r]) << '\n';
}

}  // namespace rqmc
