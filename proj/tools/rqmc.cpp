// rqmc: command-line front end for the RQMC convergence laboratory.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "rqmc/study.hpp"

using namespace rqmc;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw ConfigError("'" + item + "' is not a number");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("empty number list");
  return out;
}

std::string direction_file(const std::string& dirs) { return dirs.empty() ? default_direction_numbers_path() : dirs; }

Integrand make_integrand(const std::string& sigma_text, const std::string& is_kind, const std::string& params_text) {
  auto g = lognormal_product(parse_list(sigma_text));
  if (is_kind == "none") return g;
  std::vector<double> p = parse_list(params_text);
  if (p.size() == 1 && g.dimension > 1) p.assign(g.dimension, p[0]);
  if (is_kind == "scaled_normal") return scaled_normal_is(g, p);
  if (is_kind == "beta_like") return beta_like_is(g, p);
  throw ConfigError("unknown IS kind '" + is_kind + "'");
}

// Reads "n,pooled_mean,rmse" rows (extra leading columns are not supported).
RqmcResult read_summary(std::istream& in) {
  RqmcResult res;
  std::string line;
  if (!std::getline(in, line) || line.rfind("n,pooled_mean,rmse", 0) != 0)
    throw ConfigError("summary CSV must start with the header n,pooled_mean,rmse");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string a, b, c;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c, ','))
      throw ParseError("expected three columns", lineno);
    RqmcLevel l;
    try {
      l.n = std::stoull(a);
      l.pooled_mean = std::stod(b);
      l.rmse = std::stod(c);
    } catch (const std::exception&) {
      throw ParseError("malformed number", lineno);
    }
    res.levels.push_back(l);
  }
  return res;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RQMC convergence laboratory"};
  app.require_subcommand(1);
  std::string dirs;
  unsigned threads = 0;
  app.add_option("--dirs", dirs, "direction-number file (default: $RQMC_DIRECTION_FILE or the bundled table)");
  app.add_option("--threads", threads, "worker threads (0 = all cores)");

  // sobol
  auto* sobol = app.add_subcommand("sobol", "print scrambled Sobol' points as CSV");
  std::size_t sob_dims = 2;
  std::uint64_t sob_n = 8, sob_seed = 20240501, sob_rep = 0;
  bool sob_plain = false;
  sobol->add_option("-s,--dims", sob_dims, "dimension")->check(CLI::PositiveNumber);
  sobol->add_option("-n,--points", sob_n, "number of points");
  sobol->add_option("--seed", sob_seed, "master seed");
  sobol->add_option("--replicate", sob_rep, "replicate index");
  sobol->add_flag("--unscrambled", sob_plain, "unrandomized points");

  // estimate / sweep share the integrand options
  std::string sigma = "1", is_kind = "none", is_params = "1";
  std::uint64_t seed = 20240501;
  int replicates = 30, batches = 1, lo = 10, hi = 16;
  std::uint64_t n_single = 1024;
  std::string replicates_out;
  auto add_common = [&](CLI::App* c) {
    c->add_option("--sigma", sigma, "comma-separated sigma_j of the lognormal product");
    c->add_option("--is", is_kind, "importance sampling: none, scaled_normal, beta_like");
    c->add_option("--is-params", is_params, "alpha_j or beta_j (one value broadcasts)");
    c->add_option("--seed", seed, "master seed");
    c->add_option("-R,--replicates", replicates, "scramble replicates per batch");
    c->add_option("--batches", batches, "independent batches (RMSE is their median)");
  };
  auto* est = app.add_subcommand("estimate", "RQMC mean and RMSE at one n");
  add_common(est);
  est->add_option("-n,--points", n_single, "sample size (power of two)");
  auto* sweep = app.add_subcommand("sweep", "RQMC over n = 2^lo..2^hi; summary CSV on stdout");
  add_common(sweep);
  sweep->add_option("--lo", lo, "log2 of the smallest n");
  sweep->add_option("--hi", hi, "log2 of the largest n");
  sweep->add_option("--replicates-csv", replicates_out, "also write per-replicate means here");

  // fit-rate
  auto* fit = app.add_subcommand("fit-rate", "least-squares rate from a summary CSV");
  std::string fit_in = "-";
  std::uint64_t fit_lo = 0, fit_hi = 0;
  int fit_top = 3;
  fit->add_option("input", fit_in, "summary CSV (n,pooled_mean,rmse); - for stdin");
  fit->add_option("--n-lo", fit_lo, "window start (grid point)");
  fit->add_option("--n-hi", fit_hi, "window end (grid point)");
  fit->add_option("--top", fit_top, "use the largest `top` grid points when no window is given");

  // bound
  auto* bnd = app.add_subcommand("bound", "evaluate the error-bound model");
  std::string b_coef = "1";
  double b_C = 1.0, b_eps = 0.05, b_delta = 1e-6, b_Ceps = 1.0;
  int b_lo = 10, b_hi = 20;
  bnd->add_option("--coefficients", b_coef, "sigma_j (lognormal) or sigma_j b_j (PDE)");
  bnd->add_option("--C", b_C, "hyperbolic-set constant");
  bnd->add_option("--epsilon", b_eps, "discrepancy exponent");
  bnd->add_option("--delta-bar", b_delta, "perturbation separating the exponents");
  bnd->add_option("--C-eps-s", b_Ceps, "star-discrepancy constant");
  bnd->add_option("--lo", b_lo, "log2 of the smallest n");
  bnd->add_option("--hi", b_hi, "log2 of the largest n");

  // is-opt
  auto* iso = app.add_subcommand("is-opt", "pilot search for IS parameters; trace CSV on stdout");
  std::string iso_kind = "scaled_normal";
  PilotOptions po;
  iso->add_option("--sigma", sigma, "comma-separated sigma_j of the lognormal product");
  iso->add_option("--kind", iso_kind, "scaled_normal or beta_like");
  iso->add_option("--pilot-n", po.pilot_n, "pilot sample size (power of two)");
  iso->add_option("--seed", po.seed, "pilot seed");
  iso->add_option("--restarts", po.restarts, "Nelder-Mead restarts");

  // basis
  auto* basis = app.add_subcommand("basis", "build, dump or validate basis files");
  basis->require_subcommand(1);
  auto* bbuild = basis->add_subcommand("build", "tabulate a Fourier basis to a file");
  std::string bpath;
  std::size_t bs = 16, bm = 256;
  std::uint32_t bgrid = 257;
  double bgamma = 2.0, bnu = 4.5, br = 1.0;
  std::string bscale = "lambda";
  bbuild->add_option("output", bpath, "basis file")->required();
  bbuild->add_option("-s,--modes", bs, "number of modes");
  bbuild->add_option("--gamma", bgamma, "extension half-width");
  bbuild->add_option("--grid-m", bm, "FFT grid per axis");
  bbuild->add_option("--grid-n", bgrid, "tabulation grid per axis");
  bbuild->add_option("--nu", bnu, "Matern smoothness");
  bbuild->add_option("--r", br, "Matern correlation length");
  bbuild->add_option("--scaling", bscale, "lambda or sqrt_lambda");
  auto* bdump = basis->add_subcommand("dump", "print header and sup-norms");
  auto* bval = basis->add_subcommand("validate", "check a basis file against the mesh domain");
  bdump->add_option("input", bpath, "basis file")->required();
  bval->add_option("input", bpath, "basis file")->required();

  // study
  auto* study = app.add_subcommand("study", "run a JSON-configured experiment");
  std::string cfg_path, out_dir;
  std::vector<std::string> sets;
  study->add_option("config", cfg_path, "study config (JSON)")->required();
  study->add_option("--set", sets, "override a leaf: dotted.key=value");
  study->add_option("-o,--output", out_dir, "output directory (overrides output_dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (!dirs.empty()) load_direction_numbers(dirs, 1);

    if (*sobol) {
      const SobolGenerator gen(load_direction_numbers(direction_file(dirs), sob_dims), sob_dims);
      const RandomizedPointSet set = sob_plain ? RandomizedPointSet(gen) : RandomizedPointSet(gen, fresh_scramble(sob_seed, sob_rep, sob_dims));
      std::cout << "i";
      for (std::size_t j = 0; j < sob_dims; ++j) std::cout << ",t" << j;
      std::cout << '\n';
      for (auto cur = set.cursor(); cur.index() < sob_n; cur.advance()) {
        std::cout << cur.index();
        for (double v : cur.point()) std::cout << ',' << fmt(v);
        std::cout << '\n';
      }
    } else if (*est || *sweep) {
      RqmcConfig c;
      c.n_grid = *est ? std::vector<std::uint64_t>{n_single} : pow2_grid(lo, hi);
      c.replicates = replicates;
      c.batches = batches;
      c.seed = seed;
      c.threads = threads;
      c.direction_file = dirs;
      const auto g = make_integrand(sigma, is_kind, is_params);
      const auto res = estimate(g, c);
      if (*est) {
        const auto& l = res.levels[0];
        std::cout << "n,pooled_mean,rmse,exact\n"
                  << l.n << ',' << fmt(l.pooled_mean) << ',' << fmt(l.rmse) << ',' << fmt(g.exact_mean.value_or(NAN)) << '\n';
      } else {
        write_summary_csv(std::cout, res);
        if (!replicates_out.empty()) {
          std::ofstream os(replicates_out);
          if (!os) throw ConfigError("cannot write '" + replicates_out + "'");
          write_replicates_csv(os, res);
        }
      }
    } else if (*fit) {
      RqmcResult res;
      if (fit_in == "-") {
        res = read_summary(std::cin);
      } else {
        std::ifstream in(fit_in);
        if (!in) throw ConfigError("cannot open '" + fit_in + "'");
        res = read_summary(in);
      }
      const auto f = (fit_lo != 0 || fit_hi != 0) ? fit_rate(res, fit_lo, fit_hi) : fit_rate_top(res, static_cast<std::size_t>(fit_top));
      std::cout << "gamma,intercept,n_lo,n_hi,residual_norm\n"
                << fmt(f.gamma) << ',' << fmt(f.intercept) << ',' << f.n_lo << ',' << f.n_hi << ',' << fmt(f.residual_norm) << '\n';
    } else if (*bnd) {
      bound::GrowthSpec spec;
      spec.coefficients = parse_list(b_coef);
      spec.C = b_C;
      spec.epsilon = b_eps;
      spec.delta_bar = b_delta;
      spec.C_eps_s = b_Ceps;
      if (b_lo > b_hi) throw ConfigError("--lo must not exceed --hi");
      std::cout << "n,a_star_max,rate_exponent,in_range,B_star,C1,C2,bound_value\n";
      for (int m = b_lo; m <= b_hi; ++m) {
        const auto e = bound::theorem_bound(spec, std::ldexp(1.0, m));
        std::cout << fmt(e.n) << ',' << fmt(e.a_star_max()) << ',' << fmt(e.rate_exponent) << ',' << (e.in_range ? 1 : 0) << ',';
        if (e.in_range)
          std::cout << fmt(e.B_star) << ',' << fmt(e.C1) << ',' << fmt(e.C2) << ',' << fmt(e.bound_value) << '\n';
        else
          std::cout << ",,,\n";
      }
    } else if (*iso) {
      po.direction_file = dirs;
      const auto g = lognormal_product(parse_list(sigma));
      IsOptResult r;
      if (iso_kind == "scaled_normal")
        r = optimize_alpha(g, po);
      else if (iso_kind == "beta_like")
        r = optimize_beta(g, po);
      else
        throw ConfigError("unknown IS kind '" + iso_kind + "' (expected scaled_normal or beta_like)");
      std::cout << "restart,iteration,objective,params\n";
      for (const auto& row : r.trace) {
        std::cout << row.restart << ',' << row.iteration << ',' << fmt(row.objective) << ',';
        for (std::size_t j = 0; j < row.params.size(); ++j) std::cout << (j ? " " : "") << fmt(row.params[j]);
        std::cout << '\n';
      }
      std::cerr << "chosen:";
      for (double p : r.params) std::cerr << ' ' << fmt(p);
      std::cerr << "  objective " << fmt(r.objective) << " (identity " << fmt(r.objective_at_identity) << ")"
                << (r.fallback ? " [fallback]" : "") << '\n';
    } else if (*bbuild) {
      const auto fb = build_fourier_basis(MaternKernel{bnu, br}, bgamma, bm, bs, parse_scaling(bscale));
      save_basis_file(bpath, fb, bgrid);
      std::cerr << "wrote " << bs << " modes on a " << bgrid << "x" << bgrid << " grid to " << bpath << '\n';
    } else if (*bdump || *bval) {
      const auto tb = load_basis_file(bpath);
      if (*bdump) {
        const auto& d = tb.domain();
        std::cout << "# s=" << tb.size() << " grid_n=" << tb.grid_n() << " domain=[" << fmt(d.x0) << ',' << fmt(d.x1) << "]x["
                  << fmt(d.y0) << ',' << fmt(d.y1) << "]\nj,b\n";
        for (std::size_t j = 0; j < tb.size(); ++j) std::cout << j << ',' << fmt(tb.sup_norm(j)) << '\n';
      } else {
        std::cout << "ok: " << tb.size() << " modes, grid " << tb.grid_n() << '\n';
      }
    } else if (*study) {
      json cfg = load_config_file(cfg_path);
      for (const auto& s : sets) apply_override(cfg, s);
      StudyOptions so;
      so.threads = threads;
      if (!dirs.empty()) cfg["rqmc"]["direction_file"] = dirs;
      const auto out = run_study(cfg, so);
      const std::string dir = !out_dir.empty() ? out_dir : out.manifest["config"]["output_dir"].get<std::string>();
      write_study(out, dir);
      std::cout << out.rates_csv;
      std::cerr << "wrote " << dir << "/{summary,replicates,rates,bound}.csv and manifest.json\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  return 0;
}
