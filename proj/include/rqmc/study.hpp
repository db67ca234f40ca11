#pragma once

// Config-driven experiment runner: lognormal and PDE studies, rate fits,
// bound-model tables and a manifest of every free constant.

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rqmc/bound.hpp"
#include "rqmc/error.hpp"
#include "rqmc/estimator.hpp"
#include "rqmc/fem.hpp"
#include "rqmc/integrands.hpp"
#include "rqmc/randomfield.hpp"

namespace rqmc {

using json = nlohmann::json;

inline constexpr const char* kVersion = "1.0.0";

// ---------------------------------------------------------------------------
// sigma recipes

// ones -> 1; constant -> value; uniform -> U[1, 2];
// scaled_lognormal -> sqrt(s) xi / ||xi||, xi ~ Lognormal(0, 1), so sum sigma^2 = s.
inline std::vector<double> sigma_recipe(const std::string& kind, std::size_t s, std::uint64_t seed, double value = 1.0) {
  if (s == 0) throw ConfigError("sigma recipe: dimension must be positive");
  std::vector<double> out(s, 1.0);
  if (kind == "ones") return out;
  if (kind == "constant") {
    if (!(value > 0.0) || !std::isfinite(value)) throw ConfigError("sigma recipe: constant value must be positive");
    out.assign(s, value);
    return out;
  }
  std::mt19937_64 rng(seed);
  if (kind == "uniform") {
    std::uniform_real_distribution<double> u(1.0, 2.0);
    for (auto& v : out) v = u(rng);
    return out;
  }
  if (kind == "scaled_lognormal") {
    std::lognormal_distribution<double> ln(0.0, 1.0);
    double ss = 0.0;
    for (auto& v : out) {
      v = ln(rng);
      ss += v * v;
    }
    const double scale = std::sqrt(static_cast<double>(s) / ss);
    for (auto& v : out) v *= scale;
    return out;
  }
  throw ConfigError("unknown sigma recipe '" + kind + "' (expected ones, constant, uniform or scaled_lognormal)");
}

// ---------------------------------------------------------------------------
// Config: defaults double as the schema; unknown keys are rejected.

inline json default_study_config() {
  return json::parse(R"({
    "name": "study",
    "experiment": "lognormal",
    "output_dir": "out",
    "cases": [],
    "pde": {
      "dimensions": [4],
      "sigma_cases": [],
      "mesh_n": 16,
      "rhs": "one",
      "tolerance": 1e-10,
      "warm_start": "reference",
      "basis": {"kind": "fourier", "file": "", "nu": 4.5, "r": 1.0, "gamma": 2.0, "grid_m": 256, "scaling": "lambda"}
    },
    "is": {"kind": "none", "params": "pilot", "pilot_n": 4096, "pilot_seed": 37232, "restarts": 3},
    "rqmc": {"n_min_log2": 10, "n_max_log2": 20, "replicates": 30, "batches": 1, "seed": 20240501, "threads": 0,
             "direction_file": ""},
    "fit": {"top": 3},
    "bound": {"enabled": true, "C": 1.0, "epsilon": 0.05, "delta_bar": 1e-6, "C_eps_s": 1.0, "n_log2": []}
  })");
}

namespace detail {

inline const json& case_schema() {
  static const json s = json::parse(R"({"label": "", "sigma": [], "recipe": "", "s": 1, "seed": 0, "value": 1.0})");
  return s;
}

inline void check_keys(const json& user, const json& schema, const std::string& path) {
  if (!user.is_object()) throw ConfigError("config: '" + path + "' must be an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string where = path.empty() ? it.key() : path + "." + it.key();
    if (!schema.contains(it.key())) throw ConfigError("config: unknown key '" + where + "'");
    const auto& ref = schema[it.key()];
    if (ref.is_object()) {
      check_keys(it.value(), ref, where);
    } else if (where == "cases" || where == "pde.sigma_cases") {
      if (!it.value().is_array()) throw ConfigError("config: '" + where + "' must be an array");
      for (std::size_t k = 0; k < it.value().size(); ++k)
        check_keys(it.value()[k], case_schema(), where + "[" + std::to_string(k) + "]");
    } else if (ref.is_number() && !it.value().is_number()) {
      throw ConfigError("config: '" + where + "' must be a number");
    } else if (ref.is_string() && !it.value().is_string() && where != "is.params") {
      throw ConfigError("config: '" + where + "' must be a string");
    } else if (ref.is_boolean() && !it.value().is_boolean()) {
      throw ConfigError("config: '" + where + "' must be a boolean");
    } else if (ref.is_array() && !it.value().is_array()) {
      throw ConfigError("config: '" + where + "' must be an array");
    }
  }
}

inline json merge(json base, const json& user) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    if (base.contains(it.key()) && base[it.key()].is_object() && it.value().is_object())
      base[it.key()] = merge(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
  return base;
}

}  // namespace detail

// Validates against the schema and fills defaults.
inline json resolve_config(const json& user) {
  const auto defaults = default_study_config();
  detail::check_keys(user, defaults, "");
  return detail::merge(defaults, user);
}

// key=value with a dotted key; the value is parsed as JSON, falling back to a plain string.
inline void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' must look like key.path=value");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  const auto defaults = default_study_config();
  const json* schema = &defaults;
  json* node = &cfg;
  std::size_t pos = 0;
  for (;;) {
    const auto dot = key.find('.', pos);
    const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (!schema->is_object() || !schema->contains(part)) throw ConfigError("override: unknown key '" + key + "'");
    schema = &(*schema)[part];
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    if (!node->contains(part) || !(*node)[part].is_object()) (*node)[part] = json::object();
    node = &(*node)[part];
    pos = dot + 1;
  }
}

inline json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j = json::parse(in, nullptr, false, true);
  if (j.is_discarded()) throw ConfigError("config '" + path + "' is not valid JSON");
  return j;
}

// FNV-1a over the canonical dump.
inline std::string config_hash(const json& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : cfg.dump()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

struct StudyCase {
  std::string label;
  std::vector<double> sigma;
};

inline StudyCase resolve_case(const json& c, std::size_t default_s, std::size_t index) {
  StudyCase out;
  out.label = c.value("label", std::string());
  if (out.label.empty()) out.label = "case" + std::to_string(index);
  const bool has_sigma = c.contains("sigma") && !c["sigma"].empty();
  const bool has_recipe = c.contains("recipe") && !c["recipe"].get<std::string>().empty();
  if (has_sigma == has_recipe) throw ConfigError("case '" + out.label + "': give exactly one of sigma or recipe");
  if (has_sigma) {
    for (const auto& v : c["sigma"]) {
      if (!v.is_number()) throw ConfigError("case '" + out.label + "': sigma entries must be numbers");
      out.sigma.push_back(v.get<double>());
    }
  } else {
    const auto s = c.contains("s") ? c["s"].get<std::size_t>() : default_s;
    out.sigma = sigma_recipe(c["recipe"].get<std::string>(), s, c.value("seed", std::uint64_t{0}), c.value("value", 1.0));
  }
  for (double v : out.sigma)
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("case '" + out.label + "': sigma entries must be positive");
  return out;
}

inline RqmcConfig rqmc_config(const json& cfg, unsigned threads_override = 0) {
  const auto& r = cfg["rqmc"];
  RqmcConfig c;
  c.n_grid = pow2_grid(r["n_min_log2"].get<int>(), r["n_max_log2"].get<int>());
  c.replicates = r["replicates"].get<int>();
  c.batches = r["batches"].get<int>();
  c.seed = r["seed"].get<std::uint64_t>();
  c.threads = threads_override != 0 ? threads_override : r["threads"].get<unsigned>();
  c.direction_file = r["direction_file"].get<std::string>();
  c.validate();
  return c;
}

inline bound::GrowthSpec growth_spec(const json& cfg, std::vector<double> coefficients) {
  const auto& b = cfg["bound"];
  bound::GrowthSpec g;
  g.coefficients = std::move(coefficients);
  g.C = b["C"].get<double>();
  g.epsilon = b["epsilon"].get<double>();
  g.delta_bar = b["delta_bar"].get<double>();
  g.C_eps_s = b["C_eps_s"].get<double>();
  return g;
}

inline std::vector<double> bound_n_grid(const json& cfg) {
  std::vector<double> out;
  const auto& lst = cfg["bound"]["n_log2"];
  if (lst.empty()) {
    for (int m = cfg["rqmc"]["n_min_log2"].get<int>(); m <= cfg["rqmc"]["n_max_log2"].get<int>(); ++m) out.push_back(std::ldexp(1.0, m));
  } else {
    for (const auto& v : lst) out.push_back(std::ldexp(1.0, v.get<int>()));
  }
  return out;
}

inline std::shared_ptr<const SpatialBasis> make_basis(const json& cfg, std::size_t s) {
  const auto& b = cfg["pde"]["basis"];
  const auto kind = b["kind"].get<std::string>();
  if (kind == "fourier") {
    const MaternKernel k{b["nu"].get<double>(), b["r"].get<double>()};
    return std::make_shared<FourierBasis>(build_fourier_basis(k, b["gamma"].get<double>(), b["grid_m"].get<std::size_t>(), s,
                                                              parse_scaling(b["scaling"].get<std::string>())));
  }
  if (kind == "file") {
    auto tb = std::make_shared<TabulatedBasis>(load_basis_file(b["file"].get<std::string>()));
    if (tb->size() < s)
      throw ConfigError("basis file has " + std::to_string(tb->size()) + " modes, study needs " + std::to_string(s));
    if (tb->size() > s) throw ConfigError("basis file dimension does not match the requested dimension " + std::to_string(s));
    return tb;
  }
  throw ConfigError("unknown basis kind '" + kind + "' (expected fourier or file)");
}

inline std::function<double(double, double)> make_rhs(const std::string& name) {
  if (name == "one") return [](double, double) { return 1.0; };
  if (name == "manufactured")
    return [](double x, double y) {
      constexpr double pi = std::numbers::pi;
      return 2 * pi * pi * std::sin(pi * x) * std::sin(pi * y);
    };
  throw ConfigError("unknown rhs '" + name + "' (expected one or manufactured)");
}

// One row per (case, variant).
struct RateRow {
  std::string label;
  std::size_t s = 0;
  std::string variant;  // plain | is
  RateFit fit;
  double norm = 0.0;  // sqrt(sum sigma^2) or sqrt(sum sigma^2 b^2)
  std::vector<double> is_params;
  double predicted_exponent = 0.0;  // bound model at the top of the grid
};

struct StudyOutput {
  std::string summary_csv, replicates_csv, rates_csv, bound_csv;
  json manifest;
  std::vector<RateRow> rates;
};

namespace detail {

inline std::string join(const std::vector<double>& v, char sep = ' ') {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += fmt(v[i]);
  }
  return out;
}

inline void append_summary(std::ostringstream& os, const std::string& label, const std::string& variant, const RqmcResult& r) {
  for (const auto& l : r.levels) os << label << ',' << variant << ',' << l.n << ',' << fmt(l.pooled_mean) << ',' << fmt(l.rmse) << '\n';
}

inline void append_replicates(std::ostringstream& os, const std::string& label, const std::string& variant, const RqmcResult& r) {
  for (const auto& l : r.levels)
    for (std::size_t k = 0; k < l.replicate_means.size(); ++k)
      os << label << ',' << variant << ',' << l.n << ',' << k << ',' << fmt(l.replicate_means[k]) << '\n';
}

inline void append_bound(std::ostringstream& os, const std::string& label, const bound::GrowthSpec& spec,
                         const std::vector<double>& ns) {
  for (double n : ns) {
    const auto e = bound::theorem_bound(spec, n);
    os << label << ',' << fmt(n) << ',' << fmt(e.a_star_max()) << ',' << fmt(e.rate_exponent) << ',' << (e.in_range ? 1 : 0) << ',';
    if (e.in_range)
      os << fmt(e.B_star) << ',' << fmt(e.C1) << ',' << fmt(e.C2) << ',' << fmt(e.bound_value) << '\n';
    else
      os << ",,,\n";
  }
}

}  // namespace detail

struct StudyOptions {
  unsigned threads = 0;  // overrides rqmc.threads when nonzero
  bool keep_replicates = true;
};

// Runs a resolved config; nothing is written to disk here.
inline StudyOutput run_study(const json& user_cfg, const StudyOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const json cfg = resolve_config(user_cfg);
  const auto kind = cfg["experiment"].get<std::string>();
  if (kind != "lognormal" && kind != "pde" && kind != "bound")
    throw ConfigError("unknown experiment '" + kind + "' (expected lognormal, pde or bound)");
  const auto is_kind = cfg["is"]["kind"].get<std::string>();
  if (is_kind != "none" && is_kind != "scaled_normal" && is_kind != "beta_like")
    throw ConfigError("unknown IS kind '" + is_kind + "' (expected none, scaled_normal or beta_like)");
  const auto bound_ns = bound_n_grid(cfg);
  const bool bound_on = cfg["bound"]["enabled"].get<bool>();
  const int top = cfg["fit"]["top"].get<int>();
  const RqmcConfig rc = kind == "bound" ? RqmcConfig{} : rqmc_config(cfg, opt.threads);

  // (label, integrand, norm coefficients for the model) per case
  struct Job {
    std::string label;
    std::vector<double> sigma;
    std::vector<double> model_coefficients;
    std::function<Integrand()> make;
  };
  std::vector<Job> jobs;
  if (kind == "lognormal" || kind == "bound") {
    if (cfg["cases"].empty()) throw ConfigError("config: 'cases' is empty");
    for (std::size_t k = 0; k < cfg["cases"].size(); ++k) {
      auto c = resolve_case(cfg["cases"][k], 1, k);
      jobs.push_back({c.label, c.sigma, c.sigma, [sig = c.sigma]() { return lognormal_product(sig); }});
    }
  } else {
    const auto& p = cfg["pde"];
    if (p["sigma_cases"].empty()) throw ConfigError("config: 'pde.sigma_cases' is empty");
    for (const auto& sj : p["dimensions"]) {
      const auto s = sj.get<std::size_t>();
      auto basis = make_basis(cfg, s);
      const auto b = basis->sup_norms();
      for (std::size_t k = 0; k < p["sigma_cases"].size(); ++k) {
        auto c = resolve_case(p["sigma_cases"][k], s, k);
        if (c.sigma.size() != s) throw ConfigError("case '" + c.label + "': sigma length does not match dimension");
        PdeSetup setup;
        setup.basis = basis;
        setup.sigma = c.sigma;
        setup.mesh = Mesh(p["mesh_n"].get<int>());
        setup.rhs = make_rhs(p["rhs"].get<std::string>());
        setup.solver.tolerance = p["tolerance"].get<double>();
        setup.warm_start = parse_warm_start(p["warm_start"].get<std::string>());
        std::vector<double> coef(s);
        for (std::size_t j = 0; j < s; ++j) coef[j] = c.sigma[j] * b[j];
        jobs.push_back({"s" + std::to_string(s) + "-" + c.label, c.sigma, coef, [setup]() { return pde_integrand(setup); }});
      }
    }
  }

  std::ostringstream summary, replicates, rates, bcsv;
  summary << "case,variant,n,pooled_mean,rmse\n";
  replicates << "case,variant,n,r,replicate_mean\n";
  rates << "case,s,variant,gamma,one_minus_gamma,intercept,n_lo,n_hi,residual_norm,norm,normalized,is_params,model_exponent\n";
  bcsv << "case,n,a_star_max,rate_exponent,in_range,B_star,C1,C2,bound_value\n";
  StudyOutput out;

  for (const auto& job : jobs) {
    const auto spec = growth_spec(cfg, job.model_coefficients);
    if (bound_on) detail::append_bound(bcsv, job.label, spec, bound_ns);
    if (kind == "bound") continue;
    double model_exp = 0.0;
    {
      const double n_top = static_cast<double>(rc.n_grid.back());
      const auto e = bound::theorem_bound(spec, n_top);
      model_exp = e.rate_exponent;
    }
    const double norm = std::sqrt(bound::sum_of_squares(job.model_coefficients));
    const Integrand g = job.make();

    auto record = [&](const std::string& variant, const Integrand& h, std::vector<double> params) {
      const auto res = estimate(h, rc);
      detail::append_summary(summary, job.label, variant, res);
      if (opt.keep_replicates) detail::append_replicates(replicates, job.label, variant, res);
      RateRow row;
      row.label = job.label;
      row.s = h.dimension;
      row.variant = variant;
      row.fit = fit_rate_top(res, static_cast<std::size_t>(top));
      row.norm = norm;
      row.is_params = std::move(params);
      row.predicted_exponent = model_exp;
      rates << row.label << ',' << row.s << ',' << row.variant << ',' << fmt(row.fit.gamma) << ',' << fmt(1.0 - row.fit.gamma) << ','
            << fmt(row.fit.intercept) << ',' << row.fit.n_lo << ',' << row.fit.n_hi << ',' << fmt(row.fit.residual_norm) << ','
            << fmt(row.norm) << ',' << fmt((1.0 - row.fit.gamma) / row.norm) << ',' << detail::join(row.is_params) << ','
            << fmt(row.predicted_exponent) << '\n';
      out.rates.push_back(std::move(row));
    };

    record("plain", g, {});
    if (is_kind == "none") continue;
    std::vector<double> params;
    const auto& pj = cfg["is"]["params"];
    if (pj.is_string()) {
      if (pj.get<std::string>() != "pilot") throw ConfigError("is.params must be \"pilot\" or a numeric array");
      PilotOptions po;
      po.pilot_n = cfg["is"]["pilot_n"].get<std::uint64_t>();
      po.seed = cfg["is"]["pilot_seed"].get<std::uint64_t>();
      po.restarts = cfg["is"]["restarts"].get<int>();
      po.direction_file = rc.direction_file;
      params = (is_kind == "scaled_normal" ? optimize_alpha(g, po) : optimize_beta(g, po)).params;
    } else if (pj.is_array()) {
      for (const auto& v : pj) params.push_back(v.get<double>());
      if (params.size() == 1 && g.dimension > 1) params.assign(g.dimension, params[0]);
    } else {
      throw ConfigError("is.params must be \"pilot\" or a numeric array");
    }
    const Integrand gi = is_kind == "scaled_normal" ? scaled_normal_is(g, params) : beta_like_is(g, params);
    record("is", gi, params);
  }

  out.summary_csv = summary.str();
  out.replicates_csv = replicates.str();
  out.rates_csv = rates.str();
  out.bound_csv = bcsv.str();

  json m;
  m["version"] = kVersion;
  m["config"] = cfg;
  m["config_hash"] = config_hash(cfg);
  m["free_constants"] = {
      {"C", cfg["bound"]["C"]},
      {"C_eps_s", cfg["bound"]["C_eps_s"]},
      {"epsilon", cfg["bound"]["epsilon"]},
      {"delta_bar", cfg["bound"]["delta_bar"]},
      {"inverse_cdf_error", bound::kInverseCdfError},
      {"gamma_extension", cfg["pde"]["basis"]["gamma"]},
      {"fft_grid_m", cfg["pde"]["basis"]["grid_m"]},
      {"rhs", cfg["pde"]["rhs"]},
      {"scaling_mode", cfg["pde"]["basis"]["scaling"]},
      {"warm_start", cfg["pde"]["warm_start"]},
      {"qoi_box", {0.25, 0.5, -0.5, -0.25}},
      {"qoi_spread", 0.25},
      {"direction_file", rc.direction_file.empty() ? default_direction_numbers_path() : rc.direction_file},
  };
  m["threads"] = resolve_threads(rc.threads);
  m["wall_time_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  m["outputs"] = {"summary.csv", "replicates.csv", "rates.csv", "bound.csv"};
  out.manifest = m;
  return out;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw ConfigError("cannot write '" + p.string() + "'");
  os << text;
}

inline void write_study(const StudyOutput& out, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "summary.csv", out.summary_csv);
  write_text(dir / "replicates.csv", out.replicates_csv);
  write_text(dir / "rates.csv", out.rates_csv);
  write_text(dir / "bound.csv", out.bound_csv);
  write_text(dir / "manifest.json", out.manifest.dump(2) + "\n");
}

}  // namespace rqmc
