#pragma once

// Q1 finite elements for -div(a grad u) = f on [-1,1]^2 with u = 0 on the
// boundary, and the Gaussian-smoothed box QoI.

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rqmc/error.hpp"
#include "rqmc/gauss.hpp"
#include "rqmc/integrands.hpp"
#include "rqmc/randomfield.hpp"

namespace rqmc {

struct Mesh {
  int N = 16;  // cells per axis

  explicit Mesh(int cells = 16) : N(cells) {
    if (N < 1) throw ConfigError("mesh: need at least one cell per axis");
  }

  double h() const { return 2.0 / N; }
  int nodes_per_axis() const { return N + 1; }
  int node_count() const { return (N + 1) * (N + 1); }
  int element_count() const { return N * N; }
  int node(int ix, int iy) const { return iy * (N + 1) + ix; }
  double coord(int i) const { return -1.0 + 2.0 * i / N; }
  bool is_boundary(int ix, int iy) const { return ix == 0 || iy == 0 || ix == N || iy == N; }

  // Local order: (0,0), (1,0), (0,1), (1,1) corners of element (ex, ey).
  std::array<int, 4> element_nodes(int ex, int ey) const {
    return {node(ex, ey), node(ex + 1, ey), node(ex, ey + 1), node(ex + 1, ey + 1)};
  }
};

// prod_i [Phi((b_i - x_i)/s) - Phi((a_i - x_i)/s)]: indicator of the box convolved with N(0, s^2 I).
struct QoiWeight {
  double ax = 0.25, bx = 0.5, ay = -0.5, by = -0.25;
  double spread = 0.25;

  double axis(double a, double b, double x) const {
    // difference of upper tails is accurate when x lies far to the left of the box
    const double lo = (a - x) / spread, hi = (b - x) / spread;
    if (lo > 0.0) return norm_cdf(-lo) - norm_cdf(-hi);
    return norm_cdf(hi) - norm_cdf(lo);
  }

  double operator()(double x, double y) const { return axis(ax, bx, x) * axis(ay, by, y); }
  double box_area() const { return (bx - ax) * (by - ay); }
};

struct FemSolution {
  Eigen::VectorXd u;  // all nodes, boundary entries exactly zero
  int iterations = 0;
  double residual = 0.0;  // relative residual ||b - A x|| / ||b||
};

// 2x2 Gauss rule on the reference square [0,1]^2.
struct QuadratureRule {
  static constexpr double g = 0.21132486540518711775;  // (1 - 1/sqrt 3) / 2
  std::array<std::array<double, 2>, 4> xi{{{g, g}, {1 - g, g}, {g, 1 - g}, {1 - g, 1 - g}}};
  double weight = 0.25;
};

struct SolverOptions {
  double tolerance = 1e-10;
  int max_iterations = 0;  // 0 -> 10 (N+1)^2
};

// Precomputed geometry, sparsity pattern and load vector; immutable and shareable.
class FemOperator {
 public:
  FemOperator(Mesh mesh, const std::function<double(double, double)>& f, SolverOptions opt = {})
      : mesh_(mesh), opt_(opt) {
    if (opt_.max_iterations == 0) opt_.max_iterations = 10 * mesh_.node_count();
    const int N = mesh_.N;
    dof_.assign(mesh_.node_count(), -1);
    int next = 0;
    for (int iy = 0; iy <= N; ++iy)
      for (int ix = 0; ix <= N; ++ix)
        if (!mesh_.is_boundary(ix, iy)) dof_[mesh_.node(ix, iy)] = next++;
    ndof_ = next;

    const QuadratureRule q;
    const double h = mesh_.h();
    // grad N_i . grad N_j at each quadrature point, times weight * det J (J = h I).
    for (int p = 0; p < 4; ++p) {
      const double s = q.xi[p][0], t = q.xi[p][1];
      const std::array<std::array<double, 2>, 4> dN = {{{-(1 - t), -(1 - s)}, {(1 - t), -s}, {-t, (1 - s)}, {t, s}}};
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
          gg_[p][i][j] = q.weight * (dN[i][0] * dN[j][0] + dN[i][1] * dN[j][1]);  // h^2 det cancels 1/h^2
      const std::array<double, 4> Nv = {(1 - s) * (1 - t), s * (1 - t), (1 - s) * t, s * t};
      shape_[p] = Nv;
    }

    quad_points_.reserve(static_cast<std::size_t>(mesh_.element_count()) * 4);
    for (int ey = 0; ey < N; ++ey)
      for (int ex = 0; ex < N; ++ex)
        for (int p = 0; p < 4; ++p)
          quad_points_.push_back({mesh_.coord(ex) + h * q.xi[p][0], mesh_.coord(ey) + h * q.xi[p][1]});

    // Sparsity pattern over interior dofs; slot_[e][i][j] indexes A.valuePtr() or -1.
    std::vector<Eigen::Triplet<double>> trip;
    for (int ey = 0; ey < N; ++ey)
      for (int ex = 0; ex < N; ++ex) {
        const auto nodes = mesh_.element_nodes(ex, ey);
        for (int i = 0; i < 4; ++i)
          for (int j = 0; j < 4; ++j) {
            const int di = dof_[nodes[i]], dj = dof_[nodes[j]];
            if (di >= 0 && dj >= 0) trip.emplace_back(di, dj, 1.0);
          }
      }
    pattern_.resize(ndof_, ndof_);
    pattern_.setFromTriplets(trip.begin(), trip.end());
    pattern_.makeCompressed();
    slot_.resize(static_cast<std::size_t>(mesh_.element_count()));
    for (int ey = 0; ey < N; ++ey)
      for (int ex = 0; ex < N; ++ex) {
        const auto nodes = mesh_.element_nodes(ex, ey);
        auto& sl = slot_[static_cast<std::size_t>(ey * N + ex)];
        for (int i = 0; i < 4; ++i)
          for (int j = 0; j < 4; ++j) {
            const int di = dof_[nodes[i]], dj = dof_[nodes[j]];
            sl[i][j] = (di >= 0 && dj >= 0) ? slot_index(di, dj) : -1;
          }
      }

    load_ = Eigen::VectorXd::Zero(ndof_);
    for (int ey = 0; ey < N; ++ey)
      for (int ex = 0; ex < N; ++ex) {
        const auto nodes = mesh_.element_nodes(ex, ey);
        for (int p = 0; p < 4; ++p) {
          const auto& xq = quad_points_[static_cast<std::size_t>((ey * N + ex) * 4 + p)];
          const double fw = f(xq[0], xq[1]) * q.weight * h * h;
          for (int i = 0; i < 4; ++i)
            if (dof_[nodes[i]] >= 0) load_[dof_[nodes[i]]] += fw * shape_[p][i];
        }
      }
  }

  const Mesh& mesh() const { return mesh_; }
  int dof_count() const { return ndof_; }
  int dof(int node) const { return dof_[node]; }
  const std::vector<std::array<double, 2>>& quadrature_points() const { return quad_points_; }
  const Eigen::SparseMatrix<double>& pattern() const { return pattern_; }
  const Eigen::VectorXd& load() const { return load_; }
  const SolverOptions& options() const { return opt_; }

  // Stiffness values for coefficient samples at every quadrature point (element-major, 4 per element).
  void assemble(std::span<const double> a_quad, Eigen::SparseMatrix<double>& A) const {
    if (a_quad.size() != quad_points_.size()) throw ConfigError("assemble: coefficient sample count mismatch");
    if (A.nonZeros() != pattern_.nonZeros()) A = pattern_;
    double* val = A.valuePtr();
    std::fill(val, val + A.nonZeros(), 0.0);
    for (std::size_t e = 0; e < slot_.size(); ++e) {
      const double* a = &a_quad[e * 4];
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
          const int sidx = slot_[e][i][j];
          if (sidx < 0) continue;
          val[sidx] += a[0] * gg_[0][i][j] + a[1] * gg_[1][i][j] + a[2] * gg_[2][i][j] + a[3] * gg_[3][i][j];
        }
    }
  }

  // Nodal vector (all nodes) from interior values.
  Eigen::VectorXd expand(const Eigen::VectorXd& interior) const {
    Eigen::VectorXd u = Eigen::VectorXd::Zero(mesh_.node_count());
    for (int k = 0; k < mesh_.node_count(); ++k)
      if (dof_[k] >= 0) u[k] = interior[dof_[k]];
    return u;
  }

  // Element-wise 2x2 Gauss quadrature of w * u_h, as a linear functional on nodal values.
  Eigen::VectorXd functional(const std::function<double(double, double)>& w) const {
    const int N = mesh_.N;
    const double h = mesh_.h();
    const QuadratureRule q;
    Eigen::VectorXd ell = Eigen::VectorXd::Zero(mesh_.node_count());
    for (int ey = 0; ey < N; ++ey)
      for (int ex = 0; ex < N; ++ex) {
        const auto nodes = mesh_.element_nodes(ex, ey);
        for (int p = 0; p < 4; ++p) {
          const auto& xq = quad_points_[static_cast<std::size_t>((ey * N + ex) * 4 + p)];
          const double ww = w(xq[0], xq[1]) * q.weight * h * h;
          for (int i = 0; i < 4; ++i) ell[nodes[i]] += ww * shape_[p][i];
        }
      }
    return ell;
  }

 private:
  int slot_index(int row, int col) const {
    // column-major storage: search the column's row indices
    const int* outer = pattern_.outerIndexPtr();
    const int* inner = pattern_.innerIndexPtr();
    for (int k = outer[col]; k < outer[col + 1]; ++k)
      if (inner[k] == row) return k;
    throw NumericError("sparsity pattern is missing an element entry");
  }

  Mesh mesh_;
  SolverOptions opt_;
  std::vector<int> dof_;
  int ndof_ = 0;
  std::array<std::array<std::array<double, 4>, 4>, 4> gg_{};
  std::array<std::array<double, 4>, 4> shape_{};
  std::vector<std::array<double, 2>> quad_points_;
  Eigen::SparseMatrix<double> pattern_;
  std::vector<std::array<std::array<int, 4>, 4>> slot_;
  Eigen::VectorXd load_;
};

// Per-worker scratch: matrix values and the CG solver.
class FemWorkspace {
 public:
  explicit FemWorkspace(std::shared_ptr<const FemOperator> op) : op_(std::move(op)), A_(op_->pattern()) {
    cg_.setTolerance(op_->options().tolerance);
    cg_.setMaxIterations(op_->options().max_iterations);
    x_ = Eigen::VectorXd::Zero(op_->dof_count());
  }

  // Solves with the given initial guess (interior values); the solution stays in interior().
  FemSolution solve(std::span<const double> a_quad, const Eigen::VectorXd* guess = nullptr) {
    solve_interior(a_quad, guess);
    FemSolution sol;
    sol.u = op_->expand(x_);
    sol.iterations = iterations_;
    sol.residual = residual_;
    return sol;
  }

  const Eigen::VectorXd& solve_interior(std::span<const double> a_quad, const Eigen::VectorXd* guess = nullptr) {
    for (double a : a_quad)
      if (!(a > 0.0) || !std::isfinite(a)) throw NumericError("FEM: coefficient must be positive and finite");
    op_->assemble(a_quad, A_);
    cg_.compute(A_);
    const auto& b = op_->load();
    if (b.norm() == 0.0) {
      x_.setZero();
      iterations_ = 0;
      residual_ = 0.0;
      return x_;
    }
    if (guess != nullptr)
      x_ = cg_.solveWithGuess(b, *guess);
    else
      x_ = cg_.solve(b);
    iterations_ = static_cast<int>(cg_.iterations());
    residual_ = cg_.error();
    if (cg_.info() != Eigen::Success)
      throw NumericError("FEM: conjugate gradient did not converge (relative residual " + std::to_string(residual_) +
                         " after " + std::to_string(iterations_) + " iterations)");
    return x_;
  }

  const Eigen::VectorXd& interior() const { return x_; }
  int iterations() const { return iterations_; }
  double residual() const { return residual_; }
  const Eigen::SparseMatrix<double>& matrix() const { return A_; }

 private:
  std::shared_ptr<const FemOperator> op_;
  Eigen::SparseMatrix<double> A_;
  Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper, Eigen::DiagonalPreconditioner<double>> cg_;
  Eigen::VectorXd x_;
  int iterations_ = 0;
  double residual_ = 0.0;
};

// Convenience one-shot solve with a coefficient function.
inline FemSolution assemble_and_solve(const Mesh& mesh, const std::function<double(double, double)>& a,
                                      const std::function<double(double, double)>& f, SolverOptions opt = {}) {
  auto op = std::make_shared<const FemOperator>(mesh, f, opt);
  std::vector<double> aq;
  aq.reserve(op->quadrature_points().size());
  for (const auto& x : op->quadrature_points()) aq.push_back(a(x[0], x[1]));
  FemWorkspace ws(op);
  return ws.solve(aq);
}

inline double qoi(const Mesh& mesh, const FemSolution& sol, const std::function<double(double, double)>& weight) {
  FemOperator op(mesh, [](double, double) { return 0.0; });
  return op.functional(weight).dot(sol.u);
}

enum class WarmStart { none, reference, previous };

inline std::string to_string(WarmStart w) {
  switch (w) {
    case WarmStart::none: return "none";
    case WarmStart::reference: return "reference";
    case WarmStart::previous: return "previous";
  }
  return "?";
}

inline WarmStart parse_warm_start(const std::string& s) {
  if (s == "none") return WarmStart::none;
  if (s == "reference") return WarmStart::reference;
  if (s == "previous") return WarmStart::previous;
  throw ConfigError("unknown warm start '" + s + "' (expected none, reference or previous)");
}

struct PdeSetup {
  std::shared_ptr<const SpatialBasis> basis;
  std::vector<double> sigma;  // per-mode multipliers
  Mesh mesh{16};
  std::function<double(double, double)> rhs = [](double, double) { return 1.0; };
  QoiWeight weight{};
  SolverOptions solver{};
  // the a = 1 solution as initial guess keeps every evaluation independent of call history
  WarmStart warm_start = WarmStart::reference;
};

// Shared, immutable data behind the PDE integrand.
struct PdeModel {
  std::shared_ptr<const FemOperator> op;
  std::vector<double> psi;  // basis values at quadrature points, point-major (Q x s)
  std::vector<double> sigma;
  Eigen::VectorXd ell;        // QoI functional restricted to interior dofs
  Eigen::VectorXd reference;  // interior solution for a = 1
  std::size_t s = 0;
  WarmStart warm_start = WarmStart::reference;
};

inline std::shared_ptr<const PdeModel> make_pde_model(const PdeSetup& setup) {
  if (!setup.basis) throw ConfigError("PDE integrand: basis missing");
  auto m = std::make_shared<PdeModel>();
  m->s = setup.basis->size();
  m->sigma = setup.sigma.empty() ? std::vector<double>(m->s, 1.0) : setup.sigma;
  if (m->sigma.size() != m->s) throw ConfigError("PDE integrand: sigma length does not match the basis dimension");
  m->op = std::make_shared<const FemOperator>(setup.mesh, setup.rhs, setup.solver);
  m->warm_start = setup.warm_start;
  const auto& qp = m->op->quadrature_points();
  m->psi.resize(qp.size() * m->s);
  for (std::size_t p = 0; p < qp.size(); ++p)
    for (std::size_t j = 0; j < m->s; ++j) m->psi[p * m->s + j] = m->sigma[j] * setup.basis->value(j, qp[p][0], qp[p][1]);
  const auto w = setup.weight;
  const Eigen::VectorXd full = m->op->functional([w](double x, double y) { return w(x, y); });
  m->ell = Eigen::VectorXd::Zero(m->op->dof_count());
  for (int k = 0; k < setup.mesh.node_count(); ++k)
    if (m->op->dof(k) >= 0) m->ell[m->op->dof(k)] = full[k];
  FemWorkspace ws(m->op);
  std::vector<double> ones(qp.size(), 1.0);
  m->reference = ws.solve_interior(ones);
  return m;
}

// Gaussian-domain QoI map y -> G(u(a(y))) with per-evaluator scratch.
inline PointFn pde_gaussian_evaluator(std::shared_ptr<const PdeModel> m) {
  struct State {
    explicit State(const PdeModel& m) : ws(m.op), a(m.op->quadrature_points().size()) {}
    FemWorkspace ws;
    std::vector<double> a;
    Eigen::VectorXd last;
    bool has_last = false;
  };
  auto st = std::make_shared<State>(*m);
  return [m, st](std::span<const double> y) {
    const std::size_t s = m->s;
    for (std::size_t p = 0; p < st->a.size(); ++p) {
      const double* row = &m->psi[p * s];
      double acc = 0.0;
      for (std::size_t j = 0; j < s; ++j) acc += row[j] * y[j];
      st->a[p] = std::exp(acc);
    }
    const Eigen::VectorXd* guess = nullptr;
    if (m->warm_start == WarmStart::reference) guess = &m->reference;
    if (m->warm_start == WarmStart::previous && st->has_last) guess = &st->last;
    const auto& x = st->ws.solve_interior(st->a, guess);
    if (m->warm_start == WarmStart::previous) {
      st->last = x;
      st->has_last = true;
    }
    return m->ell.dot(x);
  };
}

inline Integrand pde_integrand(const PdeSetup& setup) {
  auto model = make_pde_model(setup);
  return from_gaussian("pde", model->s, [model]() { return pde_gaussian_evaluator(model); });
}

}  // namespace rqmc
