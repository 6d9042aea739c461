#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>
#ifdef GEOMFLOW_HAVE_UMFPACK
#include <Eigen/UmfPackSupport>
#endif

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "geomflow/error.hpp"
#include "geomflow/geometry.hpp"

namespace geomflow {

enum class Flow { mcf, sd };
enum class Variant { bgn_exact, bgn_quadrature, sp, dziuk };

inline std::string to_string(Flow f) { return f == Flow::mcf ? "mcf" : "sd"; }
inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::bgn_exact: return "bgn_exact";
    case Variant::bgn_quadrature: return "bgn_quadrature";
    case Variant::sp: return "sp";
    case Variant::dziuk: return "dziuk";
  }
  return "?";
}

struct SchemeConfig {
  Flow flow = Flow::mcf;
  Variant variant = Variant::bgn_quadrature;
  int degree = 1;
  double tau = 1e-3;
  int quad_order = 0;  // 0: 10 * degree
  bool lumped = false;  // trapezoidal rule on segments (degree 1 curves only)
  double picard_tol = 1e-12;
  int picard_max_iter = 100;
};

/// Quadrature order the scheme actually integrates with.
inline int effective_quad_order(const SchemeConfig& c) {
  if (c.variant == Variant::bgn_exact) return std::max(10 * c.degree, 2 * c.degree + 2);
  if (c.lumped) return 1;
  return c.quad_order > 0 ? c.quad_order : 10 * c.degree;
}

template <int Dim>
QuadratureRule<Dim> scheme_rule(const SchemeConfig& c) {
  if constexpr (Dim == 1)
    if (c.lumped && c.variant != Variant::bgn_exact) return lumped_rule_interval();
  return quadrature_rule<Dim>(effective_quad_order(c));
}

/// Every violated requirement of a scheme configuration, empty when valid.
template <int Dim>
std::vector<std::string> config_errors(const SchemeConfig& c) {
  std::vector<std::string> errs;
  if (c.degree < 1 || c.degree > LagrangeBasis<Dim>::kMaxDegree) {
    errs.push_back("degree must be in [1, 4]");
    return errs;
  }
  if (!(c.tau > 0.0) || !std::isfinite(c.tau)) errs.push_back("tau must be positive");
  if (c.quad_order < 0) errs.push_back("quad_order must be positive");
  if (c.variant == Variant::dziuk && c.flow != Flow::mcf) errs.push_back("the dziuk variant is defined for mcf only");
  if (c.variant == Variant::sp && c.flow != Flow::sd)
    errs.push_back("the structure-preserving variant is defined for sd only");
  if (c.lumped && (Dim != 1 || c.degree != 1)) errs.push_back("lumped integration needs degree 1 curves");
  if (c.variant == Variant::sp) {
    const int need = enclosed_integrand_degree<Dim>(c.degree);
    if (effective_quad_order(c) < need)
      errs.push_back("structure preservation needs quad_order >= " + std::to_string(need) +
                     " (exact integration of the enclosed " + (Dim == 1 ? "area" : "volume") + " integrand), got " +
                     std::to_string(effective_quad_order(c)));
  }
  if (!(c.picard_tol > 0.0)) errs.push_back("picard_tol must be positive");
  if (c.picard_max_iter < 1) errs.push_back("picard_max_iter must be >= 1");
  // positivity of the discrete mass matrix needs a unisolvent point set
  if (errs.empty() && (c.flow == Flow::mcf) && !unisolvent(LagrangeBasis<Dim>(c.degree), scheme_rule<Dim>(c)))
    errs.push_back("quadrature rule of order " + std::to_string(effective_quad_order(c)) +
                   " is not unisolvent for degree " + std::to_string(c.degree) +
                   " (the discrete mass inner product would not be positive definite)");
  return errs;
}

template <int Dim>
void check_config(const SchemeConfig& c) {
  const auto errs = config_errors<Dim>(c);
  if (errs.empty()) return;
  std::string msg = "invalid scheme configuration:";
  for (const auto& e : errs) msg += "\n  " + e;
  throw InvalidArgument(msg);
}

/// Per-step diagnostics. Normalized and relative columns are filled by evolve.
struct DiagnosticsRecord {
  int step = 0;
  double time = 0.0;
  double energy = 0.0;
  double energy_norm = 1.0;
  double enclosed = 0.0;
  double enclosed_rel_loss = 0.0;
  double mesh_quality = 1.0;
  int picard_iters = 0;
};

template <int Dim>
struct StepResult {
  ParametrizedGrid<Dim> new_grid;
  Eigen::VectorXd curvature;  // empty for the dziuk variant
  int picard_iters = 0;
  DiagnosticsRecord diagnostics;
};

// --- intermediate normals -------------------------------------------------

namespace detail {

/// Area-weighted normal that replaces J(F^m) in the coupling block of the
/// structure-preserving scheme (before division by |J(F^m)|).
template <int Dim>
WorldPoint<Dim> intermediate_jacobian(const Eigen::Matrix<double, Dim + 1, Dim>& jm,
                                      const Eigen::Matrix<double, Dim + 1, Dim>& jn) {
  if constexpr (Dim == 1) {
    return 0.5 * (perp(jm.col(0)) + perp(jn.col(0)));
  } else {
    const Eigen::Matrix<double, 3, 2> jh = 0.5 * (jm + jn);
    return (oriented_jacobian<2>(jm) + 4.0 * oriented_jacobian<2>(jh) + oriented_jacobian<2>(jn)) / 6.0;
  }
}

}  // namespace detail

template <int Dim>
WorldPoint<Dim> intermediate_normal(const ParametrizedGrid<Dim>& grid_m, const ParametrizedGrid<Dim>& grid_next,
                                    int j, const RefPoint<Dim>& x) {
  const auto f = frame_at(grid_m, j, x);
  const Eigen::Matrix<double, Dim + 1, Dim> jn = grid_next.local_coords(j) * grid_next.basis().grad(x);
  return detail::intermediate_jacobian<Dim>(f.jacobian, jn) / f.measure;
}

inline Eigen::Vector2d intermediate_normal_curve(const ParametrizedGrid<1>& m, const ParametrizedGrid<1>& next,
                                                 int j, const RefPoint<1>& x) {
  return intermediate_normal(m, next, j, x);
}

inline Eigen::Vector3d intermediate_normal_surface(const ParametrizedGrid<2>& m, const ParametrizedGrid<2>& next,
                                                   int j, const RefPoint<2>& x) {
  return intermediate_normal(m, next, j, x);
}

// --- assembly -------------------------------------------------------------

/// Finite element matrices on the current grid: mass M, stiffness S, and the
/// normal coupling N_c (one K x K block per world component),
///   (N_c)_ab = sum_q w_q phi_a phi_b v_c,
/// with v = J(F) (or the intermediate Jacobian when a next iterate is given).
template <int Dim>
struct SystemBlocks {
  Eigen::SparseMatrix<double> mass, stiffness;
  std::vector<Eigen::SparseMatrix<double>> normal;
};

enum class BlockParts { all, matrices, normal };

template <int Dim>
SystemBlocks<Dim> assemble_blocks(const ParametrizedGrid<Dim>& grid, const QuadratureRule<Dim>& rule,
                                  const ParametrizedGrid<Dim>* next = nullptr, BlockParts parts = BlockParts::all) {
  const bool with_normal = parts != BlockParts::matrices;
  const bool with_matrices = parts != BlockParts::normal;
  constexpr int W = Dim + 1;
  const int k = grid.num_dofs();
  const int nloc = grid.basis().size();
  const TabulatedBasis<Dim> tab(grid.basis(), rule.points);
  using Trip = Eigen::Triplet<double>;
  std::vector<Trip> tm, ts;
  std::vector<std::vector<Trip>> tn(W);
  const std::size_t reserve = static_cast<std::size_t>(grid.num_elements()) * nloc * nloc;
  if (with_matrices) {
    tm.reserve(reserve);
    ts.reserve(reserve);
  }
  if (with_normal)
    for (auto& t : tn) t.reserve(reserve);

  Eigen::MatrixXd ml(nloc, nloc), sl(nloc, nloc);
  std::vector<Eigen::MatrixXd> nl(W, Eigen::MatrixXd(nloc, nloc));
  ElementFrame<Dim> f;
  for (int j = 0; j < grid.num_elements(); ++j) {
    const auto x = grid.local_coords(j);
    typename ParametrizedGrid<Dim>::LocalCoords xn;
    if (next) xn = next->local_coords(j);
    ml.setZero();
    sl.setZero();
    for (auto& n : nl) n.setZero();
    for (int q = 0; q < rule.size(); ++q) {
      detail::fill_frame<Dim>(f, x, tab.values[q], tab.grads[q], j, grid.discretization().maps[j].measure());
      const Eigen::VectorXd& phi = tab.values[q];
      const double wm = rule.weights[q] * f.measure;
      const Eigen::MatrixXd pp = phi * phi.transpose();
      if (with_matrices) {
        ml.noalias() += wm * pp;
        sl.noalias() += wm * (f.surface_grads.transpose() * f.surface_grads);
      }
      if (with_normal) {
        WorldPoint<Dim> v = f.measure * f.normal;
        if (next) {
          const Eigen::Matrix<double, W, Dim> jn = xn * tab.grads[q];
          v = detail::intermediate_jacobian<Dim>(f.jacobian, jn);
        }
        for (int c = 0; c < W; ++c) nl[c].noalias() += (rule.weights[q] * v(c)) * pp;
      }
    }
    const auto& dofs = grid.dofmap()[j];
    for (int a = 0; a < nloc; ++a)
      for (int b = 0; b < nloc; ++b) {
        if (with_matrices) {
          tm.emplace_back(dofs[a], dofs[b], ml(a, b));
          ts.emplace_back(dofs[a], dofs[b], sl(a, b));
        }
        if (with_normal)
          for (int c = 0; c < W; ++c) tn[c].emplace_back(dofs[a], dofs[b], nl[c](a, b));
      }
  }
  SystemBlocks<Dim> blocks;
  blocks.mass.resize(k, k);
  blocks.mass.setFromTriplets(tm.begin(), tm.end());
  blocks.stiffness.resize(k, k);
  blocks.stiffness.setFromTriplets(ts.begin(), ts.end());
  if (with_normal) {
    blocks.normal.resize(W);
    for (int c = 0; c < W; ++c) {
      blocks.normal[c].resize(k, k);
      blocks.normal[c].setFromTriplets(tn[c].begin(), tn[c].end());
    }
  }
  return blocks;
}

/// Linear system of one BGN-type step, unknowns ordered as
/// [X_0 (all nodes), ..., X_d, kappa]:
///   [ S (x) I    N        ] [X    ]   [ 0        ]
///   [ N^T       -tau B    ] [kappa] = [ N^T . id ]
/// with B = M for mcf and B = S for sd.
struct SaddlePointSystem {
  Eigen::SparseMatrix<double> matrix;
  Eigen::VectorXd rhs;
};

template <int Dim>
SaddlePointSystem build_saddle_point(const ParametrizedGrid<Dim>& grid, const SystemBlocks<Dim>& b, Flow flow,
                                     double tau) {
  constexpr int W = Dim + 1;
  const int k = grid.num_dofs();
  using Trip = Eigen::Triplet<double>;
  std::vector<Trip> t;
  t.reserve(static_cast<std::size_t>((W + 1) * 3 * W) * b.stiffness.nonZeros());
  auto add = [&](const Eigen::SparseMatrix<double>& m, int r0, int c0, double s) {
    for (int col = 0; col < m.outerSize(); ++col)
      for (Eigen::SparseMatrix<double>::InnerIterator it(m, col); it; ++it)
        t.emplace_back(r0 + it.row(), c0 + it.col(), s * it.value());
  };
  for (int c = 0; c < W; ++c) {
    add(b.stiffness, c * k, c * k, 1.0);
    add(b.normal[c], c * k, W * k, 1.0);
    add(b.normal[c], W * k, c * k, 1.0);  // N_c is symmetric
  }
  add(flow == Flow::mcf ? b.mass : b.stiffness, W * k, W * k, -tau);
  SaddlePointSystem sys;
  sys.matrix.resize((W + 1) * k, (W + 1) * k);
  sys.matrix.setFromTriplets(t.begin(), t.end());
  sys.rhs = Eigen::VectorXd::Zero((W + 1) * k);
  for (int c = 0; c < W; ++c) sys.rhs.tail(k) += b.normal[c] * grid.coords().col(c);
  return sys;
}

template <int Dim>
SaddlePointSystem assemble_bgn(const ParametrizedGrid<Dim>& grid, const SchemeConfig& cfg) {
  check_config<Dim>(cfg);
  const auto rule = scheme_rule<Dim>(cfg);
  return build_saddle_point(grid, assemble_blocks(grid, rule), cfg.flow, cfg.tau);
}

/// Discrete curvature of a grid: least-squares solution of
/// (kappa n, eta)^h = -(grad id, grad eta)^h.
template <int Dim>
Eigen::VectorXd discrete_curvature(const ParametrizedGrid<Dim>& grid, const QuadratureRule<Dim>& rule) {
  const auto b = assemble_blocks(grid, rule);
  const int k = grid.num_dofs();
  Eigen::SparseMatrix<double> ntn(k, k);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k);
  for (int c = 0; c <= Dim; ++c) {
    ntn += b.normal[c] * b.normal[c];
    rhs -= b.normal[c] * (b.stiffness * grid.coords().col(c));
  }
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(ntn);
  if (solver.info() != Eigen::Success) throw WellPosednessError("discrete curvature: normal Gram matrix is singular");
  return solver.solve(rhs);
}

// --- stepping ---------------------------------------------------------------

namespace detail {

inline void require_finite(const Eigen::VectorXd& v) {
  if (!v.allFinite()) throw NumericalFailure("linear solve produced non-finite values");
}

inline std::string wellposed_message(int dim) {
  return dim == 1 ? "saddle-point system is singular: the nonparallel assumption for numerical integration "
                    "(discrete normals must not all be orthogonal to some nonzero vector field) fails"
                  : "saddle-point system is singular: the nonparallel assumption for numerical integration "
                    "fails on this surface grid";
}

}  // namespace detail

/// Advances grids by one step of a fixed scheme. Holds the pieces that are
/// reused between steps: the rule, the LU pattern, and the Picard warm start.
template <int Dim>
class Stepper {
 public:
  explicit Stepper(SchemeConfig cfg) : cfg_(cfg), rule_(scheme_rule<Dim>(cfg)), exact_rule_(exact_enclosed_rule()) {
    check_config<Dim>(cfg_);
  }

  const SchemeConfig& config() const { return cfg_; }
  const QuadratureRule<Dim>& rule() const { return rule_; }

  /// Curvature used as the first Picard iterate of the next sp step.
  void set_curvature_seed(Eigen::VectorXd kappa) { seed_ = std::move(kappa); }

  DiagnosticsRecord diagnose(const ParametrizedGrid<Dim>& grid) const {
    DiagnosticsRecord d;
    d.energy = energy(grid, rule_);
    d.enclosed = enclosed_measure(grid, exact_rule_);
    d.mesh_quality = mesh_quality(grid, rule_);
    return d;
  }

  StepResult<Dim> step(const ParametrizedGrid<Dim>& grid) {
    StepResult<Dim> r;
    switch (cfg_.variant) {
      case Variant::bgn_exact:
      case Variant::bgn_quadrature: r = step_linear(grid); break;
      case Variant::dziuk: r = step_dziuk(grid); break;
      case Variant::sp: r = step_sp(grid); break;
    }
    r.diagnostics = diagnose(r.new_grid);
    r.diagnostics.picard_iters = r.picard_iters;
    return r;
  }

 private:
  QuadratureRule<Dim> exact_enclosed_rule() const {
    return quadrature_rule<Dim>(std::max(1, enclosed_integrand_degree<Dim>(cfg_.degree)));
  }

  Eigen::VectorXd solve(const SaddlePointSystem& sys) {
    if (!pattern_ || pattern_size_ != sys.matrix.rows() || pattern_nnz_ != sys.matrix.nonZeros()) {
      lu_.analyzePattern(sys.matrix);
      pattern_ = true;
      pattern_size_ = sys.matrix.rows();
      pattern_nnz_ = sys.matrix.nonZeros();
    }
    lu_.factorize(sys.matrix);
    if (lu_.info() != Eigen::Success) throw WellPosednessError(detail::wellposed_message(Dim));
    Eigen::VectorXd sol = lu_.solve(sys.rhs);
    if (lu_.info() != Eigen::Success) throw WellPosednessError(detail::wellposed_message(Dim));
    detail::require_finite(sol);
    return sol;
  }

  void unpack(const ParametrizedGrid<Dim>& grid, const Eigen::VectorXd& sol,
              typename ParametrizedGrid<Dim>::Coords& x, Eigen::VectorXd& kappa) const {
    const int k = grid.num_dofs();
    x.resize(k, Dim + 1);
    for (int c = 0; c <= Dim; ++c) x.col(c) = sol.segment(c * k, k);
    kappa = sol.tail(k);
  }

  StepResult<Dim> step_linear(const ParametrizedGrid<Dim>& grid) {
    const auto sys = build_saddle_point(grid, assemble_blocks(grid, rule_), cfg_.flow, cfg_.tau);
    StepResult<Dim> r;
    typename ParametrizedGrid<Dim>::Coords x;
    unpack(grid, solve(sys), x, r.curvature);
    r.new_grid = grid.with_coords(std::move(x));
    return r;
  }

  StepResult<Dim> step_dziuk(const ParametrizedGrid<Dim>& grid) {
    const auto b = assemble_blocks<Dim>(grid, rule_, nullptr, BlockParts::matrices);
    Eigen::SparseMatrix<double> a = b.mass + cfg_.tau * b.stiffness;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> chol(a);
    if (chol.info() != Eigen::Success) throw WellPosednessError("position-only system is singular");
    typename ParametrizedGrid<Dim>::Coords x(grid.num_dofs(), Dim + 1);
    for (int c = 0; c <= Dim; ++c) {
      Eigen::VectorXd col = chol.solve(b.mass * grid.coords().col(c));
      detail::require_finite(col);
      x.col(c) = col;
    }
    StepResult<Dim> r;
    r.new_grid = grid.with_coords(std::move(x));
    return r;
  }

  StepResult<Dim> step_sp(const ParametrizedGrid<Dim>& grid) {
    if (!seed_ || seed_->size() != grid.num_dofs()) seed_ = discrete_curvature(grid, rule_);
    ParametrizedGrid<Dim> iterate = grid;
    Eigen::VectorXd kappa = *seed_;
    const auto base = assemble_blocks<Dim>(grid, rule_, nullptr, BlockParts::matrices);
    double residual = 0.0;
    for (int it = 1; it <= cfg_.picard_max_iter; ++it) {
      auto blocks = assemble_blocks<Dim>(grid, rule_, &iterate, BlockParts::normal);
      blocks.mass = base.mass;
      blocks.stiffness = base.stiffness;
      const auto sys = build_saddle_point(grid, blocks, Flow::sd, cfg_.tau);
      typename ParametrizedGrid<Dim>::Coords x;
      Eigen::VectorXd k_new;
      unpack(grid, solve(sys), x, k_new);
      residual = (x - iterate.coords()).cwiseAbs().maxCoeff() + (k_new - kappa).cwiseAbs().maxCoeff();
      iterate = grid.with_coords(std::move(x));
      kappa = std::move(k_new);
      if (residual <= cfg_.picard_tol) {
        seed_ = kappa;
        StepResult<Dim> r;
        r.new_grid = std::move(iterate);
        r.curvature = std::move(kappa);
        r.picard_iters = it;
        return r;
      }
    }
    throw NonConvergenceError("Picard iteration did not reach tol " + std::to_string(cfg_.picard_tol) + " in " +
                                  std::to_string(cfg_.picard_max_iter) + " iterations (last residual " +
                                  std::to_string(residual) + ")",
                              residual);
  }

  SchemeConfig cfg_;
  QuadratureRule<Dim> rule_;
  QuadratureRule<Dim> exact_rule_;
  std::optional<Eigen::VectorXd> seed_;
#ifdef GEOMFLOW_HAVE_UMFPACK
  Eigen::UmfPackLU<Eigen::SparseMatrix<double>> lu_;
#else
  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu_;
#endif
  bool pattern_ = false;
  Eigen::Index pattern_size_ = 0, pattern_nnz_ = 0;
};

template <int Dim>
StepResult<Dim> step_bgn(const ParametrizedGrid<Dim>& grid, const SchemeConfig& cfg) {
  if (cfg.variant != Variant::bgn_exact && cfg.variant != Variant::bgn_quadrature)
    throw InvalidArgument("step_bgn needs a bgn variant");
  return Stepper<Dim>(cfg).step(grid);
}

template <int Dim>
StepResult<Dim> step_dziuk(const ParametrizedGrid<Dim>& grid, const SchemeConfig& cfg) {
  if (cfg.variant != Variant::dziuk) throw InvalidArgument("step_dziuk needs the dziuk variant");
  return Stepper<Dim>(cfg).step(grid);
}

template <int Dim>
StepResult<Dim> step_sp(const ParametrizedGrid<Dim>& grid, const SchemeConfig& cfg,
                        const Eigen::VectorXd* kappa_seed = nullptr) {
  if (cfg.variant != Variant::sp) throw InvalidArgument("step_sp needs the sp variant");
  Stepper<Dim> stepper(cfg);
  if (kappa_seed) stepper.set_curvature_seed(*kappa_seed);
  return stepper.step(grid);
}

// --- time loop --------------------------------------------------------------

/// Error raised inside evolve, tagged with the step that failed.
template <class Base>
class StepError : public Base {
 public:
  template <class... Args>
  StepError(int step, double time, Args&&... args) : Base(std::forward<Args>(args)...), step_(step), time_(time) {}
  int step() const noexcept { return step_; }
  double time() const noexcept { return time_; }

 private:
  int step_;
  double time_;
};

template <int Dim>
using StepObserver = std::function<void(const ParametrizedGrid<Dim>&, const DiagnosticsRecord&)>;

template <int Dim>
struct Trajectory {
  std::vector<DiagnosticsRecord> records;
  ParametrizedGrid<Dim> final_grid;
};

/// Applies n_steps steps, recording diagnostics after each (plus the initial
/// state as step 0). Observers see every recorded state.
template <int Dim>
Trajectory<Dim> evolve(const ParametrizedGrid<Dim>& initial, const SchemeConfig& cfg, int n_steps,
                       const std::vector<StepObserver<Dim>>& observers = {}) {
  if (n_steps < 0) throw InvalidArgument("evolve: n_steps must be >= 0");
  Stepper<Dim> stepper(cfg);
  Trajectory<Dim> traj;
  auto d0 = stepper.diagnose(initial);
  const double e0 = d0.energy, v0 = d0.enclosed;
  d0.energy_norm = 1.0;
  traj.records.push_back(d0);
  for (const auto& obs : observers) obs(initial, d0);
  ParametrizedGrid<Dim> grid = initial;
  for (int m = 1; m <= n_steps; ++m) {
    const double t = m * cfg.tau;
    const std::string where = " (step " + std::to_string(m) + ", t = " + std::to_string(t) + ")";
    StepResult<Dim> r;
    try {
      r = stepper.step(grid);
    } catch (const DegeneracyError& e) {
      throw StepError<DegeneracyError>(m, t, e.element(), e.what() + where);
    } catch (const NonConvergenceError& e) {
      throw StepError<NonConvergenceError>(m, t, e.what() + where, e.residual());
    } catch (const WellPosednessError& e) {
      throw StepError<WellPosednessError>(m, t, e.what() + where);
    } catch (const NumericalFailure& e) {
      throw StepError<NumericalFailure>(m, t, e.what() + where);
    }
    grid = std::move(r.new_grid);
    auto d = r.diagnostics;
    d.step = m;
    d.time = t;
    d.energy_norm = d.energy / e0;
    d.enclosed_rel_loss = (d.enclosed - v0) / v0;
    traj.records.push_back(d);
    for (const auto& obs : observers) obs(grid, d);
  }
  traj.final_grid = std::move(grid);
  return traj;
}

}  // namespace geomflow
