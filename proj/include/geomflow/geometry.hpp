#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "geomflow/error.hpp"
#include "geomflow/lagrange.hpp"
#include "geomflow/quadrature.hpp"
#include "geomflow/refmesh.hpp"

namespace geomflow {

/// Global numbering of Lagrange nodes. Vertex nodes keep their reference
/// vertex index; nodes on shared edges get one index for both elements.
struct DofMap {
  std::vector<std::vector<int>> element_dofs;
  int num_dofs = 0;

  int num_elements() const { return static_cast<int>(element_dofs.size()); }
  const std::vector<int>& operator[](int j) const { return element_dofs[j]; }
};

template <int Dim>
DofMap build_dofmap(const ReferenceGrid<Dim>& grid, const LagrangeBasis<Dim>& basis) {
  using Key = std::vector<std::pair<int, int>>;  // (vertex, multiplicity), sorted
  std::map<Key, int> ids;
  DofMap map;
  map.num_dofs = grid.num_vertices();
  const int deg = basis.degree();
  // pass 1: higher-order nodes numbered after the vertices, in element order
  map.element_dofs.resize(grid.num_elements());
  for (int j = 0; j < grid.num_elements(); ++j) {
    const auto& e = grid.elements[j];
    auto& dofs = map.element_dofs[j];
    dofs.reserve(basis.size());
    for (const auto& bary : basis.barycentric()) {
      Key key;
      for (int v = 0; v <= Dim; ++v)
        if (bary[v] > 0) key.emplace_back(e[v], bary[v]);
      std::sort(key.begin(), key.end());
      if (key.size() == 1 && key[0].second == deg) {
        dofs.push_back(key[0].first);
        continue;
      }
      auto [it, inserted] = ids.emplace(key, map.num_dofs);
      if (inserted) ++map.num_dofs;
      dofs.push_back(it->second);
    }
  }
  return map;
}

/// Immutable data shared by all grids of one run: the reference grid, the
/// basis and the node numbering.
template <int Dim>
struct Discretization {
  ReferenceGrid<Dim> reference;
  LagrangeBasis<Dim> basis;
  DofMap dofmap;
  std::vector<AffineMap<Dim>> maps;

  Discretization(ReferenceGrid<Dim> ref, int degree)
      : reference(std::move(ref)), basis(degree), dofmap(build_dofmap(reference, basis)) {
    maps.reserve(reference.num_elements());
    for (int j = 0; j < reference.num_elements(); ++j) maps.push_back(element_map(reference, j));
  }

  int degree() const { return basis.degree(); }
  int num_elements() const { return reference.num_elements(); }
  int num_dofs() const { return dofmap.num_dofs; }
};

/// Geometry at one point of one curved element.
template <int Dim>
struct ElementFrame {
  static constexpr int kWorld = Dim + 1;
  WorldPoint<Dim> position;
  Eigen::Matrix<double, kWorld, Dim> jacobian;
  double measure = 0.0;  // |grad F| or |J(F)| relative to the reference simplex
  WorldPoint<Dim> normal;
  /// World x n_local: tangential gradients of the local basis functions.
  Eigen::Matrix<double, kWorld, Eigen::Dynamic> surface_grads;
};

/// Degree-l parametrization Y_h of a closed curve or surface over a reference
/// grid, stored as the positions of the global Lagrange nodes.
template <int Dim>
class ParametrizedGrid {
 public:
  static constexpr int kDim = Dim;
  static constexpr int kWorld = Dim + 1;
  using Coords = Eigen::Matrix<double, Eigen::Dynamic, kWorld>;
  using LocalCoords = Eigen::Matrix<double, kWorld, Eigen::Dynamic>;

  ParametrizedGrid() = default;
  ParametrizedGrid(std::shared_ptr<const Discretization<Dim>> disc, Coords coords)
      : disc_(std::move(disc)), coords_(std::move(coords)) {
    if (coords_.rows() != disc_->num_dofs())
      throw InvalidArgument("coordinate array does not match the node count");
  }

  const Discretization<Dim>& discretization() const { return *disc_; }
  const std::shared_ptr<const Discretization<Dim>>& shared_discretization() const { return disc_; }
  const ReferenceGrid<Dim>& reference() const { return disc_->reference; }
  const LagrangeBasis<Dim>& basis() const { return disc_->basis; }
  const DofMap& dofmap() const { return disc_->dofmap; }
  int degree() const { return disc_->degree(); }
  int num_elements() const { return disc_->num_elements(); }
  int num_dofs() const { return disc_->num_dofs(); }

  const Coords& coords() const { return coords_; }
  Coords& coords() { return coords_; }

  /// Same discretization, new node positions.
  ParametrizedGrid with_coords(Coords coords) const { return ParametrizedGrid(disc_, std::move(coords)); }

  LocalCoords local_coords(int j) const {
    const auto& dofs = disc_->dofmap[j];
    LocalCoords x(kWorld, static_cast<int>(dofs.size()));
    for (std::size_t a = 0; a < dofs.size(); ++a) x.col(a) = coords_.row(dofs[a]).transpose();
    return x;
  }

  WorldPoint<Dim> evaluate(int j, const RefPoint<Dim>& x) const { return local_coords(j) * basis().eval(x); }

 private:
  std::shared_ptr<const Discretization<Dim>> disc_;
  Coords coords_;
};

using CurveParametrization = ParametrizedGrid<1>;
using SurfaceParametrization = ParametrizedGrid<2>;

// --- frames -------------------------------------------------------------

/// Counterclockwise-polygon outward normal direction: clockwise quarter turn.
inline Eigen::Vector2d perp(const Eigen::Vector2d& t) { return {t.y(), -t.x()}; }

/// J(F): the tangent vector (curves) or the cross product of the two
/// reference tangents (surfaces), rotated/oriented to point outward.
template <int Dim>
WorldPoint<Dim> oriented_jacobian(const Eigen::Matrix<double, Dim + 1, Dim>& jac) {
  if constexpr (Dim == 1)
    return perp(jac.col(0));
  else
    return jac.col(0).cross(jac.col(1));
}

namespace detail {

template <int Dim>
void fill_frame(ElementFrame<Dim>& f, const Eigen::Matrix<double, Dim + 1, Eigen::Dynamic>& x,
                const Eigen::VectorXd& values, const Eigen::Matrix<double, Eigen::Dynamic, Dim>& grads,
                int element, double reference_measure) {
  f.position = x * values;
  f.jacobian = x * grads;
  const WorldPoint<Dim> oj = oriented_jacobian<Dim>(f.jacobian);
  f.measure = oj.norm();
  if (!(f.measure > 1e-14 * reference_measure))
    throw DegeneracyError(element, "degenerate element " + std::to_string(element) +
                                       ": measure " + std::to_string(f.measure) +
                                       " at an evaluation point (nondegeneracy assumption violated)");
  f.normal = oj / f.measure;
  const Eigen::Matrix<double, Dim, Dim> g = f.jacobian.transpose() * f.jacobian;
  f.surface_grads = f.jacobian * g.inverse() * grads.transpose();
}

}  // namespace detail

template <int Dim>
ElementFrame<Dim> frame_at(const ParametrizedGrid<Dim>& grid, int j, const RefPoint<Dim>& x) {
  if (j < 0 || j >= grid.num_elements()) throw InvalidArgument("frame_at: element index out of range");
  ElementFrame<Dim> f;
  detail::fill_frame<Dim>(f, grid.local_coords(j), grid.basis().eval(x), grid.basis().grad(x), j,
                          grid.discretization().maps[j].measure());
  return f;
}

/// Frames at every point of one rule, element by element. Basis tables are
/// computed once per (basis, rule) pair; frames are rebuilt from coords.
template <int Dim>
class FrameTable {
 public:
  FrameTable(const ParametrizedGrid<Dim>& grid, const QuadratureRule<Dim>& rule)
      : grid_(&grid), rule_(&rule), tab_(grid.basis(), rule.points) {}

  const TabulatedBasis<Dim>& tabulated() const { return tab_; }
  const QuadratureRule<Dim>& rule() const { return *rule_; }

  /// Calls fn(j, q, frame) for every element j and point q in index order.
  template <class Fn>
  void for_each(Fn&& fn) const {
    ElementFrame<Dim> f;
    const auto& disc = grid_->discretization();
    for (int j = 0; j < grid_->num_elements(); ++j) {
      const auto x = grid_->local_coords(j);
      for (int q = 0; q < rule_->size(); ++q) {
        detail::fill_frame<Dim>(f, x, tab_.values[q], tab_.grads[q], j, disc.maps[j].measure());
        fn(j, q, f);
      }
    }
  }

 private:
  const ParametrizedGrid<Dim>* grid_;
  const QuadratureRule<Dim>* rule_;
  TabulatedBasis<Dim> tab_;
};

// --- construction -----------------------------------------------------------

/// Isoparametric grid whose Lagrange nodes are placed on the reference grid's
/// analytic shape (flat interpolation of the reference grid if it has none).
/// Curve nodes are spaced evenly in the curve parameter.
template <int Dim>
ParametrizedGrid<Dim> interpolate_shape(ReferenceGrid<Dim> reference, int degree) {
  auto disc = std::make_shared<const Discretization<Dim>>(std::move(reference), degree);
  const auto& ref = disc->reference;
  typename ParametrizedGrid<Dim>::Coords coords(disc->num_dofs(), Dim + 1);
  std::vector<char> done(disc->num_dofs(), 0);
  for (int j = 0; j < ref.num_elements(); ++j) {
    const auto& dofs = disc->dofmap[j];
    for (int a = 0; a < disc->basis.size(); ++a) {
      const int g = dofs[a];
      if (done[g]) continue;
      const auto& xh = disc->basis.nodes()[a];
      WorldPoint<Dim> p = disc->maps[j](xh);
      if (ref.shape) {
        if constexpr (Dim == 1) {
          const auto& shape = *ref.shape;
          const auto& e = ref.elements[j];
          const double t0 = shape.curve_param(ref.vertices[e[0]]);
          const double dt = std::remainder(shape.curve_param(ref.vertices[e[1]]) - t0, 2.0 * std::numbers::pi);
          p = shape.curve_point(t0 + xh(0) * dt);
        } else {
          p = ref.shape->project(Eigen::Vector3d(p));
        }
      }
      coords.row(g) = p.transpose();
      done[g] = 1;
    }
  }
  ParametrizedGrid<Dim> grid(disc, std::move(coords));
  // nondegeneracy check at a default rule
  const auto rule = quadrature_rule<Dim>(2 * degree);
  FrameTable<Dim>(grid, rule).for_each([](int, int, const ElementFrame<Dim>&) {});
  return grid;
}

/// Isoparametric grid of the flat reference grid itself.
template <int Dim>
ParametrizedGrid<Dim> flat_parametrization(ReferenceGrid<Dim> reference, int degree) {
  reference.shape.reset();
  return interpolate_shape(std::move(reference), degree);
}

// --- functionals ------------------------------------------------------------

/// Sum over elements and quadrature points of fn(j, q, frame) * measure * weight.
template <int Dim, class Fn>
double integrate(const ParametrizedGrid<Dim>& grid, const QuadratureRule<Dim>& rule, Fn&& fn) {
  double sum = 0.0;
  FrameTable<Dim>(grid, rule).for_each([&](int j, int q, const ElementFrame<Dim>& f) {
    sum += fn(j, q, f) * f.measure * rule.weights[q];
  });
  return sum;
}

/// (u, v)^h for finite element functions given by nodal values; u and v have
/// one row per node and any (equal) number of components.
template <int Dim>
double inner_product_h(const ParametrizedGrid<Dim>& grid, const QuadratureRule<Dim>& rule,
                       const Eigen::MatrixXd& u, const Eigen::MatrixXd& v) {
  if (u.rows() != grid.num_dofs() || v.rows() != grid.num_dofs() || u.cols() != v.cols())
    throw InvalidArgument("inner_product_h: nodal arrays do not match the grid");
  const TabulatedBasis<Dim> tab(grid.basis(), rule.points);
  return integrate(grid, rule, [&](int j, int q, const ElementFrame<Dim>&) {
    const auto& dofs = grid.dofmap()[j];
    Eigen::RowVectorXd uq = Eigen::RowVectorXd::Zero(u.cols()), vq = Eigen::RowVectorXd::Zero(u.cols());
    for (std::size_t a = 0; a < dofs.size(); ++a) {
      uq += tab.values[q](a) * u.row(dofs[a]);
      vq += tab.values[q](a) * v.row(dofs[a]);
    }
    return uq.dot(vq);
  });
}

/// (grad_s u, grad_s v)^h for nodal functions (componentwise Frobenius product).
template <int Dim>
double gradient_inner_product_h(const ParametrizedGrid<Dim>& grid, const QuadratureRule<Dim>& rule,
                                const Eigen::MatrixXd& u, const Eigen::MatrixXd& v) {
  if (u.rows() != grid.num_dofs() || v.rows() != grid.num_dofs() || u.cols() != v.cols())
    throw InvalidArgument("gradient_inner_product_h: nodal arrays do not match the grid");
  return integrate(grid, rule, [&](int j, int, const ElementFrame<Dim>& f) {
    const auto& dofs = grid.dofmap()[j];
    Eigen::MatrixXd gu = Eigen::MatrixXd::Zero(Dim + 1, u.cols()), gv = gu;
    for (std::size_t a = 0; a < dofs.size(); ++a) {
      gu += f.surface_grads.col(a) * u.row(dofs[a]);
      gv += f.surface_grads.col(a) * v.row(dofs[a]);
    }
    return (gu.array() * gv.array()).sum();
  });
}

/// Numerical perimeter L_h (curves) or surface area S_h (surfaces): (1,1)^h.
template <int Dim>
double energy(const ParametrizedGrid<Dim>& grid, const QuadratureRule<Dim>& rule) {
  return integrate(grid, rule, [](int, int, const ElementFrame<Dim>&) { return 1.0; });
}

/// Polynomial degree of F . J(F) on one element: 2l - 1 (curves), 3l - 2 (surfaces).
template <int Dim>
constexpr int enclosed_integrand_degree(int degree) {
  return Dim == 1 ? 2 * degree - 1 : 3 * degree - 2;
}

/// Enclosed area (curves) or volume (surfaces), computed exactly from
/// (1/(Dim+1)) sum_j int F_j . J(F_j). The rule must integrate that
/// polynomial integrand exactly.
template <int Dim>
double enclosed_measure(const ParametrizedGrid<Dim>& grid, const QuadratureRule<Dim>& rule) {
  const int need = enclosed_integrand_degree<Dim>(grid.degree());
  if (rule.order < need)
    throw InvalidArgument("enclosed " + std::string(Dim == 1 ? "area" : "volume") +
                          " needs a rule exact of order " + std::to_string(need) + ", got " +
                          std::to_string(rule.order));
  const TabulatedBasis<Dim> tab(grid.basis(), rule.points);
  double sum = 0.0;
  for (int j = 0; j < grid.num_elements(); ++j) {
    const auto x = grid.local_coords(j);
    for (int q = 0; q < rule.size(); ++q) {
      const WorldPoint<Dim> pos = x * tab.values[q];
      const Eigen::Matrix<double, Dim + 1, Dim> jac = x * tab.grads[q];
      sum += rule.weights[q] * pos.dot(oriented_jacobian<Dim>(jac));
    }
  }
  return sum / (Dim + 1);
}

template <int Dim>
double enclosed_measure(const ParametrizedGrid<Dim>& grid) {
  return enclosed_measure(grid, quadrature_rule<Dim>(std::max(1, enclosed_integrand_degree<Dim>(grid.degree()))));
}

inline double enclosed_area(const ParametrizedGrid<1>& grid) { return enclosed_measure(grid); }
inline double enclosed_area(const ParametrizedGrid<1>& grid, const QuadratureRule<1>& rule) {
  return enclosed_measure(grid, rule);
}
inline double enclosed_volume(const ParametrizedGrid<2>& grid) { return enclosed_measure(grid); }
inline double enclosed_volume(const ParametrizedGrid<2>& grid, const QuadratureRule<2>& rule) {
  return enclosed_measure(grid, rule);
}

/// |sigma_j| for every element, by quadrature.
template <int Dim>
std::vector<double> element_measures(const ParametrizedGrid<Dim>& grid, const QuadratureRule<Dim>& rule) {
  std::vector<double> m(grid.num_elements(), 0.0);
  FrameTable<Dim>(grid, rule).for_each(
      [&](int j, int q, const ElementFrame<Dim>& f) { m[j] += f.measure * rule.weights[q]; });
  return m;
}

/// Psi = max_j |sigma_j| / min_j |sigma_j|.
template <int Dim>
double mesh_quality(const ParametrizedGrid<Dim>& grid, const QuadratureRule<Dim>& rule) {
  const auto m = element_measures(grid, rule);
  const auto [lo, hi] = std::minmax_element(m.begin(), m.end());
  if (!(*lo > 0.0)) throw DegeneracyError(static_cast<int>(lo - m.begin()), "mesh_quality: element with zero measure");
  return *hi / *lo;
}

/// Numerical check of the surface-element transformation identities for a
/// pair of grids Y and Y~ = X o Y over the same reference grid. At every
/// quadrature point it compares
///   |J(F~)|   with sqrt(det(grad F~^T grad F~)),
///   |J(F~)|   with |J(Y~)| o A * |J(A)|,
///   |J(Y~)|   with |J(X)| o Y * |J(Y)|,
/// and returns the largest relative residual.
template <int Dim>
double jacobian_transform_check(const ParametrizedGrid<Dim>& y, const ParametrizedGrid<Dim>& y_tilde,
                                const QuadratureRule<Dim>& rule) {
  if (&y.discretization() != &y_tilde.discretization() &&
      (y.num_dofs() != y_tilde.num_dofs() || y.num_elements() != y_tilde.num_elements() ||
       y.degree() != y_tilde.degree()))
    throw InvalidArgument("jacobian_transform_check: grids use different reference grids");
  const TabulatedBasis<Dim> tab(y.basis(), rule.points);
  double worst = 0.0;
  for (int j = 0; j < y.num_elements(); ++j) {
    const auto& a = y.discretization().maps[j];
    if (y_tilde.discretization().maps[j].linear != a.linear)
      throw InvalidArgument("jacobian_transform_check: reference grids differ");
    const auto x = y.local_coords(j);
    const auto xt = y_tilde.local_coords(j);
    // orthonormal tangent basis of the flat reference element, pulled back to
    // reference-simplex directions
    const Eigen::Matrix<double, Dim + 1, Dim> tau_hat =
        Eigen::HouseholderQR<Eigen::Matrix<double, Dim + 1, Dim>>(a.linear).householderQ() *
        Eigen::Matrix<double, Dim + 1, Dim>::Identity();
    const Eigen::Matrix<double, Dim, Dim> ga = a.linear.transpose() * a.linear;
    const Eigen::Matrix<double, Dim, Dim> b_hat = ga.inverse() * a.linear.transpose() * tau_hat;
    for (int q = 0; q < rule.size(); ++q) {
      const Eigen::Matrix<double, Dim + 1, Dim> jf = x * tab.grads[q];
      const Eigen::Matrix<double, Dim + 1, Dim> jft = xt * tab.grads[q];
      const double m_ft = oriented_jacobian<Dim>(jft).norm();
      const double m_f = oriented_jacobian<Dim>(jf).norm();
      const double gram = std::sqrt((jft.transpose() * jft).determinant());
      worst = std::max(worst, std::abs(m_ft - gram) / m_ft);
      // |J(Y~)| with respect to the orthonormal reference tangents
      const double m_yt = oriented_jacobian<Dim>(Eigen::Matrix<double, Dim + 1, Dim>(jft * b_hat)).norm();
      const double m_y = oriented_jacobian<Dim>(Eigen::Matrix<double, Dim + 1, Dim>(jf * b_hat)).norm();
      worst = std::max(worst, std::abs(m_ft - m_yt * a.measure()) / m_ft);
      // |J(X)| from an orthonormal tangent basis of the curved element
      const Eigen::Matrix<double, Dim + 1, Dim> tau =
          Eigen::HouseholderQR<Eigen::Matrix<double, Dim + 1, Dim>>(jf).householderQ() *
          Eigen::Matrix<double, Dim + 1, Dim>::Identity();
      const Eigen::Matrix<double, Dim, Dim> gf = jf.transpose() * jf;
      const Eigen::Matrix<double, Dim, Dim> b = gf.inverse() * jf.transpose() * tau;
      const Eigen::Matrix<double, Dim + 1, Dim> dx = jft * b;
      const double m_x = std::sqrt((dx.transpose() * dx).determinant());
      worst = std::max(worst, std::abs(m_yt - m_x * m_y) / m_yt);
      (void)m_f;
    }
  }
  return worst;
}

/// Pointwise gap of the element-measure inequality behind energy stability:
///   [grad X : grad (X - id)] o Y * |J(Y)| - (|J(Y~)| - |J(Y)|) >= 0,
/// where Y~ = X o Y. Gradients are surface gradients on Y; measures are taken
/// with respect to the reference simplex.
template <int Dim>
double element_measure_gap(const ParametrizedGrid<Dim>& y, const ParametrizedGrid<Dim>& y_tilde, int j,
                           const RefPoint<Dim>& x) {
  const auto f = frame_at(y, j, x);
  const auto xt = y_tilde.local_coords(j);
  const auto xy = y.local_coords(j);
  const Eigen::Matrix<double, Dim + 1, Dim + 1> grad_x = xt * f.surface_grads.transpose();
  const Eigen::Matrix<double, Dim + 1, Dim + 1> grad_id = xy * f.surface_grads.transpose();
  const double lhs = (grad_x.array() * (grad_x - grad_id).array()).sum() * f.measure;
  const Eigen::Matrix<double, Dim + 1, Dim> jt = xt * y.basis().grad(x);
  return lhs - (oriented_jacobian<Dim>(jt).norm() - f.measure);
}

}  // namespace geomflow
