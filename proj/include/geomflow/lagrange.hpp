#pragma once

#include <Eigen/Dense>

#include <array>
#include <vector>

#include "geomflow/error.hpp"
#include "geomflow/quadrature.hpp"

namespace geomflow {

/// Degree-l Lagrange basis on the reference simplex with equispaced nodes.
///
/// Nodes are ordered lexicographically: x = i/l on the interval, (i/l, j/l)
/// with i + j <= l on the triangle (i fastest). Each node also carries its
/// integer barycentric coordinates with respect to the simplex vertices
/// (origin first), which is what the global numbering keys on.
template <int Dim>
class LagrangeBasis {
 public:
  static constexpr int kMaxDegree = 4;
  using Point = RefPoint<Dim>;
  using Barycentric = std::array<int, Dim + 1>;

  explicit LagrangeBasis(int degree) : degree_(degree) {
    static_assert(Dim == 1 || Dim == 2, "LagrangeBasis supports Dim 1 or 2");
    if (degree < 1 || degree > kMaxDegree)
      throw InvalidArgument("LagrangeBasis: degree must be in [1, 4]");
    if constexpr (Dim == 1) {
      for (int i = 0; i <= degree; ++i) {
        nodes_.push_back(Point(double(i) / degree));
        bary_.push_back({degree - i, i});
        exps_.push_back({i, 0});
      }
    } else {
      for (int j = 0; j <= degree; ++j)
        for (int i = 0; i + j <= degree; ++i) {
          nodes_.push_back(Point(double(i) / degree, double(j) / degree));
          bary_.push_back({degree - i - j, i, j});
          exps_.push_back({i, j});
        }
    }
    const int n = size();
    Eigen::MatrixXd vandermonde(n, n);
    for (int r = 0; r < n; ++r) vandermonde.row(r) = monomials(nodes_[r]).transpose();
    // columns of coeffs_ are the monomial coefficients of each basis function
    coeffs_ = vandermonde.fullPivLu().inverse();
  }

  int degree() const { return degree_; }
  int size() const { return static_cast<int>(nodes_.size()); }
  const std::vector<Point>& nodes() const { return nodes_; }
  const std::vector<Barycentric>& barycentric() const { return bary_; }

  Eigen::VectorXd eval(const Point& x) const { return coeffs_.transpose() * monomials(x); }

  /// size() x Dim matrix of reference gradients.
  Eigen::Matrix<double, Eigen::Dynamic, Dim> grad(const Point& x) const {
    Eigen::Matrix<double, Eigen::Dynamic, Dim> g(size(), Dim);
    for (int d = 0; d < Dim; ++d) g.col(d) = coeffs_.transpose() * monomial_derivs(x, d);
    return g;
  }

 private:
  static double ipow(double x, int k) {
    double r = 1.0;
    for (int i = 0; i < k; ++i) r *= x;
    return r;
  }

  Eigen::VectorXd monomials(const Point& x) const {
    Eigen::VectorXd m(size());
    for (int k = 0; k < size(); ++k) {
      m(k) = ipow(x(0), exps_[k][0]);
      if constexpr (Dim == 2) m(k) *= ipow(x(1), exps_[k][1]);
    }
    return m;
  }

  Eigen::VectorXd monomial_derivs(const Point& x, int d) const {
    Eigen::VectorXd m(size());
    for (int k = 0; k < size(); ++k) {
      const int a = exps_[k][0];
      const int b = exps_[k][1];
      if constexpr (Dim == 1) {
        m(k) = a == 0 ? 0.0 : a * ipow(x(0), a - 1);
      } else if (d == 0) {
        m(k) = a == 0 ? 0.0 : a * ipow(x(0), a - 1) * ipow(x(1), b);
      } else {
        m(k) = b == 0 ? 0.0 : b * ipow(x(0), a) * ipow(x(1), b - 1);
      }
    }
    return m;
  }

  int degree_;
  std::vector<Point> nodes_;
  std::vector<Barycentric> bary_;
  std::vector<std::array<int, 2>> exps_;
  Eigen::MatrixXd coeffs_;
};

/// Rank test behind the unisolvence requirement on a quadrature rule: a
/// degree-l polynomial vanishing at every quadrature point must vanish.
template <int Dim>
bool unisolvent(const LagrangeBasis<Dim>& basis, const QuadratureRule<Dim>& rule) {
  Eigen::MatrixXd values(basis.size(), rule.size());
  for (int q = 0; q < rule.size(); ++q) values.col(q) = basis.eval(rule.points[q]);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(values);
  lu.setThreshold(1e-10);
  return lu.rank() == basis.size();
}

/// Cached basis values and reference gradients at the points of one rule.
template <int Dim>
struct TabulatedBasis {
  std::vector<Eigen::VectorXd> values;
  std::vector<Eigen::Matrix<double, Eigen::Dynamic, Dim>> grads;

  TabulatedBasis() = default;
  TabulatedBasis(const LagrangeBasis<Dim>& basis, const std::vector<RefPoint<Dim>>& points) {
    values.reserve(points.size());
    grads.reserve(points.size());
    for (const auto& p : points) {
      values.push_back(basis.eval(p));
      grads.push_back(basis.grad(p));
    }
  }
};

}  // namespace geomflow
