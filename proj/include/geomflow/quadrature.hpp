#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <vector>

#include "geomflow/error.hpp"

namespace geomflow {

template <int Dim>
using RefPoint = Eigen::Matrix<double, Dim, 1>;

/// Quadrature rule on the reference simplex: [0,1] for Dim = 1, the unit
/// triangle {x, y >= 0, x + y <= 1} for Dim = 2.
template <int Dim>
struct QuadratureRule {
  std::vector<RefPoint<Dim>> points;
  std::vector<double> weights;
  int order = 0;  // exact for all polynomials of total degree <= order

  int size() const { return static_cast<int>(points.size()); }

  bool positive_weights() const {
    for (double w : weights)
      if (!(w > 0.0)) return false;
    return true;
  }
};

namespace detail {

// Gauss-Legendre nodes/weights on [-1,1] by Newton iteration on P_n.
inline void gauss_legendre_sym(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int k = 1; k <= n; ++k) {
        double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
      }
      dp = n * (z * p0 - p1) / (z * z - 1.0);
      double dz = p0 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    // recompute the derivative at the converged root
    double p0 = 1.0, p1 = 0.0;
    for (int k = 1; k <= n; ++k) {
      double p2 = p1;
      p1 = p0;
      p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
    }
    dp = n * (z * p0 - p1) / (z * z - 1.0);
    x[i] = -z;
    x[n - 1 - i] = z;
    w[i] = w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
}

}  // namespace detail

/// n-point Gauss-Legendre rule mapped to [0,1].
inline QuadratureRule<1> gauss_legendre_points(int n) {
  if (n < 1) throw InvalidArgument("gauss_legendre_points: n must be >= 1");
  std::vector<double> x, w;
  detail::gauss_legendre_sym(n, x, w);
  QuadratureRule<1> rule;
  rule.order = 2 * n - 1;
  for (int i = 0; i < n; ++i) {
    rule.points.push_back(RefPoint<1>(0.5 * (x[i] + 1.0)));
    rule.weights.push_back(0.5 * w[i]);
  }
  return rule;
}

/// Gauss-Legendre rule on [0,1] that is exact of order p.
inline QuadratureRule<1> gauss_rule_interval(int p) {
  if (p < 1) throw InvalidArgument("gauss_rule_interval: order must be >= 1");
  auto rule = gauss_legendre_points((p + 2) / 2);
  return rule;
}

/// Trapezoidal rule on [0,1]; gives the lumped mass inner product for P1.
inline QuadratureRule<1> lumped_rule_interval() {
  QuadratureRule<1> rule;
  rule.points = {RefPoint<1>(0.0), RefPoint<1>(1.0)};
  rule.weights = {0.5, 0.5};
  rule.order = 1;
  return rule;
}

/// Collapsed (Duffy) tensor Gauss rule on the unit triangle, exact of order p.
/// All points are interior and all weights are positive.
inline QuadratureRule<2> quad_rule_triangle(int p) {
  if (p < 1) throw InvalidArgument("quad_rule_triangle: order must be >= 1");
  if (p == 1) {
    QuadratureRule<2> rule;
    rule.points = {RefPoint<2>(1.0 / 3.0, 1.0 / 3.0)};
    rule.weights = {0.5};
    rule.order = 1;
    return rule;
  }
  // x = u (1 - v), y = v, dx dy = (1 - v) du dv. A degree-p monomial becomes
  // degree <= p in u and degree <= p + 1 in v once the Jacobian is included.
  auto gu = gauss_legendre_points((p + 2) / 2);
  auto gv = gauss_legendre_points((p + 3) / 2);
  QuadratureRule<2> rule;
  rule.order = p;
  for (int j = 0; j < gv.size(); ++j) {
    const double v = gv.points[j](0);
    for (int i = 0; i < gu.size(); ++i) {
      const double u = gu.points[i](0);
      rule.points.push_back(RefPoint<2>(u * (1.0 - v), v));
      rule.weights.push_back(gu.weights[i] * gv.weights[j] * (1.0 - v));
    }
  }
  return rule;
}

template <int Dim>
QuadratureRule<Dim> quadrature_rule(int p) {
  if constexpr (Dim == 1)
    return gauss_rule_interval(p);
  else
    return quad_rule_triangle(p);
}

/// Measure of the reference simplex.
template <int Dim>
constexpr double reference_measure() {
  return Dim == 1 ? 1.0 : 0.5;
}

}  // namespace geomflow
