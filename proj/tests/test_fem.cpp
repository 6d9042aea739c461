#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "geomflow/lagrange.hpp"
#include "geomflow/quadrature.hpp"

using namespace geomflow;

namespace {

double factorial(int n) { return n <= 1 ? 1.0 : n * factorial(n - 1); }

// int_0^1 x^a dx
double interval_monomial(int a) { return 1.0 / (a + 1); }

// int over the unit triangle of x^a y^b
double triangle_monomial(int a, int b) { return factorial(a) * factorial(b) / factorial(a + b + 2); }

}  // namespace

TEST(Lagrange, LinearHatsAtMidpoint) {
  LagrangeBasis<1> basis(1);
  auto v = basis.eval(RefPoint<1>(0.5));
  EXPECT_NEAR(v(0), 0.5, 1e-15);
  EXPECT_NEAR(v(1), 0.5, 1e-15);
}

TEST(Lagrange, QuadraticValuesAtQuarter) {
  LagrangeBasis<1> basis(2);
  auto v = basis.eval(RefPoint<1>(0.25));
  // nodes 0, 0.5, 1: 2(x-.5)(x-1), -4x(x-1), 2x(x-.5)
  EXPECT_NEAR(v(0), 0.375, 1e-14);
  EXPECT_NEAR(v(1), 0.75, 1e-14);
  EXPECT_NEAR(v(2), -0.125, 1e-14);
}

TEST(Lagrange, BarycentricOnTriangle) {
  LagrangeBasis<2> basis(1);
  auto v = basis.eval(RefPoint<2>(1.0 / 3.0, 1.0 / 3.0));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(v(i), 1.0 / 3.0, 1e-15);
}

TEST(Lagrange, DofCounts) {
  for (int l = 1; l <= 4; ++l) {
    EXPECT_EQ(LagrangeBasis<1>(l).size(), l + 1);
    EXPECT_EQ(LagrangeBasis<2>(l).size(), (l + 1) * (l + 2) / 2);
  }
}

TEST(Lagrange, RejectsUnsupportedDegree) {
  EXPECT_THROW(LagrangeBasis<1>(0), InvalidArgument);
  EXPECT_THROW(LagrangeBasis<2>(5), InvalidArgument);
}

template <int Dim>
void check_basis_properties(int degree, std::mt19937& rng) {
  LagrangeBasis<Dim> basis(degree);
  const int n = basis.size();
  for (int a = 0; a < n; ++a) {
    auto v = basis.eval(basis.nodes()[a]);
    for (int b = 0; b < n; ++b) EXPECT_NEAR(v(b), a == b ? 1.0 : 0.0, 1e-12);
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    RefPoint<Dim> x;
    for (int d = 0; d < Dim; ++d) x(d) = u(rng);
    if constexpr (Dim == 2)
      if (x.sum() > 1.0) x = RefPoint<Dim>::Ones() - x;
    EXPECT_NEAR(basis.eval(x).sum(), 1.0, 1e-12);
    auto g = basis.grad(x);
    for (int d = 0; d < Dim; ++d) EXPECT_NEAR(g.col(d).sum(), 0.0, 1e-10);
    // finite-difference oracle for the gradient
    for (int d = 0; d < Dim; ++d) {
      RefPoint<Dim> e = RefPoint<Dim>::Zero();
      e(d) = 1e-6;
      Eigen::VectorXd fd = (basis.eval(x + e) - basis.eval(x - e)) / 2e-6;
      EXPECT_LT((fd - g.col(d)).cwiseAbs().maxCoeff(), 1e-6);
    }
  }
}

TEST(Lagrange, KroneckerPartitionOfUnityAndGradients) {
  std::mt19937 rng(7);
  for (int l = 1; l <= 4; ++l) {
    check_basis_properties<1>(l, rng);
    check_basis_properties<2>(l, rng);
  }
}

TEST(Quadrature, IntervalMidpointAndTwoPoint) {
  auto r1 = gauss_rule_interval(1);
  ASSERT_EQ(r1.size(), 1);
  EXPECT_DOUBLE_EQ(r1.points[0](0), 0.5);
  EXPECT_DOUBLE_EQ(r1.weights[0], 1.0);

  auto r3 = gauss_rule_interval(3);
  ASSERT_EQ(r3.size(), 2);
  EXPECT_NEAR(r3.points[0](0), 0.5 - 1.0 / (2.0 * std::sqrt(3.0)), 1e-15);
  EXPECT_NEAR(r3.points[1](0), 0.5 + 1.0 / (2.0 * std::sqrt(3.0)), 1e-15);
  EXPECT_NEAR(r3.weights[0], 0.5, 1e-15);
  EXPECT_NEAR(r3.weights[1], 0.5, 1e-15);

  double s = 0.0;
  for (int i = 0; i < r3.size(); ++i) s += r3.weights[i] * std::pow(r3.points[i](0), 3);
  EXPECT_NEAR(s, 0.25, 1e-15);
}

TEST(Quadrature, IntervalPointCount) {
  for (int p = 1; p <= 40; ++p) EXPECT_EQ(gauss_rule_interval(p).size(), (p + 2) / 2) << p;
}

TEST(Quadrature, TriangleCentroidAndXY) {
  auto r1 = quad_rule_triangle(1);
  ASSERT_EQ(r1.size(), 1);
  EXPECT_DOUBLE_EQ(r1.points[0](0), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(r1.points[0](1), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(r1.weights[0], 0.5);
  for (int p = 2; p <= 6; ++p) {
    auto r = quad_rule_triangle(p);
    double s = 0.0;
    for (int i = 0; i < r.size(); ++i) s += r.weights[i] * r.points[i](0) * r.points[i](1);
    EXPECT_NEAR(s, 1.0 / 24.0, 1e-15);
  }
}

TEST(Quadrature, IntervalRulesExactUpToOrder) {
  for (int p = 1; p <= 40; ++p) {
    auto r = gauss_rule_interval(p);
    EXPECT_TRUE(r.positive_weights());
    EXPECT_GE(r.order, p);
    double wsum = 0.0;
    for (double w : r.weights) wsum += w;
    EXPECT_NEAR(wsum, 1.0, 1e-14);
    for (int a = 0; a <= r.order; ++a) {
      double s = 0.0;
      for (int i = 0; i < r.size(); ++i) s += r.weights[i] * std::pow(r.points[i](0), a);
      EXPECT_NEAR(s, interval_monomial(a), 1e-12 * interval_monomial(a)) << "p=" << p << " a=" << a;
    }
  }
}

TEST(Quadrature, TriangleRulesExactUpToOrder) {
  for (int p = 1; p <= 40; ++p) {
    auto r = quad_rule_triangle(p);
    EXPECT_TRUE(r.positive_weights());
    EXPECT_GE(r.order, p);
    double wsum = 0.0;
    for (double w : r.weights) wsum += w;
    EXPECT_NEAR(wsum, 0.5, 1e-14);
    for (int a = 0; a <= r.order; ++a)
      for (int b = 0; a + b <= r.order; ++b) {
        double s = 0.0;
        for (int i = 0; i < r.size(); ++i)
          s += r.weights[i] * std::pow(r.points[i](0), a) * std::pow(r.points[i](1), b);
        const double exact = triangle_monomial(a, b);
        EXPECT_NEAR(s, exact, 1e-12 * exact) << "p=" << p << " a=" << a << " b=" << b;
      }
    for (const auto& x : r.points) {
      EXPECT_GT(x(0), 0.0);
      EXPECT_GT(x(1), 0.0);
      EXPECT_LT(x.sum(), 1.0);
    }
  }
}

TEST(Quadrature, LumpedIntervalRule) {
  auto r = lumped_rule_interval();
  ASSERT_EQ(r.size(), 2);
  EXPECT_TRUE(r.positive_weights());
  EXPECT_EQ(r.points[0](0), 0.0);
  EXPECT_EQ(r.points[1](0), 1.0);
  // lumped mass matrix of P1: diag(1/2, 1/2)
  LagrangeBasis<1> basis(1);
  Eigen::Matrix2d m = Eigen::Matrix2d::Zero();
  for (int q = 0; q < r.size(); ++q) {
    auto v = basis.eval(r.points[q]);
    m += r.weights[q] * v * v.transpose();
  }
  EXPECT_TRUE(m.isApprox(Eigen::Matrix2d(Eigen::Vector2d(0.5, 0.5).asDiagonal())));
  EXPECT_TRUE(unisolvent(basis, r));
}

TEST(Quadrature, UnisolventForRulesInUse) {
  for (int l = 1; l <= 4; ++l) {
    EXPECT_TRUE(unisolvent(LagrangeBasis<1>(l), gauss_rule_interval(10 * l)));
    EXPECT_TRUE(unisolvent(LagrangeBasis<2>(l), quad_rule_triangle(10 * l)));
    EXPECT_TRUE(unisolvent(LagrangeBasis<1>(l), gauss_rule_interval(2 * l)));
    EXPECT_TRUE(unisolvent(LagrangeBasis<2>(l), quad_rule_triangle(std::max(2, 3 * l - 2))));
  }
}

TEST(Quadrature, TooFewPointsAreNotUnisolvent) {
  // order 2l-1 Gauss has only l points: one short of l+1
  for (int l = 1; l <= 4; ++l) EXPECT_FALSE(unisolvent(LagrangeBasis<1>(l), gauss_rule_interval(2 * l - 1)));
  EXPECT_FALSE(unisolvent(LagrangeBasis<2>(1), quad_rule_triangle(1)));
}
