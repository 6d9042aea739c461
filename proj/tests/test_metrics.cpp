#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <numbers>
#include <random>

#include "geomflow/metrics.hpp"

using namespace geomflow;

namespace {

constexpr double kPi = std::numbers::pi;

ParametrizedGrid<1> unit_segment() {
  CurveGrid g;
  g.vertices = {{0, 0}, {1, 0}};
  g.elements = {{0, 1}};
  return flat_parametrization(g, 1);
}

ParametrizedGrid<1> circle(double r, int n, int degree) {
  return interpolate_shape(build_polygon(Shape::circle(r), n), degree);
}

template <int Dim>
WorldPoint<Dim> random_point(std::mt19937& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  WorldPoint<Dim> p;
  for (int i = 0; i <= Dim; ++i) p(i) = u(rng);
  return p;
}

template <int Dim>
bool in_simplex(const RefPoint<Dim>& x, double slack) {
  return (x.array() >= -slack).all() && x.sum() <= 1.0 + slack;
}

}  // namespace

// --- exact-shape error ------------------------------------------------------------

TEST(LinfErrorExact, InscribedSquare) {
  const auto g = circle(1.0, 4, 1);
  EXPECT_NEAR(linf_error_exact(g, 1.0, quadrature_rule<1>(4)), 1 - 1 / std::sqrt(2.0), 1e-15);
}

TEST(LinfErrorExact, ZeroAtNodes) {
  const auto g = circle(1.0, 64, 1);
  EXPECT_LT(linf_error_exact(g, 1.0, lumped_rule_interval()), 1e-15);
  const auto s = interpolate_shape(build_sphere_like(Shape::sphere(2.0), Polyhedron::octahedron, 0), 1);
  QuadratureRule<2> vertices;
  vertices.points = {RefPoint<2>(0, 0), RefPoint<2>(1, 0), RefPoint<2>(0, 1)};
  vertices.weights = {1.0 / 6, 1.0 / 6, 1.0 / 6};
  EXPECT_LT(linf_error_exact(s, 2.0, vertices), 1e-15);
}

TEST(LinfErrorExact, RejectsNonPositiveRadius) {
  EXPECT_THROW(linf_error_exact(circle(1.0, 8, 1), 0.0, quadrature_rule<1>(2)), InvalidArgument);
}

// --- kd-tree ----------------------------------------------------------------------

TEST(KdTree, MatchesSortedBruteForce) {
  std::mt19937 rng(1);
  for (int n : {1, 5, 9, 100, 1000}) {
    std::vector<Eigen::Vector3d> pts;
    for (int i = 0; i < n; ++i) pts.push_back(random_point<2>(rng, -1, 1));
    const KdTree<3> tree(pts);
    for (int trial = 0; trial < 50; ++trial) {
      const Eigen::Vector3d p = random_point<2>(rng, -1.5, 1.5);
      for (int k : {1, 3, 8, 2000}) {
        std::vector<std::pair<double, int>> all;
        for (int i = 0; i < n; ++i) all.emplace_back((pts[i] - p).squaredNorm(), i);
        std::sort(all.begin(), all.end());
        const auto got = tree.knn(p, k);
        ASSERT_EQ(static_cast<int>(got.size()), std::min(k, n));
        for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i], all[i].second);
      }
    }
  }
}

TEST(KdTree, TiesResolvedByIndex) {
  std::vector<Eigen::Vector2d> pts(20, Eigen::Vector2d(1, 1));
  const KdTree<2> tree(pts);
  const auto got = tree.knn(Eigen::Vector2d(0, 0), 4);
  EXPECT_EQ(got, (std::vector<int>{0, 1, 2, 3}));
}

TEST(CenterCloud, PointsAreBarycenterImages) {
  const auto g = interpolate_shape(build_polygon(Shape::flower(), 20), 3);
  const CenterCloud<1> cloud(g);
  ASSERT_EQ(static_cast<int>(cloud.points().size()), 20);
  for (int j = 0; j < 20; ++j) EXPECT_LT((cloud.points()[j] - g.evaluate(j, RefPoint<1>(0.5))).norm(), 1e-15);
}

// --- closest point --------------------------------------------------------------------

TEST(ClosestPoint, OrthogonalProjectionOntoSegment) {
  const auto r = closest_point(WorldPoint<1>(0.3, 0.4), unit_segment(), 0);
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.x(0), 0.3, 1e-12);
  EXPECT_NEAR(std::sqrt(r.dist2), 0.4, 1e-12);
}

TEST(ClosestPoint, ClampedAtEndpoint) {
  const auto r = closest_point(WorldPoint<1>(2.0, 1.0), unit_segment(), 0);
  EXPECT_TRUE(r.converged);
  EXPECT_DOUBLE_EQ(r.x(0), 1.0);
  EXPECT_NEAR(std::sqrt(r.dist2), std::sqrt(2.0), 1e-12);
}

TEST(ClosestPoint, PointOnCurvedElementImage) {
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto c = interpolate_shape(build_polygon(Shape::flower(), 16), 3);
  const auto s = interpolate_shape(build_sphere_like(Shape::ellipsoid(2, 1, 1), Polyhedron::octahedron, 1), 2);
  for (int trial = 0; trial < 40; ++trial) {
    const int jc = trial % c.num_elements();
    const auto rc = closest_point(c.evaluate(jc, RefPoint<1>(u(rng))), c, jc);
    EXPECT_TRUE(rc.converged);
    EXPECT_LT(rc.dist2, 1e-20);
    double a = u(rng), b = u(rng);
    if (a + b > 1) a = 1 - a, b = 1 - b;
    const int js = trial % s.num_elements();
    const auto rs = closest_point(s.evaluate(js, RefPoint<2>(a, b)), s, js);
    EXPECT_TRUE(rs.converged);
    EXPECT_LT(rs.dist2, 1e-20);
  }
}

TEST(ClosestPoint, FeasibleAndConsistent) {
  std::mt19937 rng(9);
  const auto s = interpolate_shape(build_sphere_like(Shape::sphere(), Polyhedron::icosahedron, 0), 2);
  const auto c = interpolate_shape(build_polygon(Shape::ellipse(2, 1), 12), 2);
  for (int trial = 0; trial < 200; ++trial) {
    const int js = trial % s.num_elements();
    const auto p = random_point<2>(rng, -2, 2);
    const auto r = closest_point(p, s, js);
    EXPECT_TRUE(in_simplex<2>(r.x, 1e-12));
    EXPECT_NEAR(r.dist2, (p - s.evaluate(js, r.x)).squaredNorm(), 1e-14 * (1 + r.dist2));
    const int jc = trial % c.num_elements();
    const auto q = random_point<1>(rng, -3, 3);
    const auto rc = closest_point(q, c, jc);
    EXPECT_TRUE(in_simplex<1>(rc.x, 1e-12));
    EXPECT_NEAR(rc.dist2, (q - c.evaluate(jc, rc.x)).squaredNorm(), 1e-14 * (1 + rc.dist2));
  }
}

TEST(ClosestPoint, BeatsDenseSampling) {
  // the returned value is a local minimum no worse than a fine sampling of the
  // element near the sampled optimum
  std::mt19937 rng(2);
  const auto s = interpolate_shape(build_sphere_like(Shape::sphere(), Polyhedron::octahedron, 0), 3);
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::Vector3d p = 1.3 * random_point<2>(rng, -1, 1).normalized();
    const int j = trial % 8;
    double best = std::numeric_limits<double>::infinity();
    for (int a = 0; a <= 60; ++a)
      for (int b = 0; a + b <= 60; ++b) best = std::min(best, (p - s.evaluate(j, RefPoint<2>(a / 60.0, b / 60.0))).squaredNorm());
    EXPECT_LE(closest_point(p, s, j).dist2, best + 1e-12);
  }
}

TEST(ClosestPoint, RejectsBadElement) {
  EXPECT_THROW(closest_point(WorldPoint<1>(0, 0), unit_segment(), 1), InvalidArgument);
}

// --- point to grid ---------------------------------------------------------------------

TEST(DistPointToGrid, ZeroAtVertices) {
  const auto g = interpolate_shape(build_triangulation(Shape::torus(2, 1), {720, 360}), 2);
  const CenterCloud<2> cloud(g);
  for (int v = 0; v < 360; v += 17)
    for (int k : {1, 4, 8}) EXPECT_LT(dist_point_to_grid(g.coords().row(v).transpose().eval(), g, cloud, k), 1e-12);
}

TEST(DistPointToGrid, ConcentricCircles) {
  const auto inner = circle(1.0, 512, 1);
  const auto outer = circle(2.0, 512, 1);
  const CenterCloud<1> cloud(outer);
  std::mt19937 rng(6);
  std::uniform_real_distribution<double> u(0, 2 * kPi);
  for (int trial = 0; trial < 100; ++trial) {
    const double t = u(rng);
    EXPECT_NEAR(dist_point_to_grid(WorldPoint<1>(std::cos(t), std::sin(t)), outer, cloud, 8), 1.0, 2e-4);
  }
  (void)inner;
}

TEST(DistPointToGrid, FullSearchEqualsBruteForce) {
  std::mt19937 rng(8);
  const auto c = interpolate_shape(build_polygon(Shape::flower(), 16), 2);
  const auto s = interpolate_shape(build_sphere_like(Shape::ellipsoid(1.5, 1, 0.7), Polyhedron::octahedron, 0), 2);
  const CenterCloud<1> cc(c);
  const CenterCloud<2> cs(s);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = random_point<1>(rng, -1.5, 1.5);
    EXPECT_DOUBLE_EQ(dist_point_to_grid(p, c, cc, c.num_elements()), dist_point_to_grid_brute(p, c));
    const auto q = random_point<2>(rng, -1.5, 1.5);
    EXPECT_DOUBLE_EQ(dist_point_to_grid(q, s, cs, s.num_elements()), dist_point_to_grid_brute(q, s));
  }
}

TEST(DistPointToGrid, DefaultNeighborCountEqualsBruteForceNearGrid) {
  std::mt19937 rng(10);
  std::uniform_real_distribution<double> u(0, 1), off(-0.1, 0.1);
  const auto c = interpolate_shape(build_polygon(Shape::flower(), 16), 2);
  const auto s = interpolate_shape(build_sphere_like(Shape::sphere(), Polyhedron::octahedron, 0), 2);
  const CenterCloud<1> cc(c);
  const CenterCloud<2> cs(s);
  for (int trial = 0; trial < 200; ++trial) {
    const WorldPoint<1> p = c.evaluate(trial % 16, RefPoint<1>(u(rng))) + random_point<1>(rng, -0.1, 0.1);
    EXPECT_NEAR(dist_point_to_grid(p, c, cc, 8, {}, false), dist_point_to_grid_brute(p, c), 1e-12);
    double a = u(rng), b = u(rng);
    if (a + b > 1) a = 1 - a, b = 1 - b;
    const WorldPoint<2> q = s.evaluate(trial % 8, RefPoint<2>(a, b)) + random_point<2>(rng, -0.1, 0.1);
    EXPECT_NEAR(dist_point_to_grid(q, s, cs, 8, {}, false), dist_point_to_grid_brute(q, s), 1e-12);
  }
}

TEST(DistPointToGrid, NonIncreasingInNeighborCount) {
  std::mt19937 rng(12);
  const auto s = interpolate_shape(build_sphere_like(Shape::ellipsoid(2, 1, 1), Polyhedron::icosahedron, 1), 2);
  const CenterCloud<2> cloud(s);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = random_point<2>(rng, -2.5, 2.5);
    double prev = std::numeric_limits<double>::infinity();
    for (int k = 1; k <= s.num_elements(); k *= 2) {
      const double d = dist_point_to_grid(p, s, cloud, k, {}, false);
      EXPECT_LE(d, prev);
      prev = d;
    }
  }
}

TEST(DistPointToGrid, CertifiedSearchFindsFanElements) {
  // long thin triangles around the poles of the lat-long mesh: their centers
  // are often not among the 8 nearest to points near their corners
  const auto s = interpolate_shape(build_triangulation(Shape::ellipsoid(2, 1, 1), {676, 340}), 2);
  const CenterCloud<2> cloud(s);
  int knn_misses = 0;
  for (int j = 0; j < s.num_elements(); ++j)
    for (const RefPoint<2>& x : {RefPoint<2>(0.9, 0.05), RefPoint<2>(0.05, 0.9), RefPoint<2>(0.05, 0.05)}) {
      const WorldPoint<2> p = s.evaluate(j, x);
      EXPECT_LT(dist_point_to_grid(p, s, cloud, 8), 1e-10);
      if (dist_point_to_grid(p, s, cloud, 8, {}, false) > 1e-10) ++knn_misses;
    }
  EXPECT_GT(knn_misses, 0);
}

// --- projected distance -------------------------------------------------------------

TEST(ProjectedDistance, SelfDistanceVanishes) {
  const auto c = interpolate_shape(build_polygon(Shape::ellipse(2, 1), 64), 3);
  EXPECT_LE(l2_projected_distance(c, c, quadrature_rule<1>(30)), 1e-10);
  const auto s = interpolate_shape(build_triangulation(Shape::ellipsoid(2, 1, 1), {676, 340}), 2);
  EXPECT_LE(l2_projected_distance(s, s, quadrature_rule<2>(8)), 1e-10);
}

TEST(ProjectedDistance, ConcentricCircles) {
  const auto a = circle(1.0, 128, 2);
  const auto b = circle(1.5, 128, 2);
  EXPECT_NEAR(l2_projected_distance(a, b, quadrature_rule<1>(20)), 0.5 * std::sqrt(2 * kPi), 1e-3);
}

TEST(ProjectedDistance, NormVariants) {
  const auto a = circle(1.0, 128, 2);
  const auto b = circle(1.25, 128, 2);
  const auto rule = quadrature_rule<1>(20);
  EXPECT_NEAR(projected_distance(a, b, rule, 8, DistanceNorm::l1), 0.25 * 2 * kPi, 1e-3);
  EXPECT_NEAR(projected_distance(a, b, rule, 8, DistanceNorm::linf), 0.25, 1e-4);
}

TEST(ProjectedDistance, ConcentricSpheres) {
  const auto a = interpolate_shape(build_sphere_like(Shape::sphere(1.0), Polyhedron::icosahedron, 2), 2);
  const auto b = interpolate_shape(build_sphere_like(Shape::sphere(1.2), Polyhedron::icosahedron, 2), 2);
  EXPECT_NEAR(l2_projected_distance(a, b, quadrature_rule<2>(6)), 0.2 * std::sqrt(4 * kPi), 2e-3);
}

TEST(ProjectedDistance, GrowsSlowerThanQuadraticInTargetSize) {
  const auto src = circle(1.0, 256, 1);
  const auto rule = quadrature_rule<1>(4);
  auto time_against = [&](int n) {
    const auto target = circle(1.1, n, 1);
    const auto t0 = std::chrono::steady_clock::now();
    double acc = 0;
    for (int rep = 0; rep < 3; ++rep) acc += l2_projected_distance(src, target, rule);
    EXPECT_GT(acc, 0.0);
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  const double small = time_against(1024);
  const double large = time_against(16384);
  // 16x the elements: quadratic growth would be 256x, brute force 16x
  EXPECT_LT(large, 8.0 * small + 0.05);
}
