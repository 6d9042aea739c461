#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "geomflow/refmesh.hpp"

using namespace geomflow;

namespace {

int euler_characteristic(const SurfaceGrid& g) {
  std::set<std::pair<int, int>> edges;
  for (const auto& e : g.elements)
    for (int i = 0; i < 3; ++i) edges.insert(std::minmax(e[i], e[(i + 1) % 3]));
  return g.num_vertices() - static_cast<int>(edges.size()) + g.num_elements();
}

}  // namespace

TEST(Polygon, UnitSquareDiamond) {
  auto g = build_polygon(Shape::circle(), 4);
  ASSERT_EQ(g.num_elements(), 4);
  const double expect[4][2] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
  for (int k = 0; k < 4; ++k) {
    EXPECT_NEAR(g.vertices[k].x(), expect[k][0], 1e-15);
    EXPECT_NEAR(g.vertices[k].y(), expect[k][1], 1e-15);
  }
  validate(g);
  EXPECT_NEAR(flat_enclosed_measure(g), 2.0, 1e-15);
}

TEST(Polygon, EllipseVerticesOnCurve) {
  auto g = build_polygon(Shape::ellipse(2, 1), 128);
  EXPECT_EQ(g.num_elements(), 128);
  for (const auto& v : g.vertices) EXPECT_NEAR(v.x() * v.x() / 4 + v.y() * v.y(), 1.0, 1e-14);
  validate(g);
  EXPECT_GT(flat_enclosed_measure(g), 0.0);
}

TEST(Polygon, FlowerClosedAndCounterclockwise) {
  auto g = build_polygon(Shape::flower(), 128);
  validate(g);
  for (const auto& v : g.vertices) {
    const double th = std::atan2(v.y(), v.x());
    EXPECT_NEAR(v.norm(), 1.0 + 0.2 * std::cos(5 * th), 1e-14);
  }
  EXPECT_GT(flat_enclosed_measure(g), 0.0);
}

TEST(Polygon, RejectsTooFewElements) {
  EXPECT_THROW(build_polygon(Shape::circle(), 2), InvalidArgument);
}

TEST(Polygon, SmallestPolygonForMeshSize) {
  auto g = build_polygon_h(Shape::circle(), 0.2);
  EXPECT_LE(g.h(), 0.2);
  EXPECT_GT(build_polygon(Shape::circle(), g.num_elements() - 1).h(), 0.2);
}

TEST(ElementMap, SegmentAndTriangleMeasures) {
  CurveGrid c;
  c.vertices = {{0, 0}, {3, 4}};
  c.elements = {{0, 1}, {1, 0}};
  EXPECT_DOUBLE_EQ(element_map(c, 0).measure(), 5.0);
  EXPECT_THROW(element_map(c, 2), InvalidArgument);

  SurfaceGrid s;
  s.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  s.elements = {{0, 1, 2}};
  EXPECT_DOUBLE_EQ(element_map(s, 0).measure(), 1.0);
  auto a = element_map(s, 0);
  EXPECT_TRUE(a(RefPoint<2>(1, 0)).isApprox(Eigen::Vector3d(1, 0, 0)));
}

TEST(ElementMap, RegularPolygonChord) {
  auto g = build_polygon(Shape::circle(), 128);
  for (int j = 0; j < 128; ++j)
    EXPECT_NEAR(element_map(g, j).measure(), 2 * std::sin(std::numbers::pi / 128), 1e-15);
}

TEST(Triangulation, Octahedron) {
  auto g = build_sphere_like(Shape::sphere(), Polyhedron::octahedron, 0);
  EXPECT_EQ(g.num_elements(), 8);
  EXPECT_EQ(g.num_vertices(), 6);
  validate(g);
  EXPECT_NEAR(flat_enclosed_measure(g), 4.0 / 3.0, 1e-15);
  auto t = build_triangulation(Shape::sphere(), {8, 6});
  EXPECT_EQ(t.num_elements(), 8);
}

TEST(Triangulation, RefinedOctahedronCounts) {
  auto g = refine_uniform(build_sphere_like(Shape::sphere(), Polyhedron::octahedron, 0));
  EXPECT_EQ(g.num_elements(), 32);
  EXPECT_EQ(g.num_vertices(), 18);
  EXPECT_EQ(euler_characteristic(g), 2);
  validate(g);
  for (const auto& v : g.vertices) EXPECT_NEAR(v.norm(), 1.0, 1e-15);
}

TEST(Triangulation, EllipsoidTargetCounts) {
  auto g = build_triangulation(Shape::ellipsoid(2, 1, 1), {676, 340});
  EXPECT_EQ(g.num_elements(), 676);
  EXPECT_EQ(g.num_vertices(), 340);
  validate(g);
  EXPECT_EQ(euler_characteristic(g), 2);
  for (const auto& v : g.vertices) EXPECT_NEAR(v.x() * v.x() / 4 + v.y() * v.y() + v.z() * v.z(), 1.0, 1e-12);
  EXPECT_GT(flat_enclosed_measure(g), 0.0);
}

TEST(Triangulation, TorusTargetCounts) {
  auto g = build_triangulation(Shape::torus(2, 1), {720, 360});
  EXPECT_EQ(g.num_elements(), 720);
  EXPECT_EQ(g.num_vertices(), 360);
  validate(g);
  EXPECT_EQ(euler_characteristic(g), 0);
  for (const auto& v : g.vertices) {
    const double q = std::hypot(v.x(), v.y()) - 2.0;
    EXPECT_NEAR(q * q + v.z() * v.z(), 1.0, 1e-12);
  }
  EXPECT_GT(flat_enclosed_measure(g), 0.0);
}

TEST(Triangulation, IcosahedronClosedOutward) {
  for (int r = 0; r < 3; ++r) {
    auto g = build_sphere_like(Shape::sphere(), Polyhedron::icosahedron, r);
    validate(g);
    EXPECT_EQ(euler_characteristic(g), 2);
    EXPECT_GT(flat_enclosed_measure(g), 0.0);
  }
}

TEST(Refine, CircleDoubles) {
  auto g = refine_uniform(build_polygon(Shape::circle(), 4));
  EXPECT_EQ(g.num_elements(), 8);
  validate(g);
  for (const auto& v : g.vertices) EXPECT_NEAR(v.norm(), 1.0, 1e-15);
}

TEST(Refine, MeshSizeHalves) {
  auto g = build_polygon_h(Shape::circle(), 0.2);
  auto f = refine_uniform(g);
  // chord of half the angle: 2 sin(x/2) vs sin(x); ratio -> 1/2
  EXPECT_NEAR(f.h() / g.h(), 0.5, 2e-3);
  auto flat = refine_uniform(g, false);
  EXPECT_DOUBLE_EQ(flat.h(), 0.5 * g.h());
}

TEST(Refine, FlatRefinementKeepsShoelaceArea) {
  for (int n : {3, 7, 64}) {
    auto g = build_polygon(Shape::ellipse(2, 1), n);
    auto f = refine_uniform(g, false);
    EXPECT_NEAR(flat_enclosed_measure(f), flat_enclosed_measure(g), 1e-14);
  }
  auto s = build_sphere_like(Shape::sphere(), Polyhedron::octahedron, 1);
  EXPECT_NEAR(flat_enclosed_measure(refine_uniform(s, false)), flat_enclosed_measure(s), 1e-14);
}

TEST(Refine, ManifoldAfterRepeatedRefinement) {
  auto g = build_triangulation(Shape::ellipsoid(2, 1, 1), {676, 340});
  auto f = refine_uniform(g);
  validate(f);
  EXPECT_EQ(f.num_elements(), 4 * 676);
  EXPECT_EQ(euler_characteristic(f), 2);
  auto t = refine_uniform(build_torus(Shape::torus(2, 1), 12, 6));
  validate(t);
  EXPECT_EQ(euler_characteristic(t), 0);
}

TEST(Off, RoundTripExact) {
  auto g = build_triangulation(Shape::torus(2, 1), {720, 360});
  std::stringstream ss;
  write_off(ss, g);
  auto back = read_off<2>(ss);
  ASSERT_EQ(back.num_vertices(), g.num_vertices());
  ASSERT_EQ(back.elements, g.elements);
  for (int i = 0; i < g.num_vertices(); ++i) EXPECT_EQ(back.vertices[i], g.vertices[i]);

  auto c = build_polygon(Shape::flower(), 33);
  std::stringstream cs;
  write_off(cs, c);
  auto cb = read_off<1>(cs);
  for (int i = 0; i < c.num_vertices(); ++i) EXPECT_EQ(cb.vertices[i], c.vertices[i]);
}

TEST(Off, MalformedInputReportsLine) {
  std::stringstream ss("OFF\n3 1 0\n0 0 0\n1 0 0\n");
  try {
    read_off<2>(ss);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line"), std::string::npos);
  }
}
