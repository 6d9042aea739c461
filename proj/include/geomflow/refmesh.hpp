#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "geomflow/error.hpp"
#include "geomflow/quadrature.hpp"
#include "geomflow/shape.hpp"

namespace geomflow {

template <int Dim>
using WorldPoint = Eigen::Matrix<double, Dim + 1, 1>;

/// Affine map from the reference simplex onto one flat element.
template <int Dim>
struct AffineMap {
  int element = 0;
  WorldPoint<Dim> offset;
  Eigen::Matrix<double, Dim + 1, Dim> linear;

  WorldPoint<Dim> operator()(const RefPoint<Dim>& x) const { return offset + linear * x; }

  /// |grad A| for segments, |J(A)| (cross product norm) for triangles.
  double measure() const {
    if constexpr (Dim == 1)
      return linear.col(0).norm();
    else
      return linear.col(0).cross(linear.col(1)).norm();
  }
};

/// Flat closed reference grid: a polygon in R^2 (Dim = 1) or a triangulated
/// surface in R^3 (Dim = 2). Elements list vertex indices in orientation order.
template <int Dim>
struct ReferenceGrid {
  static constexpr int kDim = Dim;
  static constexpr int kWorld = Dim + 1;
  using Element = std::array<int, Dim + 1>;

  std::vector<WorldPoint<Dim>> vertices;
  std::vector<Element> elements;
  /// Shape the vertices sit on; refinement reprojects new vertices onto it.
  std::optional<Shape> shape;
  /// Human-readable record of the generator and its parameters.
  std::string provenance;

  int num_vertices() const { return static_cast<int>(vertices.size()); }
  int num_elements() const { return static_cast<int>(elements.size()); }

  double h() const {
    double hmax = 0.0;
    for (const auto& e : elements)
      for (int i = 0; i <= Dim; ++i)
        for (int k = i + 1; k <= Dim; ++k)
          hmax = std::max(hmax, (vertices[e[i]] - vertices[e[k]]).norm());
    return hmax;
  }
};

using CurveGrid = ReferenceGrid<1>;
using SurfaceGrid = ReferenceGrid<2>;

template <int Dim>
AffineMap<Dim> element_map(const ReferenceGrid<Dim>& grid, int j) {
  if (j < 0 || j >= grid.num_elements())
    throw InvalidArgument("element_map: element index " + std::to_string(j) + " out of range");
  const auto& e = grid.elements[j];
  AffineMap<Dim> map;
  map.element = j;
  map.offset = grid.vertices[e[0]];
  for (int d = 0; d < Dim; ++d) map.linear.col(d) = grid.vertices[e[d + 1]] - grid.vertices[e[0]];
  return map;
}

/// Shoelace area (curves) or divergence-theorem volume (surfaces) of the flat grid.
template <int Dim>
double flat_enclosed_measure(const ReferenceGrid<Dim>& grid) {
  double sum = 0.0;
  for (const auto& e : grid.elements) {
    const auto& p = grid.vertices[e[0]];
    const auto& q = grid.vertices[e[1]];
    if constexpr (Dim == 1) {
      sum += 0.5 * (p.x() * q.y() - q.x() * p.y());
    } else {
      const auto& r = grid.vertices[e[2]];
      sum += p.dot(q.cross(r)) / 6.0;
    }
  }
  return sum;
}

/// Throws InvalidArgument unless the grid is a closed, consistently oriented
/// manifold with nondegenerate elements.
template <int Dim>
void validate(const ReferenceGrid<Dim>& grid) {
  const int nv = grid.num_vertices();
  if (grid.num_elements() == 0) throw InvalidArgument("grid has no elements");
  for (int j = 0; j < grid.num_elements(); ++j) {
    for (int v : grid.elements[j])
      if (v < 0 || v >= nv)
        throw InvalidArgument("element " + std::to_string(j) + " references missing vertex");
    if (!(element_map(grid, j).measure() > 0.0))
      throw InvalidArgument("element " + std::to_string(j) + " is degenerate");
  }
  if constexpr (Dim == 1) {
    std::vector<int> starts(nv, 0), ends(nv, 0);
    for (const auto& e : grid.elements) {
      ++starts[e[0]];
      ++ends[e[1]];
    }
    for (int v = 0; v < nv; ++v) {
      if (starts[v] + ends[v] != 2)
        throw InvalidArgument("vertex " + std::to_string(v) + " is not incident to exactly 2 segments");
      if (starts[v] != 1) throw InvalidArgument("inconsistent orientation at vertex " + std::to_string(v));
    }
  } else {
    std::map<std::pair<int, int>, int> directed;
    std::vector<int> used(nv, 0);
    for (const auto& e : grid.elements)
      for (int i = 0; i < 3; ++i) {
        ++directed[{e[i], e[(i + 1) % 3]}];
        used[e[i]] = 1;
      }
    for (const auto& [edge, count] : directed) {
      if (count != 1)
        throw InvalidArgument("edge traversed twice in the same direction (orientation or non-manifold)");
      auto it = directed.find({edge.second, edge.first});
      if (it == directed.end()) throw InvalidArgument("boundary edge found; grid is not closed");
    }
    for (int v = 0; v < nv; ++v)
      if (!used[v]) throw InvalidArgument("vertex " + std::to_string(v) + " is unused");
  }
}

// --- curves ------------------------------------------------------------

/// Closed polygon with N vertices on the shape at equal parameter spacing,
/// oriented counterclockwise.
inline CurveGrid build_polygon(const Shape& shape, int n) {
  if (shape.dim() != 1) throw InvalidArgument("build_polygon needs a curve shape");
  if (n < 3) throw InvalidArgument("build_polygon: need at least 3 elements");
  CurveGrid grid;
  grid.shape = shape;
  for (int k = 0; k < n; ++k) {
    grid.vertices.push_back(shape.curve_point(2.0 * std::numbers::pi * k / n));
    grid.elements.push_back({k, (k + 1) % n});
  }
  grid.provenance = "polygon " + shape.describe() + " N=" + std::to_string(n);
  return grid;
}

/// Smallest polygon whose longest segment is at most h_max.
inline CurveGrid build_polygon_h(const Shape& shape, double h_max) {
  if (!(h_max > 0.0)) throw InvalidArgument("build_polygon_h: h must be positive");
  for (int n = 3; n < 1 << 24; ++n) {
    auto grid = build_polygon(shape, n);
    if (grid.h() <= h_max) return grid;
  }
  throw InvalidArgument("build_polygon_h: h too small");
}

// --- surfaces ----------------------------------------------------------

namespace detail {

inline void orient_outward(SurfaceGrid& grid) {
  for (auto& e : grid.elements) {
    const Eigen::Vector3d& p = grid.vertices[e[0]];
    const Eigen::Vector3d& q = grid.vertices[e[1]];
    const Eigen::Vector3d& r = grid.vertices[e[2]];
    const Eigen::Vector3d normal = (q - p).cross(r - p);
    Eigen::Vector3d centroid = (p + q + r) / 3.0;
    Eigen::Vector3d reference = centroid;
    if (grid.shape && grid.shape->kind == ShapeKind::torus) {
      Eigen::Vector3d ring(centroid.x(), centroid.y(), 0.0);
      reference = centroid - ring.normalized() * grid.shape->major;
    }
    if (normal.dot(reference) < 0.0) std::swap(e[1], e[2]);
  }
}

inline void project_all(SurfaceGrid& grid) {
  if (!grid.shape) return;
  for (auto& v : grid.vertices) v = grid.shape->project(Eigen::Vector3d(v));
}

}  // namespace detail

enum class Polyhedron { octahedron, icosahedron };

inline SurfaceGrid build_polyhedron(Polyhedron base) {
  SurfaceGrid grid;
  if (base == Polyhedron::octahedron) {
    grid.vertices = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    grid.elements = {{0, 2, 4}, {2, 1, 4}, {1, 3, 4}, {3, 0, 4},
                     {2, 0, 5}, {1, 2, 5}, {3, 1, 5}, {0, 3, 5}};
    grid.provenance = "octahedron";
  } else {
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Eigen::Vector3d> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0},
                                      {0, -1, t}, {0, 1, t}, {0, -1, -t}, {0, 1, -t},
                                      {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
    for (auto& p : v) grid.vertices.push_back(p.normalized());
    grid.elements = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                     {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                     {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                     {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
    grid.provenance = "icosahedron";
  }
  grid.shape = Shape::sphere();
  detail::orient_outward(grid);
  return grid;
}

template <int Dim>
ReferenceGrid<Dim> refine_uniform(const ReferenceGrid<Dim>& grid, bool reproject = true);

/// Refined polyhedron mapped onto a sphere or ellipsoid.
inline SurfaceGrid build_sphere_like(const Shape& shape, Polyhedron base, int refinements) {
  if (shape.kind != ShapeKind::sphere && shape.kind != ShapeKind::ellipsoid)
    throw InvalidArgument("build_sphere_like needs a sphere or ellipsoid");
  if (refinements < 0) throw InvalidArgument("refinements must be >= 0");
  SurfaceGrid grid = build_polyhedron(base);
  for (int r = 0; r < refinements; ++r) grid = refine_uniform(grid);
  // map the unit sphere onto the shape by axis scaling
  for (auto& v : grid.vertices) v = Eigen::Vector3d(shape.a * v.x(), shape.b * v.y(), shape.c * v.z());
  grid.shape = shape;
  detail::orient_outward(grid);
  grid.provenance = std::string(base == Polyhedron::octahedron ? "octahedron" : "icosahedron") +
                    " refined " + std::to_string(refinements) + "x on " + shape.describe();
  return grid;
}

/// Latitude-longitude triangulation of a sphere or ellipsoid with poles on the
/// x axis: n_rings circles of n_lon vertices each plus two poles. Ring
/// positions are equidistributed in arc length along the (a, (b+c)/2)
/// meridian, and odd rings are rotated by half a longitude step.
inline SurfaceGrid build_latlong(const Shape& shape, int n_lon, int n_rings) {
  if (shape.kind != ShapeKind::sphere && shape.kind != ShapeKind::ellipsoid)
    throw InvalidArgument("build_latlong needs a sphere or ellipsoid");
  if (n_lon < 3 || n_rings < 1) throw InvalidArgument("build_latlong: need n_lon >= 3, n_rings >= 1");
  const double a = shape.a, bm = 0.5 * (shape.b + shape.c);
  // tabulate meridian arc length s(phi), phi in [0, pi]
  const int samples = 20000;
  std::vector<double> arc(samples + 1, 0.0);
  auto speed = [&](double phi) { return std::hypot(a * std::sin(phi), bm * std::cos(phi)); };
  const double dphi = std::numbers::pi / samples;
  for (int i = 0; i < samples; ++i)
    arc[i + 1] = arc[i] + dphi / 6.0 * (speed(i * dphi) + 4.0 * speed((i + 0.5) * dphi) + speed((i + 1) * dphi));
  auto phi_at = [&](double s) {
    auto it = std::lower_bound(arc.begin(), arc.end(), s);
    int i = std::clamp(static_cast<int>(it - arc.begin()), 1, samples);
    double f = (s - arc[i - 1]) / (arc[i] - arc[i - 1]);
    return (i - 1 + f) * dphi;
  };

  SurfaceGrid grid;
  grid.shape = shape;
  grid.vertices.push_back(Eigen::Vector3d(a, 0, 0));
  for (int k = 0; k < n_rings; ++k) {
    const double phi = phi_at(arc.back() * (k + 1) / (n_rings + 1));
    const double shift = (k % 2) * std::numbers::pi / n_lon;
    for (int i = 0; i < n_lon; ++i) {
      const double th = 2.0 * std::numbers::pi * i / n_lon + shift;
      grid.vertices.push_back(Eigen::Vector3d(a * std::cos(phi), shape.b * std::sin(phi) * std::cos(th),
                                              shape.c * std::sin(phi) * std::sin(th)));
    }
  }
  grid.vertices.push_back(Eigen::Vector3d(-a, 0, 0));
  const int south = grid.num_vertices() - 1;
  auto ring = [&](int k, int i) { return 1 + k * n_lon + ((i % n_lon) + n_lon) % n_lon; };
  for (int i = 0; i < n_lon; ++i) grid.elements.push_back({0, ring(0, i), ring(0, i + 1)});
  for (int k = 0; k + 1 < n_rings; ++k) {
    // odd rings are rotated forward by half a step relative to even ones
    for (int i = 0; i < n_lon; ++i) {
      if (k % 2 == 0) {
        grid.elements.push_back({ring(k, i), ring(k, i + 1), ring(k + 1, i)});
        grid.elements.push_back({ring(k, i), ring(k + 1, i), ring(k + 1, i - 1)});
      } else {
        grid.elements.push_back({ring(k, i), ring(k, i + 1), ring(k + 1, i + 1)});
        grid.elements.push_back({ring(k, i), ring(k + 1, i + 1), ring(k + 1, i)});
      }
    }
  }
  for (int i = 0; i < n_lon; ++i) grid.elements.push_back({south, ring(n_rings - 1, i + 1), ring(n_rings - 1, i)});
  detail::orient_outward(grid);
  grid.provenance = "latlong n_lon=" + std::to_string(n_lon) + " n_rings=" + std::to_string(n_rings) +
                    " on " + shape.describe();
  return grid;
}

/// Structured torus grid with n_major cells around the axis and n_minor
/// around the tube.
inline SurfaceGrid build_torus(const Shape& shape, int n_major, int n_minor) {
  if (shape.kind != ShapeKind::torus) throw InvalidArgument("build_torus needs a torus shape");
  if (n_major < 3 || n_minor < 3) throw InvalidArgument("build_torus: need at least 3x3 cells");
  SurfaceGrid grid;
  grid.shape = shape;
  for (int i = 0; i < n_major; ++i) {
    const double u = 2.0 * std::numbers::pi * i / n_major;
    for (int k = 0; k < n_minor; ++k) {
      const double v = 2.0 * std::numbers::pi * k / n_minor;
      const double rr = shape.major + shape.minor * std::cos(v);
      grid.vertices.push_back(Eigen::Vector3d(rr * std::cos(u), rr * std::sin(u), shape.minor * std::sin(v)));
    }
  }
  auto id = [&](int i, int k) { return (i % n_major) * n_minor + (k % n_minor); };
  for (int i = 0; i < n_major; ++i)
    for (int k = 0; k < n_minor; ++k) {
      grid.elements.push_back({id(i, k), id(i + 1, k), id(i + 1, k + 1)});
      grid.elements.push_back({id(i, k), id(i + 1, k + 1), id(i, k + 1)});
    }
  detail::orient_outward(grid);
  grid.provenance = "torus grid n_major=" + std::to_string(n_major) + " n_minor=" + std::to_string(n_minor) +
                    " on " + shape.describe();
  return grid;
}

/// Requested (J, K) element/vertex counts for build_triangulation.
struct TriangulationTarget {
  int elements = 0;
  int vertices = 0;
};

namespace detail {

inline int nearest_divisor(int n, double target) {
  int best = 1;
  for (int d = 1; d <= n; ++d)
    if (n % d == 0 && std::abs(d - target) < std::abs(best - target)) best = d;
  return best;
}

}  // namespace detail

/// Triangulation of an analytic surface with (about) the requested counts.
/// The vertex count wins when the two targets disagree; the actual counts are
/// those of the returned grid and are recorded in its provenance.
inline SurfaceGrid build_triangulation(const Shape& shape, TriangulationTarget target) {
  int k = target.vertices;
  if (shape.kind == ShapeKind::torus) {
    if (k <= 0) k = target.elements / 2;
    if (k < 9) throw InvalidArgument("torus target too small");
    // equal spacing along the outer equator and around the tube
    const int n_minor = detail::nearest_divisor(k, std::sqrt(k * shape.minor / (shape.major + shape.minor)));
    return build_torus(shape, k / n_minor, n_minor);
  }
  if (shape.kind != ShapeKind::sphere && shape.kind != ShapeKind::ellipsoid)
    throw InvalidArgument("build_triangulation needs a surface shape");
  if (k <= 0) k = target.elements / 2 + 2;
  if (k < 6) throw InvalidArgument("sphere target too small");
  // refined polyhedra first when they hit the count exactly
  for (int r = 0; r < 8; ++r) {
    const int octa = 4 * (1 << (2 * r)) + 2;
    const int icosa = 10 * (1 << (2 * r)) + 2;
    if (octa == k) return build_sphere_like(shape, Polyhedron::octahedron, r);
    if (icosa == k) return build_sphere_like(shape, Polyhedron::icosahedron, r);
  }
  const int n_rings = std::max(1, detail::nearest_divisor(k - 2, std::sqrt((k - 2) / 2.0)));
  const int n_lon = (k - 2) / n_rings;
  if (n_lon < 3) return build_sphere_like(shape, Polyhedron::octahedron, 0);
  return build_latlong(shape, n_lon, n_rings);
}

// --- refinement ----------------------------------------------------------

/// Splits every segment in two / every triangle in four. New vertices are
/// midpoints, moved onto the grid's shape when reproject is set.
template <int Dim>
ReferenceGrid<Dim> refine_uniform(const ReferenceGrid<Dim>& grid, bool reproject) {
  ReferenceGrid<Dim> fine;
  fine.vertices = grid.vertices;
  fine.shape = grid.shape;
  fine.provenance = grid.provenance + " +refine";
  const bool snap = reproject && grid.shape.has_value();
  std::map<std::pair<int, int>, int> midpoint;
  auto mid = [&](int p, int q) {
    const auto key = std::minmax(p, q);
    auto it = midpoint.find(key);
    if (it != midpoint.end()) return it->second;
    WorldPoint<Dim> m = 0.5 * (grid.vertices[p] + grid.vertices[q]);
    if (snap) {
      if constexpr (Dim == 1)
        m = grid.shape->curve_midpoint(grid.vertices[p], grid.vertices[q]);
      else
        m = grid.shape->project(Eigen::Vector3d(m));
    }
    fine.vertices.push_back(m);
    const int id = static_cast<int>(fine.vertices.size()) - 1;
    midpoint.emplace(key, id);
    return id;
  };
  for (const auto& e : grid.elements) {
    if constexpr (Dim == 1) {
      const int m = mid(e[0], e[1]);
      fine.elements.push_back({e[0], m});
      fine.elements.push_back({m, e[1]});
    } else {
      const int m01 = mid(e[0], e[1]), m12 = mid(e[1], e[2]), m20 = mid(e[2], e[0]);
      fine.elements.push_back({e[0], m01, m20});
      fine.elements.push_back({m01, e[1], m12});
      fine.elements.push_back({m20, m12, e[2]});
      fine.elements.push_back({m01, m12, m20});
    }
  }
  return fine;
}

// --- OFF-style I/O -----------------------------------------------------------
//
//   OFF
//   <vertices> <elements> 0
//   x y z                     (z = 0 for curves)
//   2 i j  |  3 i j k         (segments | triangles)
//
// Lines starting with '#' are comments.

template <int Dim>
void write_off(std::ostream& os, const ReferenceGrid<Dim>& grid) {
  os << "OFF\n";
  if (!grid.provenance.empty()) os << "# " << grid.provenance << "\n";
  os << grid.num_vertices() << ' ' << grid.num_elements() << " 0\n";
  os << std::setprecision(17);
  for (const auto& v : grid.vertices) {
    os << v(0) << ' ' << v(1) << ' ' << (Dim == 2 ? v(2) : 0.0) << '\n';
  }
  for (const auto& e : grid.elements) {
    os << Dim + 1;
    for (int v : e) os << ' ' << v;
    os << '\n';
  }
}

template <int Dim>
ReferenceGrid<Dim> read_off(std::istream& is) {
  std::vector<std::string> lines;
  std::vector<int> numbers;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto pos = line.find_first_not_of(" \t\r");
    if (pos == std::string::npos || line[pos] == '#') continue;
    lines.push_back(line);
    numbers.push_back(lineno);
  }
  auto fail = [&](std::size_t idx, const std::string& msg) -> ParseError {
    const int ln = idx < numbers.size() ? numbers[idx] : lineno;
    return ParseError("OFF line " + std::to_string(ln) + ": " + msg);
  };
  if (lines.empty() || lines[0].substr(lines[0].find_first_not_of(" \t"), 3) != "OFF")
    throw fail(0, "missing OFF header");
  if (lines.size() < 2) throw fail(1, "missing counts line");
  long nv = -1, ne = -1;
  {
    std::istringstream ss(lines[1]);
    if (!(ss >> nv >> ne) || nv <= 0 || ne <= 0) throw fail(1, "bad counts");
  }
  if (lines.size() < static_cast<std::size_t>(2 + nv + ne)) throw fail(lines.size(), "file truncated");
  ReferenceGrid<Dim> grid;
  for (long i = 0; i < nv; ++i) {
    std::istringstream ss(lines[2 + i]);
    double x, y, z;
    if (!(ss >> x >> y >> z)) throw fail(2 + i, "bad vertex line");
    if constexpr (Dim == 1)
      grid.vertices.push_back(WorldPoint<1>(x, y));
    else
      grid.vertices.push_back(WorldPoint<2>(x, y, z));
  }
  for (long i = 0; i < ne; ++i) {
    const std::size_t idx = 2 + nv + i;
    std::istringstream ss(lines[idx]);
    int arity;
    if (!(ss >> arity) || arity != Dim + 1)
      throw fail(idx, "element arity must be " + std::to_string(Dim + 1));
    typename ReferenceGrid<Dim>::Element e;
    for (int k = 0; k <= Dim; ++k) {
      if (!(ss >> e[k]) || e[k] < 0 || e[k] >= nv) throw fail(idx, "bad vertex index");
    }
    grid.elements.push_back(e);
  }
  grid.provenance = "OFF file";
  return grid;
}

template <int Dim>
ReferenceGrid<Dim> read_off_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open grid file '" + path + "'");
  auto grid = read_off<Dim>(in);
  grid.provenance = "OFF file " + path;
  return grid;
}

}  // namespace geomflow
