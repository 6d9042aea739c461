#pragma once

#include <Eigen/Dense>

#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "geomflow/geometry.hpp"

namespace geomflow {

namespace detail {

inline std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Dense sampling of a closed curve: `samples` points per element, the first
/// point repeated at the end.
inline void write_polyline(std::ostream& os, const ParametrizedGrid<1>& grid, int samples = 10, double time = 0.0) {
  if (samples < 1) throw InvalidArgument("write_polyline: samples must be >= 1");
  os << "# polyline t=" << detail::fmt17(time) << " elements=" << grid.num_elements()
     << " points=" << grid.num_elements() * samples + 1 << "\n";
  for (int j = 0; j < grid.num_elements(); ++j)
    for (int s = 0; s < samples; ++s) {
      const auto p = grid.evaluate(j, RefPoint<1>(double(s) / samples));
      os << detail::fmt17(p.x()) << ' ' << detail::fmt17(p.y()) << '\n';
    }
  const auto p0 = grid.evaluate(0, RefPoint<1>(0.0));
  os << detail::fmt17(p0.x()) << ' ' << detail::fmt17(p0.y()) << '\n';
}

/// Legacy VTK polydata: every curved triangle split into 4^depth flat ones,
/// with the area of the parent element and its index as cell data.
inline void write_vtk(std::ostream& os, const ParametrizedGrid<2>& grid, const QuadratureRule<2>& area_rule,
                      int depth = -1, double time = 0.0) {
  if (depth < 0) depth = grid.degree() + 1;
  if (depth > 8) throw InvalidArgument("write_vtk: subdivision depth above 8");
  const int n = 1 << depth;  // segments per reference edge
  const int per_pts = (n + 1) * (n + 2) / 2;
  const int per_tri = n * n;
  const int ne = grid.num_elements();
  const auto areas = element_measures(grid, area_rule);

  auto local = [n](int a, int b) {  // index of lattice point (a, b), a + b <= n
    return a * (n + 1) - a * (a - 1) / 2 + b;
  };

  os << "# vtk DataFile Version 3.0\n";
  os << "geomflow surface t=" << detail::fmt17(time) << "\n";
  os << "ASCII\nDATASET POLYDATA\n";
  os << "POINTS " << ne * per_pts << " double\n";
  for (int j = 0; j < ne; ++j)
    for (int a = 0; a <= n; ++a)
      for (int b = 0; a + b <= n; ++b) {
        const auto p = grid.evaluate(j, RefPoint<2>(double(a) / n, double(b) / n));
        os << detail::fmt17(p.x()) << ' ' << detail::fmt17(p.y()) << ' ' << detail::fmt17(p.z()) << '\n';
      }
  os << "POLYGONS " << ne * per_tri << ' ' << 4 * ne * per_tri << '\n';
  for (int j = 0; j < ne; ++j) {
    const int base = j * per_pts;
    for (int a = 0; a < n; ++a)
      for (int b = 0; a + b < n; ++b) {
        os << "3 " << base + local(a, b) << ' ' << base + local(a + 1, b) << ' ' << base + local(a, b + 1) << '\n';
        if (a + b + 1 < n)
          os << "3 " << base + local(a + 1, b) << ' ' << base + local(a + 1, b + 1) << ' ' << base + local(a, b + 1)
             << '\n';
      }
  }
  os << "CELL_DATA " << ne * per_tri << '\n';
  os << "SCALARS element_area double 1\nLOOKUP_TABLE default\n";
  for (int j = 0; j < ne; ++j)
    for (int t = 0; t < per_tri; ++t) os << detail::fmt17(areas[j]) << '\n';
  os << "SCALARS element_id int 1\nLOOKUP_TABLE default\n";
  for (int j = 0; j < ne; ++j)
    for (int t = 0; t < per_tri; ++t) os << j << '\n';
}

}  // namespace geomflow
