#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <sstream>
#include <string>

#include "geomflow/error.hpp"

namespace geomflow {

enum class ShapeKind { circle, ellipse, flower, sphere, ellipsoid, torus };

/// Analytic closed curve or surface centered at the origin. Used to place
/// reference vertices and Lagrange nodes, and to reproject refined vertices.
///
/// The flower curve is r(theta) = 1 + amplitude * cos(petals * theta).
struct Shape {
  ShapeKind kind = ShapeKind::circle;
  double a = 1.0, b = 1.0, c = 1.0;  // semi-axes; radius for circle/sphere
  double major = 2.0, minor = 1.0;   // torus radii
  double amplitude = 0.2;
  int petals = 5;

  static Shape circle(double r = 1.0) { return {ShapeKind::circle, r, r, r}; }
  static Shape ellipse(double a, double b) { return {ShapeKind::ellipse, a, b, 1.0}; }
  static Shape flower(double amplitude = 0.2, int petals = 5) {
    Shape s{ShapeKind::flower};
    s.amplitude = amplitude;
    s.petals = petals;
    return s;
  }
  static Shape sphere(double r = 1.0) { return {ShapeKind::sphere, r, r, r}; }
  static Shape ellipsoid(double a, double b, double c) { return {ShapeKind::ellipsoid, a, b, c}; }
  static Shape torus(double major, double minor) {
    Shape s{ShapeKind::torus};
    s.major = major;
    s.minor = minor;
    return s;
  }

  int dim() const {
    return (kind == ShapeKind::circle || kind == ShapeKind::ellipse || kind == ShapeKind::flower) ? 1 : 2;
  }

  std::string describe() const {
    std::ostringstream os;
    os.precision(17);
    switch (kind) {
      case ShapeKind::circle: os << "circle(r=" << a << ")"; break;
      case ShapeKind::ellipse: os << "ellipse(a=" << a << ",b=" << b << ")"; break;
      case ShapeKind::flower:
        os << "flower(r=1+" << amplitude << "*cos(" << petals << "*theta))";
        break;
      case ShapeKind::sphere: os << "sphere(r=" << a << ")"; break;
      case ShapeKind::ellipsoid: os << "ellipsoid(a=" << a << ",b=" << b << ",c=" << c << ")"; break;
      case ShapeKind::torus: os << "torus(R=" << major << ",r=" << minor << ")"; break;
    }
    return os.str();
  }

  double flower_radius(double theta) const { return 1.0 + amplitude * std::cos(petals * theta); }

  // --- curves -----------------------------------------------------------

  Eigen::Vector2d curve_point(double theta) const {
    switch (kind) {
      case ShapeKind::circle: return a * Eigen::Vector2d(std::cos(theta), std::sin(theta));
      case ShapeKind::ellipse: return {a * std::cos(theta), b * std::sin(theta)};
      case ShapeKind::flower:
        return flower_radius(theta) * Eigen::Vector2d(std::cos(theta), std::sin(theta));
      default: throw InvalidArgument("curve_point on a surface shape");
    }
  }

  /// Inverse of curve_point for points on (or radially near) the curve.
  double curve_param(const Eigen::Vector2d& p) const {
    if (kind == ShapeKind::ellipse) return std::atan2(p.y() / b, p.x() / a);
    return std::atan2(p.y(), p.x());
  }

  /// Curve point halfway in parameter between two curve points (shorter arc).
  Eigen::Vector2d curve_midpoint(const Eigen::Vector2d& p, const Eigen::Vector2d& q) const {
    double t0 = curve_param(p), t1 = curve_param(q);
    double dt = std::remainder(t1 - t0, 2.0 * std::numbers::pi);
    return curve_point(t0 + 0.5 * dt);
  }

  Eigen::Vector2d project(const Eigen::Vector2d& p) const {
    const double n = p.norm();
    if (!(n > 0.0)) throw InvalidArgument("cannot project the origin onto a curve");
    switch (kind) {
      case ShapeKind::circle: return p * (a / n);
      case ShapeKind::ellipse:
        return p / std::sqrt(p.x() * p.x() / (a * a) + p.y() * p.y() / (b * b));
      case ShapeKind::flower: return p * (flower_radius(std::atan2(p.y(), p.x())) / n);
      default: throw InvalidArgument("2D projection onto a surface shape");
    }
  }

  // --- surfaces ---------------------------------------------------------

  Eigen::Vector3d project(const Eigen::Vector3d& p) const {
    switch (kind) {
      case ShapeKind::sphere: {
        const double n = p.norm();
        if (!(n > 0.0)) throw InvalidArgument("cannot project the origin onto a sphere");
        return p * (a / n);
      }
      case ShapeKind::ellipsoid: {
        const double s = p.x() * p.x() / (a * a) + p.y() * p.y() / (b * b) + p.z() * p.z() / (c * c);
        if (!(s > 0.0)) throw InvalidArgument("cannot project the origin onto an ellipsoid");
        return p / std::sqrt(s);
      }
      case ShapeKind::torus: {
        Eigen::Vector3d ring(p.x(), p.y(), 0.0);
        const double rn = ring.norm();
        if (!(rn > 0.0)) throw InvalidArgument("cannot project the torus axis onto a torus");
        const Eigen::Vector3d center = ring * (major / rn);
        const Eigen::Vector3d off = p - center;
        if (!(off.norm() > 0.0)) throw InvalidArgument("cannot project the torus core circle");
        return center + off * (minor / off.norm());
      }
      default: throw InvalidArgument("3D projection onto a curve shape");
    }
  }

  /// Implicit function that vanishes on the shape (used by residual checks).
  double level_set(const Eigen::Vector3d& p) const {
    switch (kind) {
      case ShapeKind::circle: return std::hypot(p.x(), p.y()) - a;
      case ShapeKind::ellipse: return p.x() * p.x() / (a * a) + p.y() * p.y() / (b * b) - 1.0;
      case ShapeKind::flower:
        return std::hypot(p.x(), p.y()) - flower_radius(std::atan2(p.y(), p.x()));
      case ShapeKind::sphere: return p.norm() - a;
      case ShapeKind::ellipsoid:
        return p.x() * p.x() / (a * a) + p.y() * p.y() / (b * b) + p.z() * p.z() / (c * c) - 1.0;
      case ShapeKind::torus: {
        const double q = std::hypot(p.x(), p.y()) - major;
        return q * q + p.z() * p.z() - minor * minor;
      }
    }
    return 0.0;
  }
};

}  // namespace geomflow
