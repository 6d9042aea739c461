#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <utility>
#include <vector>

#include "geomflow/error.hpp"
#include "geomflow/geometry.hpp"

namespace geomflow {

/// Max over all quadrature points of | |F(xi)| - r |: distance of the grid to
/// the origin-centered circle or sphere of radius r.
template <int Dim>
double linf_error_exact(const ParametrizedGrid<Dim>& grid, double radius, const QuadratureRule<Dim>& rule) {
  if (!(radius > 0.0)) throw InvalidArgument("linf_error_exact: radius must be positive");
  double err = 0.0;
  FrameTable<Dim>(grid, rule).for_each([&](int, int, const ElementFrame<Dim>& f) {
    err = std::max(err, std::abs(f.position.norm() - radius));
  });
  return err;
}

// --- kd-tree ----------------------------------------------------------------

/// Static kd-tree over a point set in R^W for k-nearest-neighbor queries.
template <int W>
class KdTree {
 public:
  using Point = Eigen::Matrix<double, W, 1>;

  KdTree() = default;
  explicit KdTree(std::vector<Point> points) : points_(std::move(points)) {
    index_.resize(points_.size());
    std::iota(index_.begin(), index_.end(), 0);
    nodes_.reserve(2 * points_.size() / kLeaf + 2);
    if (!points_.empty()) build(0, static_cast<int>(points_.size()));
  }

  int size() const { return static_cast<int>(points_.size()); }

  /// Indices of all points within distance r of p, ascending.
  std::vector<int> within(const Point& p, double r) const {
    std::vector<int> out;
    if (!nodes_.empty()) collect(0, p, r * r, out);
    std::sort(out.begin(), out.end());
    return out;
  }
  const std::vector<Point>& points() const { return points_; }

  /// Indices of the k nearest points, closest first. Ties are broken by the
  /// smaller index so results are deterministic.
  std::vector<int> knn(const Point& p, int k) const {
    if (k < 1) throw InvalidArgument("knn: k must be >= 1");
    k = std::min(k, size());
    std::priority_queue<std::pair<double, int>> heap;  // max-heap on (d2, index)
    if (!nodes_.empty()) search(0, p, k, heap);
    std::vector<int> out(heap.size());
    for (int i = static_cast<int>(heap.size()) - 1; i >= 0; --i) {
      out[i] = heap.top().second;
      heap.pop();
    }
    return out;
  }

 private:
  static constexpr int kLeaf = 8;

  struct Node {
    int begin, end;        // range in index_
    int axis = -1;         // -1 for leaves
    double split = 0.0;
    int left = -1, right = -1;
    Point lo, hi;          // bounding box
  };

  int build(int begin, int end) {
    Node node;
    node.begin = begin;
    node.end = end;
    node.lo = node.hi = points_[index_[begin]];
    for (int i = begin; i < end; ++i) {
      node.lo = node.lo.cwiseMin(points_[index_[i]]);
      node.hi = node.hi.cwiseMax(points_[index_[i]]);
    }
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    if (end - begin > kLeaf) {
      int axis;
      (node.hi - node.lo).maxCoeff(&axis);
      const int mid = (begin + end) / 2;
      std::nth_element(index_.begin() + begin, index_.begin() + mid, index_.begin() + end,
                       [&](int a, int b) { return points_[a](axis) < points_[b](axis); });
      nodes_[id].axis = axis;
      nodes_[id].split = points_[index_[mid]](axis);
      const int l = build(begin, mid);
      const int r = build(mid, end);
      nodes_[id].left = l;
      nodes_[id].right = r;
    }
    return id;
  }

  static double box_dist2(const Node& n, const Point& p) {
    return (p - p.cwiseMax(n.lo).cwiseMin(n.hi)).squaredNorm();
  }

  void search(int id, const Point& p, int k, std::priority_queue<std::pair<double, int>>& heap) const {
    const Node& n = nodes_[id];
    if (static_cast<int>(heap.size()) == k && box_dist2(n, p) > heap.top().first) return;
    if (n.axis < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        const int idx = index_[i];
        const std::pair<double, int> cand((points_[idx] - p).squaredNorm(), idx);
        if (static_cast<int>(heap.size()) < k) {
          heap.push(cand);
        } else if (cand < heap.top()) {
          heap.pop();
          heap.push(cand);
        }
      }
      return;
    }
    const bool go_left = p(n.axis) < n.split;
    search(go_left ? n.left : n.right, p, k, heap);
    search(go_left ? n.right : n.left, p, k, heap);
  }

  void collect(int id, const Point& p, double r2, std::vector<int>& out) const {
    const Node& n = nodes_[id];
    if (box_dist2(n, p) > r2) return;
    if (n.axis < 0) {
      for (int i = n.begin; i < n.end; ++i)
        if ((points_[index_[i]] - p).squaredNorm() <= r2) out.push_back(index_[i]);
      return;
    }
    collect(n.left, p, r2, out);
    collect(n.right, p, r2, out);
  }

  std::vector<Point> points_;
  std::vector<int> index_;
  std::vector<Node> nodes_;
};

/// Images of the reference barycenters of all elements, with a kd-tree, and
/// for each element a radius bounding its image around that center.
template <int Dim>
struct CenterCloud {
  KdTree<Dim + 1> tree;
  std::vector<double> radius;
  double max_radius = 0.0;

  CenterCloud() = default;
  explicit CenterCloud(const ParametrizedGrid<Dim>& grid) {
    const RefPoint<Dim> center = RefPoint<Dim>::Constant(1.0 / (Dim + 1));
    const auto samples = lattice(std::max(8, 4 * grid.degree()));
    std::vector<WorldPoint<Dim>> pts;
    pts.reserve(grid.num_elements());
    radius.reserve(grid.num_elements());
    for (int j = 0; j < grid.num_elements(); ++j) {
      const auto c = grid.evaluate(j, center);
      double r = 0.0;
      for (const auto& x : samples) r = std::max(r, (grid.evaluate(j, x) - c).norm());
      // sampling misses at most a fraction of the spacing on smooth images
      radius.push_back(1.25 * r);
      max_radius = std::max(max_radius, radius.back());
      pts.push_back(c);
    }
    tree = KdTree<Dim + 1>(std::move(pts));
  }

  const std::vector<WorldPoint<Dim>>& points() const { return tree.points(); }

 private:
  static std::vector<RefPoint<Dim>> lattice(int n) {
    std::vector<RefPoint<Dim>> out;
    if constexpr (Dim == 1) {
      for (int a = 0; a <= n; ++a) out.emplace_back(double(a) / n);
    } else {
      for (int a = 0; a <= n; ++a)
        for (int b = 0; a + b <= n; ++b) out.emplace_back(double(a) / n, double(b) / n);
    }
    return out;
  }
};

// --- closest point ------------------------------------------------------------

template <int Dim>
struct ClosestPointResult {
  int element = -1;
  RefPoint<Dim> x;
  double dist2 = std::numeric_limits<double>::infinity();
  bool converged = false;
  int iterations = 0;
};

struct LevenbergMarquardtOptions {
  double lambda0 = 1e-3;
  double step_tol = 1e-12;
  double grad_tol = 1e-12;
  int max_iter = 100;
};

/// Euclidean projection onto the reference simplex.
template <int Dim>
RefPoint<Dim> project_to_simplex(const RefPoint<Dim>& x) {
  if constexpr (Dim == 1) {
    return RefPoint<1>(std::clamp(x(0), 0.0, 1.0));
  } else {
    if (x(0) >= 0.0 && x(1) >= 0.0 && x(0) + x(1) <= 1.0) return x;
    auto on_segment = [&](const RefPoint<2>& a, const RefPoint<2>& b) {
      const RefPoint<2> d = b - a;
      const double t = std::clamp((x - a).dot(d) / d.squaredNorm(), 0.0, 1.0);
      return RefPoint<2>(a + t * d);
    };
    const RefPoint<2> v0(0, 0), v1(1, 0), v2(0, 1);
    RefPoint<2> best = on_segment(v0, v1);
    for (const auto& c : {on_segment(v1, v2), on_segment(v2, v0)})
      if ((c - x).squaredNorm() < (best - x).squaredNorm()) best = c;
    // clean rounding so the constraints hold exactly
    best = best.cwiseMax(0.0);
    if (best.sum() > 1.0) best /= best.sum();
    return best;
  }
}

namespace detail {

/// Orthonormal basis of the directions in which x may move: the constraints
/// that are active at x and blocking the descent direction -g are frozen.
template <int Dim>
Eigen::MatrixXd free_directions(const RefPoint<Dim>& x, const RefPoint<Dim>& g) {
  constexpr double kOnBoundary = 1e-14;
  std::vector<RefPoint<Dim>> normals;  // outward
  for (int i = 0; i < Dim; ++i)
    if (x(i) <= kOnBoundary) normals.push_back(-RefPoint<Dim>::Unit(i));
  if (x.sum() >= 1.0 - kOnBoundary) normals.push_back(RefPoint<Dim>::Ones());
  Eigen::MatrixXd blocking(0, Dim);
  for (const auto& n : normals)
    if (-g.dot(n) > 0.0) {
      blocking.conservativeResize(blocking.rows() + 1, Eigen::NoChange);
      blocking.row(blocking.rows() - 1) = n.transpose();
    }
  if (blocking.rows() == 0) return Eigen::MatrixXd::Identity(Dim, Dim);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(blocking);
  if (lu.rank() >= Dim) return Eigen::MatrixXd(Dim, 0);
  Eigen::MatrixXd k = lu.kernel();
  return Eigen::HouseholderQR<Eigen::MatrixXd>(k).householderQ() * Eigen::MatrixXd::Identity(Dim, k.cols());
}

}  // namespace detail

/// Closest point on element j of a grid to p: minimizes |p - F_j(x)|^2 over
/// the reference simplex by Levenberg-Marquardt with projected steps.
template <int Dim>
ClosestPointResult<Dim> closest_point(const WorldPoint<Dim>& p, const ParametrizedGrid<Dim>& grid, int j,
                                      const LevenbergMarquardtOptions& opt = {}) {
  if (j < 0 || j >= grid.num_elements()) throw InvalidArgument("closest_point: element index out of range");
  const auto xl = grid.local_coords(j);
  const auto& basis = grid.basis();
  auto residual = [&](const RefPoint<Dim>& x) -> WorldPoint<Dim> { return xl * basis.eval(x) - p; };

  // start from the best of a few sample points
  std::vector<RefPoint<Dim>> starts;
  if constexpr (Dim == 1) {
    starts = {RefPoint<1>(0.5), RefPoint<1>(0.0), RefPoint<1>(1.0), RefPoint<1>(0.25), RefPoint<1>(0.75)};
  } else {
    starts = {RefPoint<2>(1.0 / 3, 1.0 / 3), RefPoint<2>(0, 0), RefPoint<2>(1, 0), RefPoint<2>(0, 1),
              RefPoint<2>(0.5, 0), RefPoint<2>(0.5, 0.5), RefPoint<2>(0, 0.5)};
  }
  ClosestPointResult<Dim> res;
  res.element = j;
  for (const auto& s : starts) {
    const double d2 = residual(s).squaredNorm();
    if (d2 < res.dist2) {
      res.dist2 = d2;
      res.x = s;
    }
  }

  double lambda = opt.lambda0;
  WorldPoint<Dim> r = residual(res.x);
  for (int it = 1; it <= opt.max_iter; ++it) {
    res.iterations = it;
    const Eigen::Matrix<double, Dim + 1, Dim> jac = xl * basis.grad(res.x);
    const RefPoint<Dim> g = jac.transpose() * r;
    // scale-free stationarity: the residual is (nearly) normal to the patch
    if (res.dist2 == 0.0 ||
        (res.x - project_to_simplex<Dim>(res.x - g)).norm() <= opt.grad_tol * jac.norm() * std::sqrt(res.dist2)) {
      res.converged = true;
      break;
    }
    const Eigen::MatrixXd z = detail::free_directions<Dim>(res.x, g);
    if (z.cols() == 0) {
      res.converged = true;
      break;
    }
    const Eigen::MatrixXd jtj = z.transpose() * (jac.transpose() * jac) * z;
    const Eigen::VectorXd gz = z.transpose() * g;
    bool accepted = false;
    while (lambda < 1e20) {
      Eigen::MatrixXd a = jtj;
      a.diagonal().array() += lambda * std::max(1.0, jtj.diagonal().maxCoeff());
      const RefPoint<Dim> trial = project_to_simplex<Dim>(res.x - z * a.ldlt().solve(gz));
      const WorldPoint<Dim> rt = residual(trial);
      const double step = (trial - res.x).norm();
      if (rt.squaredNorm() < res.dist2) {
        res.x = trial;
        res.dist2 = rt.squaredNorm();
        r = rt;
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
        if (step < opt.step_tol) res.converged = true;
        break;
      }
      if (step < opt.step_tol) {
        res.converged = true;
        break;
      }
      lambda *= 10.0;
    }
    if (res.converged || !accepted) {
      res.converged = res.converged || lambda >= 1e20;
      break;
    }
  }
  return res;
}

/// Distance from p to the grid, searching the elements whose centers are
/// among the k nearest. With certify set, every further element whose
/// bounding ball reaches closer than the k-NN answer is searched as well, so
/// elongated elements (pole fans) cannot hide the true closest point.
template <int Dim>
double dist_point_to_grid(const WorldPoint<Dim>& p, const ParametrizedGrid<Dim>& grid, const CenterCloud<Dim>& cloud,
                          int k, const LevenbergMarquardtOptions& opt = {}, bool certify = true) {
  double best = std::numeric_limits<double>::infinity();
  const auto near = cloud.tree.knn(p, k);
  for (int j : near) best = std::min(best, closest_point(p, grid, j, opt).dist2);
  if (!certify || cloud.radius.empty()) return std::sqrt(best);
  const double d = std::sqrt(best);
  for (int j : cloud.tree.within(p, d + cloud.max_radius)) {
    if (std::find(near.begin(), near.end(), j) != near.end()) continue;
    if ((cloud.points()[j] - p).norm() - cloud.radius[j] >= std::sqrt(best)) continue;
    best = std::min(best, closest_point(p, grid, j, opt).dist2);
  }
  return std::sqrt(best);
}

/// Brute-force reference: closest point over every element.
template <int Dim>
double dist_point_to_grid_brute(const WorldPoint<Dim>& p, const ParametrizedGrid<Dim>& grid,
                                const LevenbergMarquardtOptions& opt = {}) {
  double best = std::numeric_limits<double>::infinity();
  for (int j = 0; j < grid.num_elements(); ++j) best = std::min(best, closest_point(p, grid, j, opt).dist2);
  return std::sqrt(best);
}

enum class DistanceNorm { l1, l2, linf };

/// Projected distance of grid1 onto grid2: the quadrature norm over grid1 of
/// the pointwise distance to grid2 (L2 by default; L1 and Linf on request).
template <int Dim>
double projected_distance(const ParametrizedGrid<Dim>& grid1, const ParametrizedGrid<Dim>& grid2,
                          const QuadratureRule<Dim>& rule, int k = 8, DistanceNorm norm = DistanceNorm::l2) {
  if (!rule.positive_weights()) throw InvalidArgument("projected_distance needs positive weights");
  const CenterCloud<Dim> cloud(grid2);
  double acc = 0.0;
  FrameTable<Dim>(grid1, rule).for_each([&](int, int q, const ElementFrame<Dim>& f) {
    const double d = dist_point_to_grid(f.position, grid2, cloud, k);
    const double w = rule.weights[q] * f.measure;
    switch (norm) {
      case DistanceNorm::l1: acc += d * w; break;
      case DistanceNorm::l2: acc += d * d * w; break;
      case DistanceNorm::linf: acc = std::max(acc, d); break;
    }
  });
  return norm == DistanceNorm::l2 ? std::sqrt(acc) : acc;
}

template <int Dim>
double l2_projected_distance(const ParametrizedGrid<Dim>& grid1, const ParametrizedGrid<Dim>& grid2,
                             const QuadratureRule<Dim>& rule, int k = 8) {
  return projected_distance(grid1, grid2, rule, k, DistanceNorm::l2);
}

}  // namespace geomflow
