#pragma once

// Static 3-d tree for nearest-neighbour queries over a fixed point set.

#include <Eigen/Dense>

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

namespace sl4slam {

class KdTree3 {
 public:
  explicit KdTree3(const std::vector<Eigen::Vector3d>& points) : points_(points), index_(points.size()) {
    std::iota(index_.begin(), index_.end(), size_t{0});
    build(0, index_.size(), 0);
  }

  bool empty() const { return points_.empty(); }

  /// Squared distance to the nearest stored point (infinity when empty).
  double nearest_squared(const Eigen::Vector3d& q) const {
    double best = std::numeric_limits<double>::infinity();
    search(0, index_.size(), 0, q, best);
    return best;
  }

 private:
  // Nodes are implicit: the median of [lo, hi) is the split point.
  void build(size_t lo, size_t hi, int axis) {
    if (hi - lo <= 1) return;
    const size_t mid = lo + (hi - lo) / 2;
    std::nth_element(index_.begin() + static_cast<std::ptrdiff_t>(lo),
                     index_.begin() + static_cast<std::ptrdiff_t>(mid),
                     index_.begin() + static_cast<std::ptrdiff_t>(hi),
                     [&](size_t a, size_t b) { return points_[a](axis) < points_[b](axis); });
    build(lo, mid, (axis + 1) % 3);
    build(mid + 1, hi, (axis + 1) % 3);
  }

  void search(size_t lo, size_t hi, int axis, const Eigen::Vector3d& q, double& best) const {
    if (lo >= hi) return;
    const size_t mid = lo + (hi - lo) / 2;
    const Eigen::Vector3d& p = points_[index_[mid]];
    best = std::min(best, (p - q).squaredNorm());
    const double diff = q(axis) - p(axis);
    const int next = (axis + 1) % 3;
    if (diff < 0) {
      search(lo, mid, next, q, best);
      if (diff * diff < best) search(mid + 1, hi, next, q, best);
    } else {
      search(mid + 1, hi, next, q, best);
      if (diff * diff < best) search(lo, mid, next, q, best);
    }
  }

  std::vector<Eigen::Vector3d> points_;
  std::vector<size_t> index_;
};

}  // namespace sl4slam
