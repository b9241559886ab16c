#include "fusioncrf/kdtree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fusioncrf/error.hpp"

namespace fusioncrf {

KdTree::KdTree(Eigen::Matrix3Xd points, int leaf_size) : points_(std::move(points)), leaf_size_(leaf_size) {
  require(leaf_size_ >= 1, Errc::invalid_argument, "kd-tree leaf size must be positive");
  require(points_.allFinite(), Errc::invalid_argument, "kd-tree points must be finite");
  order_.resize(static_cast<std::size_t>(points_.cols()));
  std::iota(order_.begin(), order_.end(), 0);
  if (!order_.empty()) build(0, static_cast<int>(order_.size()));
}

int KdTree::build(int begin, int end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end, -1, -1, -1, 0.0});
  if (end - begin <= leaf_size_) return id;

  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (int i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_.col(order_[i]));
    hi = hi.cwiseMax(points_.col(order_[i]));
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] <= lo[axis]) return id;  // all coincident

  const int mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) { return points_(axis, a) < points_(axis, b); });
  const double split = points_(axis, order_[mid]);
  const int left = build(begin, mid);
  const int right = build(mid, end);
  Node& n = nodes_[static_cast<std::size_t>(id)];
  n.axis = axis;
  n.split = split;
  n.left = left;
  n.right = right;
  return id;
}

std::vector<int> KdTree::radius_search(const Eigen::Vector3d& query, double radius) const {
  std::vector<int> out;
  radius_search(query, radius, out);
  return out;
}

void KdTree::radius_search(const Eigen::Vector3d& query, double radius, std::vector<int>& out) const {
  out.clear();
  if (nodes_.empty() || radius < 0.0) return;
  radius_rec(0, query, radius * radius, out);
  std::sort(out.begin(), out.end());
}

void KdTree::radius_rec(int node, const Eigen::Vector3d& q, double r2, std::vector<int>& out) const {
  const Node& n = nodes_[static_cast<std::size_t>(node)];
  if (n.axis < 0) {
    for (int i = n.begin; i < n.end; ++i) {
      const int idx = order_[static_cast<std::size_t>(i)];
      if ((points_.col(idx) - q).squaredNorm() <= r2) out.push_back(idx);
    }
    return;
  }
  // Left holds coordinates <= split, right holds >= split.
  const double d = q[n.axis] - n.split;
  if (d <= 0.0 || d * d <= r2) radius_rec(n.left, q, r2, out);
  if (d >= 0.0 || d * d <= r2) radius_rec(n.right, q, r2, out);
}

std::pair<int, double> KdTree::nearest(const Eigen::Vector3d& query) const {
  int best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  if (!nodes_.empty()) nearest_rec(0, query, best, best_d2);
  return {best, best < 0 ? best_d2 : std::sqrt(best_d2)};
}

void KdTree::nearest_rec(int node, const Eigen::Vector3d& q, int& best, double& best_d2) const {
  const Node& n = nodes_[static_cast<std::size_t>(node)];
  if (n.axis < 0) {
    for (int i = n.begin; i < n.end; ++i) {
      const int idx = order_[static_cast<std::size_t>(i)];
      const double d2 = (points_.col(idx) - q).squaredNorm();
      if (d2 < best_d2 || (d2 == best_d2 && idx < best)) {
        best = idx;
        best_d2 = d2;
      }
    }
    return;
  }
  const double d = q[n.axis] - n.split;
  const int first = d <= 0.0 ? n.left : n.right;
  const int second = d <= 0.0 ? n.right : n.left;
  nearest_rec(first, q, best, best_d2);
  if (d * d <= best_d2) nearest_rec(second, q, best, best_d2);
}

}  // namespace fusioncrf
