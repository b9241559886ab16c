#pragma once

#include <Eigen/Core>
#include <utility>
#include <vector>

namespace fusioncrf {

/// Static 3D kd-tree over a column-major point matrix. The tree keeps its own
/// copy of the coordinates, so the source may go away after construction.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(Eigen::Matrix3Xd points, int leaf_size = 12);

  Eigen::Index size() const noexcept { return points_.cols(); }
  const Eigen::Matrix3Xd& points() const noexcept { return points_; }

  /// Indices with |p - query| <= radius, ascending.
  std::vector<int> radius_search(const Eigen::Vector3d& query, double radius) const;
  void radius_search(const Eigen::Vector3d& query, double radius, std::vector<int>& out) const;

  /// (index, distance) of the closest point; ties go to the lower index.
  /// Returns (-1, inf) on an empty tree.
  std::pair<int, double> nearest(const Eigen::Vector3d& query) const;

 private:
  struct Node {
    int begin = 0, end = 0;  // range into order_
    int left = -1, right = -1;
    int axis = -1;  // -1 for leaves
    double split = 0.0;
  };

  int build(int begin, int end);
  void radius_rec(int node, const Eigen::Vector3d& q, double r2, std::vector<int>& out) const;
  void nearest_rec(int node, const Eigen::Vector3d& q, int& best, double& best_d2) const;

  Eigen::Matrix3Xd points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int leaf_size_ = 12;
};

}  // namespace fusioncrf
