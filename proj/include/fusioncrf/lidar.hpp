#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <cstdint>

#include "fusioncrf/error.hpp"
#include "fusioncrf/kdtree.hpp"

namespace fusioncrf {

/// Lidar sweep: one column per point, intensity in [0, 1].
struct PointCloud {
  Eigen::Matrix3Xd points;
  Eigen::VectorXd intensity;
  Eigen::Vector3d sensor_origin = Eigen::Vector3d::Zero();

  Eigen::Index size() const noexcept { return points.cols(); }
  bool empty() const noexcept { return points.cols() == 0; }
  void validate() const;
};

struct NeighborhoodParams {
  int m_points = 60;                        // M
  double theta_h = 0.08 * 3.14159265358979323846 / 180.0;  // horizontal angular resolution, radians

  void validate() const;
};

struct RansacParams {
  double inlier_threshold_m = 0.10;
  int max_iterations = 500;
  std::uint64_t seed = 1;
};

struct GroundAlignment {
  PointCloud cloud;          // transformed copy
  Eigen::Vector4d plane;     // (n, d) in the input frame, |n| = 1, n pointing to +z after alignment
  Eigen::Isometry3d transform = Eigen::Isometry3d::Identity();  // input -> aligned
  int inliers = 0;
};

/// Maps the dominant RANSAC plane (refined by a least-squares refit over its
/// inliers) onto z = 0 with normal +z.
GroundAlignment align_ground_plane(const PointCloud& cloud, const RansacParams& params = {});

/// r = 2 |p|_xy sin(M theta_H / 4) for a point given relative to the sensor.
template <typename Derived>
typename Derived::Scalar adaptive_radius(const Eigen::MatrixBase<Derived>& point, const NeighborhoodParams& params) {
  using Scalar = typename Derived::Scalar;
  EIGEN_STATIC_ASSERT_VECTOR_SPECIFIC_SIZE(Derived, 3)
  using std::sin;
  using std::hypot;
  const Scalar xy = hypot(point.x(), point.y());
  return Scalar(2) * xy * sin(Scalar(params.m_points) * Scalar(params.theta_h) / Scalar(4));
}

/// f1 height, f2..f4 min/mean/variance of neighborhood z, f5 >= f6 >= f7 unit-sum
/// covariance eigenvalues, f8 = |principal eigenvector . z|, f9 intensity.
using PointFeatures = Eigen::Matrix<double, 9, 1>;
using FeatureMatrix = Eigen::MatrixXd;  // one column per point

PointFeatures point_features(const PointCloud& cloud, const KdTree& index, Eigen::Index point,
                             const NeighborhoodParams& params);
PointFeatures point_features(const PointCloud& cloud, Eigen::Index point, const NeighborhoodParams& params);

/// All points, split across `threads` workers.
FeatureMatrix extract_features(const PointCloud& cloud, const NeighborhoodParams& params, int threads = 1);

}  // namespace fusioncrf
