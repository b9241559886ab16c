#pragma once

#include <Eigen/Core>
#include <utility>
#include <vector>

#include "fusioncrf/error.hpp"
#include "fusioncrf/lidar.hpp"
#include "fusioncrf/table.hpp"

namespace fusioncrf {

struct SupervoxelConfig {
  double voxel_resolution = 0.1;
  double seed_resolution = 0.2;
  double lambda_spatial = 1.0;
  int iterations = 10;

  void validate() const;
};

struct Supervoxel {
  int id = 0;
  std::vector<int> member_points;
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  Eigen::VectorXd mean_probs;
  double mean_normal_angle = 0.0;  // radians in [0, pi/2]
};

struct Segmentation {
  std::vector<Supervoxel> segments;                 // segments[i].id == i
  std::vector<std::pair<int, int>> adjacency;       // (a, b), a < b, sorted
  std::vector<int> point_segment;                   // per input point
};

/// Sum over bins of (h - g)^2 / (h + g); empty bins are skipped.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar chi_squared(const Eigen::MatrixBase<DerivedA>& h, const Eigen::MatrixBase<DerivedB>& g) {
  using Scalar = typename DerivedA::Scalar;
  require(h.size() == g.size(), Errc::dimension_mismatch, "histograms differ in length");
  Scalar sum(0);
  for (Eigen::Index i = 0; i < h.size(); ++i) {
    const Scalar s = h(i) + g(i);
    if (s > Scalar(0)) {
      const Scalar d = h(i) - g(i);
      sum += d * d / s;
    }
  }
  return sum;
}

/// Supervoxel clustering on D = lambda * |c_voxel - c_segment| + chi2(h_voxel, h_segment).
/// `normal_angles` holds one angle per point (acos f8); when empty each segment
/// takes the angle of its own principal direction.
Segmentation cluster(const PointCloud& cloud, const ProbabilityTable& point_probs, const SupervoxelConfig& cfg,
                     const Eigen::VectorXd& normal_angles = {});

/// Arithmetic mean of the members' rows, renormalized.
Eigen::VectorXd aggregate_probabilities(const std::vector<int>& members, const Eigen::MatrixXd& point_probs);
Eigen::VectorXd aggregate_probabilities(const Supervoxel& segment, const ProbabilityTable& point_probs);

/// Row s of the result belongs to superpixel id s; every id in [0, max id] must own pixels.
ProbabilityTable aggregate_superpixels(const ProbabilityImage& pixel_probs, const LabelImage& superpixels);

}  // namespace fusioncrf
