#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <optional>
#include <vector>

#include "fusioncrf/lidar.hpp"
#include "fusioncrf/potentials.hpp"
#include "fusioncrf/segmentation.hpp"
#include "fusioncrf/table.hpp"

namespace fusioncrf {

/// Pinhole camera with Brown-Conrady distortion (k1, k2, k3 radial; p1, p2 tangential).
struct CameraModel {
  int width = 0;
  int height = 0;
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  double k1 = 0.0, k2 = 0.0, k3 = 0.0, p1 = 0.0, p2 = 0.0;
  Eigen::Isometry3d lidar_to_camera = Eigen::Isometry3d::Identity();

  void validate() const;
};

/// Localization sample: pose maps sensor coordinates into the world.
struct NavSample {
  Eigen::Isometry3d pose = Eigen::Isometry3d::Identity();
  Eigen::Matrix<double, 6, 1> covariance_diag = Eigen::Matrix<double, 6, 1>::Zero();  // m^2 (xyz), rad^2 (rpy)
  double timestamp = 0.0;

  void validate() const;
};

struct OverlapEdge {
  int superpixel_id = 0;
  int supervoxel_id = 0;
  int pixel_count = 0;             // omega
  double normalized_weight = 0.0;  // omega / max omega of the supervoxel
};

struct TemporalLink {
  int current_id = 0;
  int previous_id = 0;
  double distance_m = 0.0;
  double kernel = 0.0;
};

/// Rounded pixel (x, y) per point; absent behind the camera or outside the image.
std::vector<std::optional<Eigen::Vector2i>> project_points(const Eigen::Matrix3Xd& points, const CameraModel& cam);

/// Omega counts projected member points per superpixel. Pixels with negative
/// ids are ignored. Sorted by (supervoxel, superpixel).
std::vector<OverlapEdge> crossmodal_edges(const PointCloud& cloud, const std::vector<Supervoxel>& supervoxels,
                                          const LabelImage& superpixels, const CameraModel& cam);

/// Previous centroids mapped by pose_curr^-1 * pose_prev; each links to its
/// nearest current centroid within `gate_m`. Sorted by previous id.
std::vector<TemporalLink> temporal_edges(const std::vector<Supervoxel>& current, const std::vector<Supervoxel>& previous,
                                         const NavSample& nav_prev, const NavSample& nav_curr, double gate_m = 1.0,
                                         const KernelParams& kernels = {});

/// Mean of the twelve covariance-diagonal entries of both samples.
double mean_localization_variance(const NavSample& a, const NavSample& b);

}  // namespace fusioncrf
