#include "fusioncrf/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "fusioncrf/kdtree.hpp"

namespace fusioncrf {

void CameraModel::validate() const {
  require(width > 0 && height > 0, Errc::invalid_argument, "camera image size must be positive");
  require(fx > 0.0 && fy > 0.0, Errc::invalid_argument, "focal lengths must be positive");
  require(std::isfinite(cx) && std::isfinite(cy) && std::isfinite(k1) && std::isfinite(k2) && std::isfinite(k3) &&
              std::isfinite(p1) && std::isfinite(p2) && lidar_to_camera.matrix().allFinite(),
          Errc::invalid_argument, "camera parameters must be finite");
}

void NavSample::validate() const {
  require(pose.matrix().allFinite() && std::isfinite(timestamp), Errc::invalid_argument, "navigation sample must be finite");
  require((covariance_diag.array() >= 0.0).all() && covariance_diag.allFinite(), Errc::invalid_argument,
          "covariance entries must be nonnegative");
}

std::vector<std::optional<Eigen::Vector2i>> project_points(const Eigen::Matrix3Xd& points, const CameraModel& cam) {
  cam.validate();
  std::vector<std::optional<Eigen::Vector2i>> out(static_cast<std::size_t>(points.cols()));
  for (Eigen::Index i = 0; i < points.cols(); ++i) {
    const Eigen::Vector3d pc = cam.lidar_to_camera * points.col(i);
    if (!(pc.z() > 0.0)) continue;
    const double x = pc.x() / pc.z(), y = pc.y() / pc.z();
    const double r2 = x * x + y * y;
    const double radial = 1.0 + r2 * (cam.k1 + r2 * (cam.k2 + r2 * cam.k3));
    const double xd = x * radial + 2.0 * cam.p1 * x * y + cam.p2 * (r2 + 2.0 * x * x);
    const double yd = y * radial + cam.p1 * (r2 + 2.0 * y * y) + 2.0 * cam.p2 * x * y;
    const double u = std::round(cam.fx * xd + cam.cx), v = std::round(cam.fy * yd + cam.cy);
    if (!(u >= 0.0 && v >= 0.0 && u < cam.width && v < cam.height)) continue;
    out[static_cast<std::size_t>(i)] = Eigen::Vector2i(static_cast<int>(u), static_cast<int>(v));
  }
  return out;
}

std::vector<OverlapEdge> crossmodal_edges(const PointCloud& cloud, const std::vector<Supervoxel>& supervoxels,
                                          const LabelImage& superpixels, const CameraModel& cam) {
  cam.validate();
  require(superpixels.rows() == cam.height && superpixels.cols() == cam.width, Errc::dimension_mismatch,
          "superpixel map size differs from the camera image size");
  const auto pixels = project_points(cloud.points, cam);

  std::vector<OverlapEdge> out;
  for (const auto& sv : supervoxels) {
    std::map<int, int> omega;
    for (int p : sv.member_points) {
      require(p >= 0 && p < cloud.size(), Errc::invalid_argument, "supervoxel member outside the cloud");
      const auto& px = pixels[static_cast<std::size_t>(p)];
      if (!px) continue;
      const int id = superpixels((*px).y(), (*px).x());
      if (id >= 0) ++omega[id];
    }
    if (omega.empty()) continue;
    int max_omega = 0;
    for (const auto& [id, w] : omega) max_omega = std::max(max_omega, w);
    for (const auto& [id, w] : omega)
      out.push_back({id, sv.id, w, static_cast<double>(w) / static_cast<double>(max_omega)});
  }
  std::sort(out.begin(), out.end(), [](const OverlapEdge& a, const OverlapEdge& b) {
    return std::pair(a.supervoxel_id, a.superpixel_id) < std::pair(b.supervoxel_id, b.superpixel_id);
  });
  return out;
}

double mean_localization_variance(const NavSample& a, const NavSample& b) {
  return (a.covariance_diag.sum() + b.covariance_diag.sum()) / 12.0;
}

std::vector<TemporalLink> temporal_edges(const std::vector<Supervoxel>& current, const std::vector<Supervoxel>& previous,
                                         const NavSample& nav_prev, const NavSample& nav_curr, double gate_m,
                                         const KernelParams& kernels) {
  require(gate_m > 0.0, Errc::invalid_argument, "temporal gate must be positive");
  nav_prev.validate();
  nav_curr.validate();
  kernels.validate();
  std::vector<TemporalLink> out;
  if (current.empty() || previous.empty()) return out;

  Eigen::Matrix3Xd centroids(3, static_cast<Eigen::Index>(current.size()));
  for (std::size_t i = 0; i < current.size(); ++i) centroids.col(static_cast<Eigen::Index>(i)) = current[i].centroid;
  const KdTree index(centroids);
  const Eigen::Isometry3d prev_to_curr = nav_curr.pose.inverse() * nav_prev.pose;
  const double var = mean_localization_variance(nav_prev, nav_curr);

  for (const auto& prev : previous) {
    const auto [nearest, dist] = index.nearest(prev_to_curr * prev.centroid);
    if (nearest < 0 || dist > gate_m) continue;
    out.push_back({current[static_cast<std::size_t>(nearest)].id, prev.id, dist,
                   temporal_kernel(var, dist, kernels.sigma_nav, kernels.sigma_time)});
  }
  std::sort(out.begin(), out.end(), [](const TemporalLink& a, const TemporalLink& b) { return a.previous_id < b.previous_id; });
  return out;
}

}  // namespace fusioncrf
