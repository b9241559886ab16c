#include "fusioncrf/lidar.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <optional>
#include <random>
#include <thread>
#include <vector>

namespace fusioncrf {

void PointCloud::validate() const {
  require(intensity.size() == points.cols(), Errc::dimension_mismatch, "intensity count differs from point count");
  require(points.allFinite() && intensity.allFinite() && sensor_origin.allFinite(), Errc::invalid_argument,
          "point cloud holds non-finite values");
}

void NeighborhoodParams::validate() const {
  require(m_points >= 1, Errc::invalid_argument, "M must be at least 1");
  require(theta_h > 0.0 && std::isfinite(theta_h), Errc::invalid_argument, "theta_H must be positive");
}

namespace {

// Normal of the least-squares plane through `idx`, or nullopt when the
// points do not span a plane.
std::optional<Eigen::Vector4d> refit_plane(const Eigen::Matrix3Xd& pts, const std::vector<int>& idx) {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (int i : idx) mean += pts.col(i);
  mean /= static_cast<double>(idx.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (int i : idx) {
    const Eigen::Vector3d d = pts.col(i) - mean;
    cov.noalias() += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  if (es.eigenvalues()[1] <= 1e-12 * std::max(1.0, es.eigenvalues()[2])) return std::nullopt;
  const Eigen::Vector3d n = es.eigenvectors().col(0).normalized();
  return Eigen::Vector4d(n.x(), n.y(), n.z(), -n.dot(mean));
}

}  // namespace

GroundAlignment align_ground_plane(const PointCloud& cloud, const RansacParams& params) {
  cloud.validate();
  require(params.inlier_threshold_m > 0.0, Errc::invalid_argument, "inlier threshold must be positive");
  require(params.max_iterations >= 1, Errc::invalid_argument, "RANSAC needs at least one iteration");
  const Eigen::Index n = cloud.size();
  if (n < 3) fail(Errc::degenerate_cloud, "plane fit needs at least three points");

  std::mt19937_64 rng(params.seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  const auto& P = cloud.points;

  Eigen::Vector4d best = Eigen::Vector4d::Zero();
  Eigen::Index best_count = 0;
  for (int it = 0; it < params.max_iterations; ++it) {
    const Eigen::Index a = pick(rng), b = pick(rng), c = pick(rng);
    if (a == b || b == c || a == c) continue;
    const Eigen::Vector3d e1 = P.col(b) - P.col(a), e2 = P.col(c) - P.col(a);
    Eigen::Vector3d normal = e1.cross(e2);
    const double norm = normal.norm();
    if (!(norm > 1e-12 * e1.norm() * e2.norm())) continue;
    normal /= norm;
    const double d = -normal.dot(P.col(a));
    const Eigen::Index count = (((normal.transpose() * P).array() + d).abs() <= params.inlier_threshold_m).count();
    if (count > best_count) {
      best_count = count;
      best << normal, d;
    }
  }
  if (best_count < 3) fail(Errc::degenerate_cloud, "no plane with at least three inliers");

  std::vector<int> inliers;
  for (Eigen::Index i = 0; i < n; ++i)
    if (std::abs(best.head<3>().dot(P.col(i)) + best[3]) <= params.inlier_threshold_m) inliers.push_back(static_cast<int>(i));
  if (auto refit = refit_plane(P, inliers)) best = *refit;

  Eigen::Vector3d normal = best.head<3>();
  if (normal.z() < 0.0 || (normal.z() == 0.0 && normal.dot(cloud.sensor_origin) + best[3] < 0.0)) best = -best;
  normal = best.head<3>();

  GroundAlignment out;
  out.plane = best;
  out.inliers = static_cast<int>(inliers.size());
  out.transform.linear() = Eigen::Quaterniond::FromTwoVectors(normal, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  out.transform.translation() = Eigen::Vector3d(0.0, 0.0, best[3]);
  out.cloud.points = out.transform * P;
  out.cloud.intensity = cloud.intensity;
  out.cloud.sensor_origin = out.transform * cloud.sensor_origin;
  return out;
}

PointFeatures point_features(const PointCloud& cloud, const KdTree& index, Eigen::Index point,
                             const NeighborhoodParams& params) {
  require(point >= 0 && point < cloud.size(), Errc::invalid_argument, "point index out of range");
  require(index.size() == cloud.size(), Errc::dimension_mismatch, "spatial index built over a different cloud");
  const Eigen::Vector3d p = cloud.points.col(point);
  const double radius = adaptive_radius(p - cloud.sensor_origin, params);

  std::vector<int> nb = index.radius_search(p, radius);
  if (std::find(nb.begin(), nb.end(), static_cast<int>(point)) == nb.end()) nb.push_back(static_cast<int>(point));
  const double count = static_cast<double>(nb.size());

  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  double zmin = p.z();
  for (int i : nb) {
    mean += cloud.points.col(i);
    zmin = std::min(zmin, cloud.points(2, i));
  }
  mean /= count;
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (int i : nb) {
    const Eigen::Vector3d d = cloud.points.col(i) - mean;
    cov.noalias() += d * d.transpose();
  }
  cov /= count;

  PointFeatures f;
  f[0] = p.z();
  f[1] = zmin;
  f[2] = mean.z();
  f[3] = cov(2, 2);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  const Eigen::Vector3d ev = es.eigenvalues().cwiseMax(0.0);
  const double total = ev.sum();
  if (total <= 1e-20) {
    f.segment<3>(4).setConstant(1.0 / 3.0);
    f[7] = 1.0;
  } else {
    f[4] = ev[2] / total;
    f[5] = ev[1] / total;
    f[6] = ev[0] / total;
    f[7] = std::min(1.0, std::abs(es.eigenvectors()(2, 2)));
  }
  f[8] = cloud.intensity[point];
  return f;
}

PointFeatures point_features(const PointCloud& cloud, Eigen::Index point, const NeighborhoodParams& params) {
  return point_features(cloud, KdTree(cloud.points), point, params);
}

FeatureMatrix extract_features(const PointCloud& cloud, const NeighborhoodParams& params, int threads) {
  cloud.validate();
  params.validate();
  require(!cloud.empty(), Errc::invalid_argument, "feature extraction needs a non-empty cloud");
  const KdTree index(cloud.points);
  FeatureMatrix out(9, cloud.size());
  const Eigen::Index n = cloud.size();
  const int workers = static_cast<int>(std::clamp<Eigen::Index>(threads, 1, std::max<Eigen::Index>(n, 1)));
  auto run = [&](Eigen::Index begin, Eigen::Index end) {
    for (Eigen::Index i = begin; i < end; ++i) out.col(i) = point_features(cloud, index, i, params);
  };
  if (workers == 1) {
    run(0, n);
    return out;
  }
  std::vector<std::jthread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(run, n * w / workers, n * (w + 1) / workers);
  pool.clear();
  return out;
}

}  // namespace fusioncrf
