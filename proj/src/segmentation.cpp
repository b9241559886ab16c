#include "fusioncrf/segmentation.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <queue>
#include <tuple>
#include <unordered_map>

namespace fusioncrf {

void SupervoxelConfig::validate() const {
  require(voxel_resolution > 0.0 && std::isfinite(voxel_resolution), Errc::invalid_argument,
          "voxel resolution must be positive");
  require(seed_resolution >= voxel_resolution && std::isfinite(seed_resolution), Errc::invalid_argument,
          "seed resolution must not be finer than the voxel resolution");
  require(lambda_spatial >= 0.0 && std::isfinite(lambda_spatial), Errc::invalid_argument,
          "spatial weight must be nonnegative");
  require(iterations >= 1, Errc::invalid_argument, "clustering needs at least one iteration");
}

namespace {

using Cell = std::array<std::int64_t, 3>;

struct CellHash {
  std::size_t operator()(const Cell& c) const noexcept {
    std::uint64_t h = 1469598103934665603ULL;
    for (auto v : c) h = (h ^ static_cast<std::uint64_t>(v)) * 1099511628211ULL;
    return static_cast<std::size_t>(h);
  }
};

Cell cell_of(const Eigen::Vector3d& p, double res) {
  return {static_cast<std::int64_t>(std::floor(p.x() / res)), static_cast<std::int64_t>(std::floor(p.y() / res)),
          static_cast<std::int64_t>(std::floor(p.z() / res))};
}

struct Voxel {
  std::vector<int> points;
  Eigen::Vector3d centroid;
  Eigen::VectorXd hist;
  std::vector<int> faces;
};

struct Segment {
  Eigen::Vector3d centroid;
  Eigen::VectorXd hist;
  int start = -1;
};

double principal_angle(const Eigen::Matrix3Xd& pts, const std::vector<int>& members) {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (int i : members) mean += pts.col(i);
  mean /= static_cast<double>(members.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (int i : members) {
    const Eigen::Vector3d d = pts.col(i) - mean;
    cov.noalias() += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  if (es.eigenvalues().cwiseMax(0.0).sum() <= 1e-20) return 0.0;
  return std::acos(std::min(1.0, std::abs(es.eigenvectors()(2, 2))));
}

}  // namespace

Segmentation cluster(const PointCloud& cloud, const ProbabilityTable& point_probs, const SupervoxelConfig& cfg,
                     const Eigen::VectorXd& normal_angles) {
  cfg.validate();
  cloud.validate();
  require(!cloud.empty(), Errc::invalid_argument, "cannot cluster an empty cloud");
  require(point_probs.size() == cloud.size(), Errc::dimension_mismatch, "one probability row per point expected");
  require(normal_angles.size() == 0 || normal_angles.size() == cloud.size(), Errc::dimension_mismatch,
          "one normal angle per point expected");
  const Eigen::MatrixXd& probs = point_probs.probs;
  const Eigen::Index n_labels = probs.cols();

  // Voxels, numbered in lexicographic cell order.
  std::map<Cell, std::vector<int>> by_cell;
  for (Eigen::Index i = 0; i < cloud.size(); ++i)
    by_cell[cell_of(cloud.points.col(i), cfg.voxel_resolution)].push_back(static_cast<int>(i));
  std::vector<Voxel> voxels;
  std::unordered_map<Cell, int, CellHash> voxel_of;
  voxels.reserve(by_cell.size());
  for (auto& [cell, pts] : by_cell) {
    Voxel v;
    v.points = std::move(pts);
    v.centroid.setZero();
    for (int i : v.points) v.centroid += cloud.points.col(i);
    v.centroid /= static_cast<double>(v.points.size());
    v.hist = aggregate_probabilities(v.points, probs);
    voxel_of.emplace(cell, static_cast<int>(voxels.size()));
    voxels.push_back(std::move(v));
  }
  {
    int idx = 0;
    for (const auto& [cell, unused] : by_cell) {
      (void)unused;
      for (int axis = 0; axis < 3; ++axis)
        for (int step : {-1, 1}) {
          Cell nb = cell;
          nb[static_cast<std::size_t>(axis)] += step;
          if (auto it = voxel_of.find(nb); it != voxel_of.end()) voxels[static_cast<std::size_t>(idx)].faces.push_back(it->second);
        }
      std::sort(voxels[static_cast<std::size_t>(idx)].faces.begin(), voxels[static_cast<std::size_t>(idx)].faces.end());
      ++idx;
    }
  }
  const int n_vox = static_cast<int>(voxels.size());

  // One seed per occupied seed cell: the voxel closest to the cell centre.
  std::map<Cell, int> seed_of;
  for (int v = 0; v < n_vox; ++v) {
    const Cell sc = cell_of(voxels[static_cast<std::size_t>(v)].centroid, cfg.seed_resolution);
    const Eigen::Vector3d centre =
        (Eigen::Vector3d(static_cast<double>(sc[0]), static_cast<double>(sc[1]), static_cast<double>(sc[2])).array() + 0.5) *
        cfg.seed_resolution;
    auto [it, inserted] = seed_of.emplace(sc, v);
    if (!inserted) {
      const double cur = (voxels[static_cast<std::size_t>(it->second)].centroid - centre).squaredNorm();
      const double cand = (voxels[static_cast<std::size_t>(v)].centroid - centre).squaredNorm();
      if (cand < cur) it->second = v;
    }
  }
  std::vector<Segment> segments;
  for (const auto& [sc, v] : seed_of) {
    (void)sc;
    segments.push_back({voxels[static_cast<std::size_t>(v)].centroid, voxels[static_cast<std::size_t>(v)].hist, v});
  }

  auto distance = [&](int v, const Segment& s) {
    const Voxel& vox = voxels[static_cast<std::size_t>(v)];
    return cfg.lambda_spatial * (vox.centroid - s.centroid).norm() + chi_squared(vox.hist, s.hist);
  };

  std::vector<int> owner(static_cast<std::size_t>(n_vox), -1);
  for (int round = 0; round < cfg.iterations; ++round) {
    std::fill(owner.begin(), owner.end(), -1);
    using Item = std::tuple<double, int, int>;  // (D, segment, voxel)
    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    auto flood = [&]() {
      while (!queue.empty()) {
        const auto [d, s, v] = queue.top();
        queue.pop();
        if (owner[static_cast<std::size_t>(v)] >= 0) continue;
        owner[static_cast<std::size_t>(v)] = s;
        for (int u : voxels[static_cast<std::size_t>(v)].faces)
          if (owner[static_cast<std::size_t>(u)] < 0) queue.emplace(distance(u, segments[static_cast<std::size_t>(s)]), s, u);
      }
    };
    for (int s = 0; s < static_cast<int>(segments.size()); ++s)
      queue.emplace(distance(segments[static_cast<std::size_t>(s)].start, segments[static_cast<std::size_t>(s)]), s,
                    segments[static_cast<std::size_t>(s)].start);
    flood();
    // Components no seed could reach become segments of their own.
    for (int v = 0; v < n_vox; ++v) {
      if (owner[static_cast<std::size_t>(v)] >= 0) continue;
      segments.push_back({voxels[static_cast<std::size_t>(v)].centroid, voxels[static_cast<std::size_t>(v)].hist, v});
      queue.emplace(0.0, static_cast<int>(segments.size()) - 1, v);
      flood();
    }

    // Update means; drop segments that lost every voxel.
    std::vector<Eigen::Vector3d> csum(segments.size(), Eigen::Vector3d::Zero());
    std::vector<Eigen::VectorXd> hsum(segments.size(), Eigen::VectorXd::Zero(n_labels));
    std::vector<double> count(segments.size(), 0.0);
    for (int v = 0; v < n_vox; ++v) {
      const auto s = static_cast<std::size_t>(owner[static_cast<std::size_t>(v)]);
      const Voxel& vox = voxels[static_cast<std::size_t>(v)];
      const double w = static_cast<double>(vox.points.size());
      csum[s] += w * vox.centroid;
      hsum[s] += w * vox.hist;
      count[s] += w;
    }
    std::vector<int> remap(segments.size(), -1);
    std::vector<Segment> next;
    for (std::size_t s = 0; s < segments.size(); ++s) {
      if (count[s] == 0.0) continue;
      remap[s] = static_cast<int>(next.size());
      next.push_back({csum[s] / count[s], hsum[s] / hsum[s].sum(), -1});
    }
    std::vector<double> best(next.size(), std::numeric_limits<double>::infinity());
    for (int v = 0; v < n_vox; ++v) {
      int& o = owner[static_cast<std::size_t>(v)];
      o = remap[static_cast<std::size_t>(o)];
      Segment& seg = next[static_cast<std::size_t>(o)];
      const double d = (voxels[static_cast<std::size_t>(v)].centroid - seg.centroid).squaredNorm();
      if (d < best[static_cast<std::size_t>(o)]) {
        best[static_cast<std::size_t>(o)] = d;
        seg.start = v;
      }
    }
    segments = std::move(next);
  }

  Segmentation out;
  out.point_segment.assign(static_cast<std::size_t>(cloud.size()), -1);
  out.segments.resize(segments.size());
  for (std::size_t s = 0; s < segments.size(); ++s) out.segments[s].id = static_cast<int>(s);
  for (int v = 0; v < n_vox; ++v) {
    const int s = owner[static_cast<std::size_t>(v)];
    for (int p : voxels[static_cast<std::size_t>(v)].points) {
      out.segments[static_cast<std::size_t>(s)].member_points.push_back(p);
      out.point_segment[static_cast<std::size_t>(p)] = s;
    }
  }
  for (auto& seg : out.segments) {
    std::sort(seg.member_points.begin(), seg.member_points.end());
    seg.centroid.setZero();
    for (int p : seg.member_points) seg.centroid += cloud.points.col(p);
    seg.centroid /= static_cast<double>(seg.member_points.size());
    seg.mean_probs = aggregate_probabilities(seg.member_points, probs);
    if (normal_angles.size() > 0) {
      double sum = 0.0;
      for (int p : seg.member_points) sum += normal_angles[p];
      seg.mean_normal_angle = sum / static_cast<double>(seg.member_points.size());
    } else {
      seg.mean_normal_angle = principal_angle(cloud.points, seg.member_points);
    }
  }
  for (int v = 0; v < n_vox; ++v)
    for (int u : voxels[static_cast<std::size_t>(v)].faces) {
      const int a = owner[static_cast<std::size_t>(v)], b = owner[static_cast<std::size_t>(u)];
      if (u > v && a != b) out.adjacency.emplace_back(std::min(a, b), std::max(a, b));
    }
  std::sort(out.adjacency.begin(), out.adjacency.end());
  out.adjacency.erase(std::unique(out.adjacency.begin(), out.adjacency.end()), out.adjacency.end());
  return out;
}

Eigen::VectorXd aggregate_probabilities(const std::vector<int>& members, const Eigen::MatrixXd& point_probs) {
  require(!members.empty(), Errc::empty_segment, "segment has no member points");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(point_probs.cols());
  for (int p : members) {
    require(p >= 0 && p < point_probs.rows(), Errc::invalid_argument, "member index outside the probability table");
    sum += point_probs.row(p).transpose();
  }
  const double total = sum.sum();
  require(total > 0.0, Errc::invalid_payload, "segment probabilities sum to zero");
  return sum / total;
}

Eigen::VectorXd aggregate_probabilities(const Supervoxel& segment, const ProbabilityTable& point_probs) {
  return aggregate_probabilities(segment.member_points, point_probs.probs);
}

ProbabilityTable aggregate_superpixels(const ProbabilityImage& pixel_probs, const LabelImage& superpixels) {
  require(superpixels.rows() == pixel_probs.height && superpixels.cols() == pixel_probs.width &&
              pixel_probs.probs.rows() == static_cast<Eigen::Index>(pixel_probs.width) * pixel_probs.height,
          Errc::dimension_mismatch, "superpixel map and probability image differ in size");
  require(superpixels.size() > 0, Errc::invalid_argument, "empty superpixel map");
  require(superpixels.minCoeff() >= 0, Errc::invalid_argument, "superpixel ids must be nonnegative");
  const Eigen::Index count = superpixels.maxCoeff() + 1;
  ProbabilityTable out{pixel_probs.labels, Eigen::MatrixXd::Zero(count, pixel_probs.probs.cols())};
  std::vector<Eigen::Index> members(static_cast<std::size_t>(count), 0);
  for (Eigen::Index y = 0; y < superpixels.rows(); ++y)
    for (Eigen::Index x = 0; x < superpixels.cols(); ++x) {
      const auto id = superpixels(y, x);
      out.probs.row(id) += pixel_probs.probs.row(y * pixel_probs.width + x);
      ++members[static_cast<std::size_t>(id)];
    }
  for (Eigen::Index s = 0; s < count; ++s) {
    if (members[static_cast<std::size_t>(s)] == 0)
      fail(Errc::empty_segment, "superpixel id " + std::to_string(s) + " covers no pixels");
    const double total = out.probs.row(s).sum();
    require(total > 0.0, Errc::invalid_payload, "superpixel probabilities sum to zero");
    out.probs.row(s) /= total;
  }
  return out;
}

}  // namespace fusioncrf
