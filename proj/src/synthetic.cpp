#include "fusioncrf/synthetic.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>

#include "fusioncrf/config.hpp"
#include "fusioncrf/error.hpp"

namespace fusioncrf {

namespace {

constexpr int kGround = 0, kSky = 1, kVegetation = 2, kObject = 3;
constexpr std::uint64_t kSkyInstance = 0;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix(a ^ splitmix(b)); }

struct Box {
  Eigen::Vector3d lo, hi;
  Eigen::Vector3d colour;
  std::uint64_t key;
};

struct Blob {
  Eigen::Vector3d centre;
  double radius;
  Eigen::Vector3d colour;
  std::uint64_t key;
};

struct Scene {
  std::vector<Box> boxes;
  std::vector<Blob> blobs;
  double tile_m;
};

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  int label = kSky;
  std::uint64_t instance = kSkyInstance;
  Eigen::Vector3d colour{0.55, 0.7, 0.95};
};

std::uint64_t tile_key(double x, double y, double tile) {
  const auto tx = static_cast<std::int64_t>(std::floor(x / tile)) + (1 << 20);
  const auto ty = static_cast<std::int64_t>(std::floor(y / tile)) + (1 << 20);
  return (std::uint64_t{1} << 62) | (static_cast<std::uint64_t>(tx) << 24) | static_cast<std::uint64_t>(ty);
}

Hit cast(const Scene& scene, const Eigen::Vector3d& o, const Eigen::Vector3d& d) {
  Hit best;
  if (d.z() < 0.0) {
    best.t = -o.z() / d.z();
    best.label = kGround;
    const Eigen::Vector3d p = o + best.t * d;
    best.instance = tile_key(p.x(), p.y(), scene.tile_m);
    best.colour = Eigen::Vector3d(0.45, 0.42, 0.38);
  }
  for (const auto& b : scene.boxes) {
    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    bool miss = false;
    for (int k = 0; k < 3 && !miss; ++k) {
      if (std::abs(d(k)) < 1e-15) {
        miss = o(k) < b.lo(k) || o(k) > b.hi(k);
        continue;
      }
      double a = (b.lo(k) - o(k)) / d(k), c = (b.hi(k) - o(k)) / d(k);
      if (a > c) std::swap(a, c);
      t0 = std::max(t0, a);
      t1 = std::min(t1, c);
      miss = t0 > t1;
    }
    if (!miss && t0 > 0.0 && t0 < best.t) best = {t0, kObject, b.key, b.colour};
  }
  for (const auto& s : scene.blobs) {
    const Eigen::Vector3d oc = o - s.centre;
    const double bq = oc.dot(d), cq = oc.squaredNorm() - s.radius * s.radius;
    const double disc = bq * bq - cq;
    if (disc < 0.0) continue;
    const double t = -bq - std::sqrt(disc);
    if (t > 0.0 && t < best.t) best = {t, kVegetation, s.key, s.colour};
  }
  return best;
}

Scene make_scene(const SceneSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double travel = spec.speed_mps * spec.frame_gap_s * (spec.frames - 1);
  const double x0 = spec.near_m, x1 = spec.far_m + travel;
  const double ymax = spec.half_width_m - 0.5;
  const double area = (x1 - x0) * 2.0 * spec.half_width_m;
  const int n_boxes = static_cast<int>(std::lround(spec.boxes_per_100m2 * area / 100.0));
  const int n_blobs = static_cast<int>(std::lround(spec.blobs_per_100m2 * area / 100.0));

  Scene scene;
  scene.tile_m = spec.ground_tile_m;
  std::vector<std::pair<Eigen::Vector2d, double>> footprints;
  auto place = [&](double radius) -> std::optional<Eigen::Vector2d> {
    for (int attempt = 0; attempt < 200; ++attempt) {
      const Eigen::Vector2d c(x0 + (x1 - x0) * u(rng), -ymax + 2.0 * ymax * u(rng));
      bool clear = true;
      for (const auto& [q, r] : footprints) clear = clear && (c - q).norm() > r + radius + 0.6;
      if (clear) {
        footprints.emplace_back(c, radius);
        return c;
      }
    }
    return std::nullopt;
  };
  std::uint64_t next_key = 1;
  for (int i = 0; i < n_boxes; ++i) {
    const double sx = 0.6 + 0.8 * u(rng), sy = 0.6 + 0.8 * u(rng), h = 1.0 + 1.2 * u(rng);
    const Eigen::Vector3d colour(0.3 + 0.6 * u(rng), 0.2 + 0.4 * u(rng), 0.3 + 0.6 * u(rng));
    const auto c = place(0.5 * std::hypot(sx, sy));
    if (!c) continue;
    scene.boxes.push_back({Eigen::Vector3d(c->x() - sx / 2, c->y() - sy / 2, 0.0),
                           Eigen::Vector3d(c->x() + sx / 2, c->y() + sy / 2, h), colour, next_key++});
  }
  for (int i = 0; i < n_blobs; ++i) {
    const double r = 0.5 + 0.5 * u(rng);
    const Eigen::Vector3d colour(0.1 + 0.1 * u(rng), 0.45 + 0.15 * u(rng), 0.1 + 0.1 * u(rng));
    const auto c = place(r);
    if (!c) continue;
    scene.blobs.push_back({Eigen::Vector3d(c->x(), c->y(), 0.7 * r), r, colour, next_key++});
  }
  return scene;
}

/// Simulated classifier output for one item of `label` belonging to an
/// instance with confusion `alpha`.
Eigen::VectorXd simulated_probs(int label, int partner, double alpha, double epsilon, const AdmissibleMask& mask,
                                std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(mask.size());
  p(label) = 1.0;
  if (partner >= 0) {
    p(label) -= alpha;
    p(partner) += alpha;
  }
  for (Eigen::Index l = 0; l < p.size(); ++l) {
    const double e = epsilon * u(rng);
    if (mask(l)) p(l) += e;
  }
  return p / p.sum();
}

int partner_2d(int label) {
  if (label == kGround) return kVegetation;
  if (label == kVegetation) return kGround;
  return -1;
}

int partner_3d(int label) {
  if (label == kVegetation) return kObject;
  if (label == kObject) return kVegetation;
  return -1;
}

/// Confusion strength for one (instance, frame, modality).
double instance_alpha(const SceneSpec& spec, std::uint64_t seed, int frame, int modality, std::uint64_t instance) {
  std::mt19937_64 rng(mix(mix(mix(seed, 0xa1fa), static_cast<std::uint64_t>(frame * 2 + modality)), instance));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) < spec.flip_probability) return spec.flip_alpha_min + (spec.flip_alpha_max - spec.flip_alpha_min) * u(rng);
  return spec.clean_alpha_max * u(rng);
}

}  // namespace

void SceneSpec::validate() const {
  require(frames >= 1, Errc::config, "synthetic scene needs at least one frame");
  require(near_m > 0.0 && far_m > near_m && half_width_m > 0.5, Errc::config, "invalid synthetic scene window");
  require(image_width >= 2 && image_height >= 2 && focal_px > 0.0 && superpixel_block >= 1, Errc::config,
          "invalid synthetic camera");
  require(azimuth_step_deg > 0.0 && rings >= 1 && max_elevation_deg >= min_elevation_deg, Errc::config,
          "invalid synthetic lidar");
  require(flip_probability >= 0.0 && flip_probability <= 1.0, Errc::config, "flip probability outside [0, 1]");
  require(flip_alpha_min >= 0.0 && flip_alpha_min <= flip_alpha_max && flip_alpha_max <= 1.0 && clean_alpha_max >= 0.0 &&
              clean_alpha_max <= 1.0,
          Errc::config, "confusion strengths outside [0, 1]");
  require(epsilon >= 0.0 && pixel_noise >= 0.0 && range_noise_m >= 0.0 && pose_noise_m >= 0.0 && reported_variance >= 0.0,
          Errc::config, "negative synthetic noise level");
  require(ground_tile_m > 0.0 && speed_mps >= 0.0 && frame_gap_s > 0.0 && sensor_height_m > 0.0, Errc::config,
          "invalid synthetic trajectory");
  require(boxes_per_100m2 >= 0.0 && blobs_per_100m2 >= 0.0, Errc::config, "negative object density");
}

Domain generate_synthetic_scene(const SceneSpec& spec, std::uint64_t seed, const std::string& name) {
  spec.validate();
  std::mt19937_64 scene_rng(mix(seed, 0x5ce7e));
  const Scene scene = make_scene(spec, scene_rng);

  Domain d;
  d.name = name;
  d.labels = LabelSet::four_class();
  const AdmissibleMask mask2d = image_mask(d.labels), mask3d = lidar_mask(d.labels);
  const int L = d.labels.count();

  CameraModel& cam = d.camera;
  cam.width = spec.image_width;
  cam.height = spec.image_height;
  cam.fx = cam.fy = spec.focal_px;
  cam.cx = spec.image_width / 2.0;
  cam.cy = spec.image_height / 2.0;
  cam.lidar_to_camera.linear() << 0, -1, 0, 0, 0, -1, 1, 0, 0;

  for (int f = 0; f < spec.frames; ++f) {
    std::mt19937_64 rng(mix(seed, static_cast<std::uint64_t>(f + 1)));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);

    FrameBundle fb;
    fb.id = fmt::format("f{:03d}", f);
    fb.timestamp = f * spec.frame_gap_s;
    const Eigen::Vector3d sensor(spec.speed_mps * fb.timestamp, 0.0, spec.sensor_height_m);

    // lidar rings, kept inside the scene window
    std::vector<Eigen::Vector3d> pts;
    std::vector<double> intensity;
    std::vector<int> truth;
    std::vector<std::uint64_t> instance;
    const double az_max = std::atan2(spec.half_width_m, spec.near_m);
    const double step = spec.azimuth_step_deg * std::numbers::pi / 180.0;
    const int n_az = static_cast<int>(std::floor(az_max / step));
    for (int r = 0; r < spec.rings; ++r) {
      const double e = (spec.rings == 1 ? spec.min_elevation_deg
                                        : spec.min_elevation_deg + (spec.max_elevation_deg - spec.min_elevation_deg) * r /
                                                                       (spec.rings - 1)) *
                       std::numbers::pi / 180.0;
      for (int a = -n_az; a <= n_az; ++a) {
        const double az = a * step;
        const Eigen::Vector3d dir(std::cos(e) * std::cos(az), std::cos(e) * std::sin(az), std::sin(e));
        const Hit h = cast(scene, sensor, dir);
        const double noise = spec.range_noise_m * normal(rng);
        if (!std::isfinite(h.t)) continue;
        const Eigen::Vector3d local = (h.t + noise) * dir;
        if (local.x() < spec.near_m || local.x() > spec.far_m || std::abs(local.y()) > spec.half_width_m) continue;
        pts.push_back(local);
        const double base = h.label == kGround ? 0.25 : (h.label == kVegetation ? 0.45 : 0.65);
        intensity.push_back(std::clamp(base + 0.1 * normal(rng), 0.0, 1.0));
        truth.push_back(h.label);
        instance.push_back(h.instance);
      }
    }
    const auto n = static_cast<Eigen::Index>(pts.size());
    fb.cloud.points.resize(3, n);
    fb.cloud.intensity.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      fb.cloud.points.col(i) = pts[static_cast<std::size_t>(i)];
      fb.cloud.intensity(i) = intensity[static_cast<std::size_t>(i)];
    }
    fb.gt3d = truth;

    // camera: ray-cast labels, colours and instances per pixel
    const int W = spec.image_width, H = spec.image_height;
    LabelImage gt(H, W);
    std::vector<std::uint64_t> pix_instance(static_cast<std::size_t>(W * H));
    Eigen::MatrixX3d pix_rgb(W * H, 3);
    for (int v = 0; v < H; ++v) {
      for (int x = 0; x < W; ++x) {
        const double xc = (x - cam.cx) / cam.fx, yc = (v - cam.cy) / cam.fy;
        const Eigen::Vector3d dir = Eigen::Vector3d(1.0, -xc, -yc).normalized();
        const Hit h = cast(scene, sensor, dir);
        gt(v, x) = h.label;
        const auto k = static_cast<std::size_t>(v * W + x);
        pix_instance[k] = h.instance;
        for (int c = 0; c < 3; ++c)
          pix_rgb(static_cast<Eigen::Index>(k), c) = std::clamp(h.colour(c) + spec.pixel_noise * normal(rng), 0.0, 1.0);
      }
    }
    fb.gt2d = gt;

    // superpixels: blocks split by label, numbered in raster order of first appearance
    const int B = spec.superpixel_block;
    std::map<std::tuple<int, int, int>, int> ids;
    fb.superpixels.resize(H, W);
    for (int v = 0; v < H; ++v) {
      for (int x = 0; x < W; ++x) {
        const auto key = std::make_tuple(v / B, x / B, static_cast<int>(gt(v, x)));
        auto it = ids.try_emplace(key, static_cast<int>(ids.size())).first;
        fb.superpixels(v, x) = it->second;
      }
    }
    const auto S = static_cast<Eigen::Index>(ids.size());
    std::vector<std::map<std::uint64_t, int>> members(static_cast<std::size_t>(S));
    std::vector<int> sp_label(static_cast<std::size_t>(S));
    Eigen::MatrixX3d rgb = Eigen::MatrixX3d::Zero(S, 3);
    Eigen::VectorXd count = Eigen::VectorXd::Zero(S);
    for (int v = 0; v < H; ++v) {
      for (int x = 0; x < W; ++x) {
        const int s = fb.superpixels(v, x);
        const auto k = static_cast<std::size_t>(v * W + x);
        ++members[static_cast<std::size_t>(s)][pix_instance[k]];
        sp_label[static_cast<std::size_t>(s)] = gt(v, x);
        rgb.row(s) += pix_rgb.row(static_cast<Eigen::Index>(k));
        count(s) += 1.0;
      }
    }
    fb.heatmap.probs.labels = d.labels;
    fb.heatmap.probs.probs.resize(S, L);
    fb.heatmap.rgb = rgb.array().colwise() / count.array();
    for (Eigen::Index s = 0; s < S; ++s) {
      const auto& m = members[static_cast<std::size_t>(s)];
      auto best = m.begin();
      for (auto it = m.begin(); it != m.end(); ++it)
        if (it->second > best->second) best = it;
      const int label = sp_label[static_cast<std::size_t>(s)];
      const double alpha = instance_alpha(spec, seed, f, 0, best->first);
      fb.heatmap.probs.probs.row(s) = simulated_probs(label, partner_2d(label), alpha, spec.epsilon, mask2d, rng).transpose();
    }

    if (spec.emit_point_probs) {
      ProbabilityTable t;
      t.labels = d.labels;
      t.probs.resize(n, L);
      for (Eigen::Index i = 0; i < n; ++i) {
        const int label = truth[static_cast<std::size_t>(i)];
        const double alpha = instance_alpha(spec, seed, f, 1, instance[static_cast<std::size_t>(i)]);
        t.probs.row(i) = simulated_probs(label, partner_3d(label), alpha, spec.epsilon, mask3d, rng).transpose();
      }
      fb.point_probs = std::move(t);
    }

    fb.nav.timestamp = fb.timestamp;
    fb.nav.pose = Eigen::Isometry3d::Identity();
    fb.nav.pose.translation() = sensor + spec.pose_noise_m * Eigen::Vector3d(normal(rng), normal(rng), normal(rng));
    fb.nav.covariance_diag.setConstant(spec.reported_variance);
    d.frames.push_back(std::move(fb));
  }
  return d;
}

void tune_for_synthetic(PipelineConfig& cfg, const SceneSpec& spec) {
  cfg.neighborhood.theta_h = spec.azimuth_step_deg * std::numbers::pi / 180.0;
  cfg.neighborhood.m_points = 6;
  cfg.supervoxel.voxel_resolution = 0.25;
  cfg.supervoxel.seed_resolution = 1.0;
}

}  // namespace fusioncrf
