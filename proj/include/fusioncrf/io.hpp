#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <string>
#include <vector>

#include "fusioncrf/geometry.hpp"
#include "fusioncrf/graph.hpp"
#include "fusioncrf/lidar.hpp"
#include "fusioncrf/table.hpp"

namespace fusioncrf::io {

namespace fs = std::filesystem;

/// Point clouds: `.bin` is little-endian float32 (x y z intensity) records;
/// anything else is text with one `x y z intensity` row per point and an
/// optional `# origin x y z` line.
PointCloud read_cloud(const fs::path& path);
void write_cloud(const fs::path& path, const PointCloud& cloud);

/// Netpbm graymaps, P2 or P5 (8 or 16 bit). Values are returned verbatim.
LabelImage read_pgm(const fs::path& path);
/// Writes P5, 16 bit when any value exceeds 255. Values must lie in [0, 65535].
void write_pgm(const fs::path& path, const LabelImage& image);

/// `# labels a b c` header, then `id r g b p1 .. pL` rows with ids 0..N-1.
struct Heatmap {
  ProbabilityTable probs;
  Eigen::MatrixX3d rgb;  // per superpixel, components in [0, 1]
};
Heatmap read_heatmap(const fs::path& path);
void write_heatmap(const fs::path& path, const Heatmap& heatmap);

/// `# labels a b c` header, then one probability row per point.
ProbabilityTable read_point_probs(const fs::path& path);
void write_point_probs(const fs::path& path, const ProbabilityTable& table);

/// One integer label per line; -1 is unlabeled.
std::vector<int> read_point_labels(const fs::path& path);
void write_point_labels(const fs::path& path, const std::vector<int>& labels);

/// `t tx ty tz qw qx qy qz c1 .. c6` on one line.
NavSample read_pose(const fs::path& path);
void write_pose(const fs::path& path, const NavSample& nav);

/// Lines: `width height`, `fx fy cx cy`, `k1 k2 k3 p1 p2`, nine row-major
/// rotation entries, `tx ty tz` (lidar -> camera).
CameraModel read_camera(const fs::path& path);
void write_camera(const fs::path& path, const CameraModel& cam);

/// Versioned text checkpoint carrying the label set.
void write_weights(const fs::path& path, const WeightSet& weights, const LabelSet& labels);
WeightSet read_weights(const fs::path& path, const LabelSet& expected);
/// Reads the checkpoint together with its own label set.
std::pair<WeightSet, LabelSet> read_weights(const fs::path& path);

/// Whole file as a string; throws Errc::io.
std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

}  // namespace fusioncrf::io
