#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fusioncrf/geometry.hpp"
#include "fusioncrf/io.hpp"
#include "fusioncrf/labels.hpp"
#include "fusioncrf/lidar.hpp"
#include "fusioncrf/table.hpp"

namespace fusioncrf {

inline constexpr int kUnlabeledPixel = 255;
inline constexpr int kUnlabeledPoint = -1;

/// One synchronized capture. Label indices refer to the owning domain's label set.
struct FrameBundle {
  std::string id;
  double timestamp = 0.0;
  PointCloud cloud;                             // sensor coordinates
  LabelImage superpixels;                       // negative ids are unassigned pixels
  io::Heatmap heatmap;                          // row = superpixel id
  std::optional<ProbabilityTable> point_probs;  // otherwise computed by a point classifier
  NavSample nav;
  std::optional<LabelImage> gt2d;               // kUnlabeledPixel marks unannotated pixels
  std::optional<std::vector<int>> gt3d;         // kUnlabeledPoint marks unannotated points

  bool annotated() const noexcept { return gt2d.has_value() && gt3d.has_value(); }
  /// Shapes agree with each other, the camera and the label set.
  void validate(const LabelSet& labels, const CameraModel& camera) const;
};

/// A recording environment: frames in temporal order sharing one camera.
struct Domain {
  std::string name;
  LabelSet labels;
  CameraModel camera;
  std::vector<FrameBundle> frames;

  bool annotated() const;
  void validate() const;
};

/// Directory layout:
///
///     manifest.txt
///     camera.txt
///     <frame>/cloud.bin superpixels.pgm heatmap.txt pose.txt [points3d.txt gt2d.pgm gt3d.txt]
///
/// The manifest starts with `# fusioncrf-domain 1`, then `name <name>`,
/// `labels <names..>` and one line per frame:
///
///     frame <id> <timestamp> cloud=<path> superpixels=<path> heatmap=<path> pose=<path> [points3d=..] [gt2d=..] [gt3d=..]
///
/// Paths are relative to the directory.
Domain read_domain(const std::filesystem::path& dir);
void write_domain(const std::filesystem::path& dir, const Domain& domain);

}  // namespace fusioncrf
