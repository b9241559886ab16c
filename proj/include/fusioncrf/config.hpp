#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fusioncrf/classifier.hpp"
#include "fusioncrf/inference.hpp"
#include "fusioncrf/lidar.hpp"
#include "fusioncrf/potentials.hpp"
#include "fusioncrf/segmentation.hpp"
#include "fusioncrf/synthetic.hpp"
#include "fusioncrf/training.hpp"

namespace fusioncrf {

/// Where per-point 3D probabilities come from. `automatic` uses the frame's
/// probability file when present and the point classifier otherwise.
enum class PointSource { automatic, file, classifier };

/// Every tunable of the pipeline in one place.
struct PipelineConfig {
  LabelSet labels = LabelSet::four_class();
  bool align_ground = true;
  RansacParams ransac;
  NeighborhoodParams neighborhood;
  SupervoxelConfig supervoxel;
  KernelParams kernels;
  double temporal_gate_m = 1.0;
  BPConfig bp;
  TrainConfig train;
  LogisticOptions classifier;
  PointSource point_source = PointSource::automatic;
  SceneSpec synth;
  std::uint64_t seed = 1;
  int threads = 1;

  void validate() const;
};

/// Flat `section.key -> value` view of INI-like text:
///
///     # comment
///     [supervoxel]
///     voxel_resolution = 0.1
///
/// Keys before any section header live at top level.
using ConfigValues = std::map<std::string, std::string>;

ConfigValues parse_config(const std::string& text, const std::string& origin = "<config>");
ConfigValues read_config(const std::filesystem::path& path);

/// Applies values over `base`; later layers win. Unknown keys and malformed
/// values throw Errc::config.
PipelineConfig apply_config(PipelineConfig base, const ConfigValues& values);
PipelineConfig load_config(const std::vector<std::filesystem::path>& layers, PipelineConfig base = {});

/// Every key with its current value, in the same syntax parse_config reads.
std::string dump_config(const PipelineConfig& cfg);

}  // namespace fusioncrf
