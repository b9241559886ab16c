#pragma once

#include <cstdint>
#include <string>

#include "fusioncrf/dataset.hpp"

namespace fusioncrf {

/// Static street-like scene seen by a vehicle driving along +x: flat ground,
/// boxes (object) and spherical blobs (vegetation) under open sky. The lidar
/// is a ring scanner sharing its origin with a forward-looking pinhole camera.
///
/// Simulated initial classifiers confuse fixed label pairs: the camera mixes
/// ground with vegetation, the lidar mixes vegetation with object. Confusion is
/// drawn per (instance, frame, modality): with `flip_probability` the partner
/// label receives alpha ~ U(flip_alpha_min, flip_alpha_max), otherwise
/// alpha ~ U(0, clean_alpha_max). Ground is cut into `ground_tile_m` tiles
/// which count as separate instances. Every probability entry then gets
/// `epsilon * U(0, 1)` added before renormalization.
struct SceneSpec {
  int frames = 4;
  double speed_mps = 1.0;
  double frame_gap_s = 2.0;
  double sensor_height_m = 1.8;

  double near_m = 3.0;  // scene window ahead of the sensor
  double far_m = 15.0;
  double half_width_m = 5.0;
  double boxes_per_100m2 = 2.5;
  double blobs_per_100m2 = 2.5;

  int image_width = 160;
  int image_height = 120;
  double focal_px = 80.0;
  int superpixel_block = 16;
  double pixel_noise = 0.03;

  double azimuth_step_deg = 1.0;
  int rings = 16;
  double min_elevation_deg = -32.0;
  double max_elevation_deg = 4.0;
  double range_noise_m = 0.01;

  double flip_probability = 0.3;
  double flip_alpha_min = 0.55;
  double flip_alpha_max = 0.8;
  double clean_alpha_max = 0.3;
  double epsilon = 0.05;
  double ground_tile_m = 3.0;

  double pose_noise_m = 0.0;           // actual perturbation of the reported position
  double reported_variance = 0.05;     // every covariance-diagonal entry
  bool emit_point_probs = true;        // false leaves 3D probabilities to a point classifier

  void validate() const;
};

/// Deterministic in (spec, seed). Labels are LabelSet::four_class(); every
/// frame carries full 2D and 3D annotations.
Domain generate_synthetic_scene(const SceneSpec& spec, std::uint64_t seed, const std::string& name = "synthetic");

/// Settings matching the generated sensor: neighborhood parameters for the ring
/// scanner and supervoxel sizes for the point density.
struct PipelineConfig;
void tune_for_synthetic(PipelineConfig& cfg, const SceneSpec& spec);

}  // namespace fusioncrf
