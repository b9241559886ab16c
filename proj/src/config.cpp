#include "fusioncrf/config.hpp"

#include <fmt/format.h>

#include <charconv>
#include <functional>
#include <numbers>
#include <sstream>

#include "fusioncrf/error.hpp"
#include "fusioncrf/io.hpp"

namespace fusioncrf {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) fail(Errc::config, "'" + key + "' expects a number, got '" + v + "'");
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) fail(Errc::config, "'" + key + "' expects an integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail(Errc::config, "'" + key + "' expects a boolean, got '" + v + "'");
}

using Setter = std::function<void(PipelineConfig&, const std::string& key, const std::string& value)>;
using Getter = std::function<std::string(const PipelineConfig&)>;

struct Field {
  const char* key;
  Setter set;
  Getter get;
};

std::string g(double v) { return fmt::format("{:.17g}", v); }

#define FCRF_REAL(name, member)                                                                        \
  Field {                                                                                              \
    name, [](PipelineConfig& c, const std::string& k, const std::string& v) { c.member = to_double(k, v); }, \
        [](const PipelineConfig& c) { return g(c.member); }                                            \
  }
#define FCRF_INT(name, member, type)                                                                          \
  Field {                                                                                                     \
    name, [](PipelineConfig& c, const std::string& k, const std::string& v) { c.member = static_cast<type>(to_int(k, v)); }, \
        [](const PipelineConfig& c) { return std::to_string(c.member); }                                      \
  }
#define FCRF_BOOL(name, member)                                                                     \
  Field {                                                                                           \
    name, [](PipelineConfig& c, const std::string& k, const std::string& v) { c.member = to_bool(k, v); }, \
        [](const PipelineConfig& c) { return std::string(c.member ? "true" : "false"); }            \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      Field{"labels",
            [](PipelineConfig& c, const std::string& k, const std::string& v) {
              if (v == "four_class") {
                c.labels = LabelSet::four_class();
              } else if (v == "binary") {
                c.labels = LabelSet::binary();
              } else if (v == "nine_class") {
                c.labels = LabelSet::nine_class();
              } else {
                std::istringstream ss(v);
                std::vector<std::string> names;
                for (std::string w; ss >> w;) names.push_back(w);
                try {
                  c.labels = LabelSet(names);
                } catch (const Error& e) {
                  fail(Errc::config, "'" + k + "': " + e.what());
                }
              }
            },
            [](const PipelineConfig& c) {
              std::string s;
              for (const auto& n : c.labels.names()) s += (s.empty() ? "" : " ") + n;
              return s;
            }},
      FCRF_INT("seed", seed, std::uint64_t),
      FCRF_INT("threads", threads, int),
      FCRF_BOOL("ground.align", align_ground),
      FCRF_REAL("ground.inlier_threshold_m", ransac.inlier_threshold_m),
      FCRF_INT("ground.max_iterations", ransac.max_iterations, int),
      FCRF_INT("ground.seed", ransac.seed, std::uint64_t),
      FCRF_INT("features.m_points", neighborhood.m_points, int),
      Field{"features.theta_h_deg",
            [](PipelineConfig& c, const std::string& k, const std::string& v) {
              c.neighborhood.theta_h = to_double(k, v) * std::numbers::pi / 180.0;
            },
            [](const PipelineConfig& c) { return g(c.neighborhood.theta_h * 180.0 / std::numbers::pi); }},
      FCRF_REAL("supervoxel.voxel_resolution", supervoxel.voxel_resolution),
      FCRF_REAL("supervoxel.seed_resolution", supervoxel.seed_resolution),
      FCRF_REAL("supervoxel.lambda", supervoxel.lambda_spatial),
      FCRF_INT("supervoxel.iterations", supervoxel.iterations, int),
      FCRF_REAL("kernels.sigma_2d", kernels.sigma_2d),
      FCRF_REAL("kernels.sigma_3d", kernels.sigma_3d),
      FCRF_REAL("kernels.sigma_nav", kernels.sigma_nav),
      FCRF_REAL("kernels.sigma_time", kernels.sigma_time),
      FCRF_REAL("kernels.prob_floor", kernels.prob_floor),
      FCRF_REAL("temporal.gate_m", temporal_gate_m),
      FCRF_INT("bp.max_iterations", bp.max_iterations, int),
      FCRF_REAL("bp.tolerance", bp.tolerance),
      FCRF_REAL("bp.damping", bp.damping),
      Field{"bp.schedule",
            [](PipelineConfig& c, const std::string& k, const std::string& v) {
              if (v == "sequential") {
                c.bp.schedule = Schedule::sequential;
              } else if (v == "parallel") {
                c.bp.schedule = Schedule::parallel;
              } else {
                fail(Errc::config, "'" + k + "' expects sequential or parallel");
              }
            },
            [](const PipelineConfig& c) {
              return std::string(c.bp.schedule == Schedule::sequential ? "sequential" : "parallel");
            }},
      FCRF_REAL("train.l2_lambda", train.l2_lambda),
      FCRF_INT("train.max_iterations", train.max_outer_iterations, int),
      FCRF_REAL("train.gradient_tolerance", train.gradient_tolerance),
      Field{"train.step_rule",
            [](PipelineConfig& c, const std::string& k, const std::string& v) {
              if (v == "lbfgs") {
                c.train.step_rule = StepRule::line_search_quasi_newton;
              } else if (v == "fixed") {
                c.train.step_rule = StepRule::fixed_step;
              } else {
                fail(Errc::config, "'" + k + "' expects lbfgs or fixed");
              }
            },
            [](const PipelineConfig& c) {
              return std::string(c.train.step_rule == StepRule::fixed_step ? "fixed" : "lbfgs");
            }},
      FCRF_REAL("train.fixed_step", train.fixed_step),
      Field{"train.method",
            [](PipelineConfig& c, const std::string& k, const std::string& v) {
              if (v == "automatic") {
                c.train.method = InferenceMethod::automatic;
              } else if (v == "exact") {
                c.train.method = InferenceMethod::exact;
              } else if (v == "bethe") {
                c.train.method = InferenceMethod::bethe;
              } else {
                fail(Errc::config, "'" + k + "' expects automatic, exact or bethe");
              }
            },
            [](const PipelineConfig& c) {
              switch (c.train.method) {
                case InferenceMethod::exact: return std::string("exact");
                case InferenceMethod::bethe: return std::string("bethe");
                default: return std::string("automatic");
              }
            }},
      FCRF_INT("train.exact_limit", train.exact_limit, std::size_t),
      Field{"classifier.source",
            [](PipelineConfig& c, const std::string& k, const std::string& v) {
              if (v == "automatic") {
                c.point_source = PointSource::automatic;
              } else if (v == "file") {
                c.point_source = PointSource::file;
              } else if (v == "classifier") {
                c.point_source = PointSource::classifier;
              } else {
                fail(Errc::config, "'" + k + "' expects automatic, file or classifier");
              }
            },
            [](const PipelineConfig& c) {
              switch (c.point_source) {
                case PointSource::file: return std::string("file");
                case PointSource::classifier: return std::string("classifier");
                default: return std::string("automatic");
              }
            }},
      FCRF_REAL("classifier.l2_lambda", classifier.l2_lambda),
      FCRF_INT("classifier.max_iterations", classifier.max_iterations, int),
      FCRF_INT("synth.frames", synth.frames, int),
      FCRF_REAL("synth.speed_mps", synth.speed_mps),
      FCRF_REAL("synth.frame_gap_s", synth.frame_gap_s),
      FCRF_REAL("synth.sensor_height_m", synth.sensor_height_m),
      FCRF_REAL("synth.near_m", synth.near_m),
      FCRF_REAL("synth.far_m", synth.far_m),
      FCRF_REAL("synth.half_width_m", synth.half_width_m),
      FCRF_REAL("synth.boxes_per_100m2", synth.boxes_per_100m2),
      FCRF_REAL("synth.blobs_per_100m2", synth.blobs_per_100m2),
      FCRF_INT("synth.image_width", synth.image_width, int),
      FCRF_INT("synth.image_height", synth.image_height, int),
      FCRF_REAL("synth.focal_px", synth.focal_px),
      FCRF_INT("synth.superpixel_block", synth.superpixel_block, int),
      FCRF_REAL("synth.pixel_noise", synth.pixel_noise),
      FCRF_REAL("synth.azimuth_step_deg", synth.azimuth_step_deg),
      FCRF_INT("synth.rings", synth.rings, int),
      FCRF_REAL("synth.min_elevation_deg", synth.min_elevation_deg),
      FCRF_REAL("synth.max_elevation_deg", synth.max_elevation_deg),
      FCRF_REAL("synth.range_noise_m", synth.range_noise_m),
      FCRF_REAL("synth.flip_probability", synth.flip_probability),
      FCRF_REAL("synth.flip_alpha_min", synth.flip_alpha_min),
      FCRF_REAL("synth.flip_alpha_max", synth.flip_alpha_max),
      FCRF_REAL("synth.clean_alpha_max", synth.clean_alpha_max),
      FCRF_REAL("synth.epsilon", synth.epsilon),
      FCRF_REAL("synth.ground_tile_m", synth.ground_tile_m),
      FCRF_REAL("synth.pose_noise_m", synth.pose_noise_m),
      FCRF_REAL("synth.reported_variance", synth.reported_variance),
      FCRF_BOOL("synth.emit_point_probs", synth.emit_point_probs),
  };
  return all;
}

#undef FCRF_REAL
#undef FCRF_INT
#undef FCRF_BOOL

}  // namespace

void PipelineConfig::validate() const {
  try {
    neighborhood.validate();
    supervoxel.validate();
    kernels.validate();
    bp.validate();
    train.validate();
  } catch (const Error& e) {
    fail(Errc::config, e.what());
  }
  require(ransac.inlier_threshold_m > 0.0 && ransac.max_iterations >= 1, Errc::config, "invalid ground-plane settings");
  require(temporal_gate_m > 0.0, Errc::config, "temporal gate must be positive");
  require(threads >= 1, Errc::config, "threads must be at least 1");
  synth.validate();
}

ConfigValues parse_config(const std::string& text, const std::string& origin) {
  ConfigValues out;
  std::istringstream in(text);
  std::string section;
  std::size_t number = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++number;
    std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(Errc::config, origin + ":" + std::to_string(number) + ": unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(Errc::config, origin + ":" + std::to_string(number) + ": expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) fail(Errc::config, origin + ":" + std::to_string(number) + ": empty key");
    out[section.empty() ? key : section + "." + key] = trim(std::string_view(line).substr(eq + 1));
  }
  return out;
}

ConfigValues read_config(const std::filesystem::path& path) {
  try {
    return parse_config(io::read_text(path), path.string());
  } catch (const Error& e) {
    if (e.code() == Errc::io) fail(Errc::config, e.what());
    throw;
  }
}

PipelineConfig apply_config(PipelineConfig base, const ConfigValues& values) {
  for (const auto& [key, value] : values) {
    const auto& fs = fields();
    auto it = std::find_if(fs.begin(), fs.end(), [&](const Field& f) { return key == f.key; });
    if (it == fs.end()) fail(Errc::config, "unknown configuration key '" + key + "'");
    it->set(base, key, value);
  }
  base.validate();
  return base;
}

PipelineConfig load_config(const std::vector<std::filesystem::path>& layers, PipelineConfig base) {
  for (const auto& path : layers) base = apply_config(std::move(base), read_config(path));
  base.validate();
  return base;
}

std::string dump_config(const PipelineConfig& cfg) {
  std::string out;
  std::string section;
  std::vector<std::pair<std::string, std::string>> sorted;
  for (const auto& f : fields()) sorted.emplace_back(f.key, f.get(cfg));
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    const bool ta = a.first.find('.') == std::string::npos, tb = b.first.find('.') == std::string::npos;
    if (ta != tb) return ta;
    return a.first.substr(0, a.first.find('.')) < b.first.substr(0, b.first.find('.'));
  });
  for (const auto& [key, value] : sorted) {
    const auto dot = key.find('.');
    const std::string sec = dot == std::string::npos ? "" : key.substr(0, dot);
    if (sec != section) {
      out += "\n[" + sec + "]\n";
      section = sec;
    }
    out += (dot == std::string::npos ? key : key.substr(dot + 1)) + " = " + value + "\n";
  }
  return out;
}

}  // namespace fusioncrf
