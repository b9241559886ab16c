#include "fusioncrf/dataset.hpp"

#include <fmt/format.h>

#include <charconv>
#include <map>
#include <set>
#include <sstream>

#include "fusioncrf/error.hpp"

namespace fusioncrf {

namespace fs = std::filesystem;

void FrameBundle::validate(const LabelSet& labels, const CameraModel& camera) const {
  const std::string at = "frame '" + id + "': ";
  require(!id.empty(), Errc::format, "frame without id");
  cloud.validate();
  nav.validate();
  require(superpixels.rows() == camera.height && superpixels.cols() == camera.width, Errc::dimension_mismatch,
          at + "superpixel map does not match the camera size");
  require(heatmap.probs.labels == labels, Errc::label_space_mismatch, at + "heatmap label set differs from the domain");
  heatmap.probs.validate();
  require(heatmap.rgb.rows() == heatmap.probs.size(), Errc::dimension_mismatch, at + "heatmap colour rows");
  const int max_id = superpixels.size() ? superpixels.maxCoeff() : -1;
  require(max_id < heatmap.probs.size(), Errc::dimension_mismatch,
          at + "superpixel id " + std::to_string(max_id) + " has no heatmap row");
  if (point_probs) {
    require(point_probs->labels == labels, Errc::label_space_mismatch, at + "point probability labels differ");
    require(point_probs->size() == cloud.size(), Errc::dimension_mismatch, at + "one probability row per point expected");
    point_probs->validate();
  }
  if (gt2d) {
    require(gt2d->rows() == superpixels.rows() && gt2d->cols() == superpixels.cols(), Errc::dimension_mismatch,
            at + "2D annotation size");
    require(((*gt2d >= 0 && *gt2d < labels.count()) || *gt2d == kUnlabeledPixel).all(), Errc::format,
            at + "2D annotation outside the label set");
  }
  if (gt3d) {
    require(static_cast<Eigen::Index>(gt3d->size()) == cloud.size(), Errc::dimension_mismatch,
            at + "one 3D annotation per point expected");
    for (int l : *gt3d)
      require(l == kUnlabeledPoint || (l >= 0 && l < labels.count()), Errc::format, at + "3D annotation outside the label set");
  }
}

bool Domain::annotated() const {
  return std::any_of(frames.begin(), frames.end(), [](const FrameBundle& f) { return f.annotated(); });
}

void Domain::validate() const {
  require(!name.empty(), Errc::format, "domain without name");
  camera.validate();
  std::set<std::string> ids;
  for (const auto& f : frames) {
    require(ids.insert(f.id).second, Errc::format, "domain '" + name + "': duplicate frame id '" + f.id + "'");
    f.validate(labels, camera);
  }
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  for (std::string w; ss >> w;) out.push_back(w);
  return out;
}

}  // namespace

Domain read_domain(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.txt";
  std::istringstream in(io::read_text(manifest));
  Domain d;
  std::string line;
  std::size_t number = 0;
  auto bad = [&](const std::string& why) { fail(Errc::format, manifest.string() + ":" + std::to_string(number) + ": " + why); };

  if (!std::getline(in, line) || line.rfind("# fusioncrf-domain 1", 0) != 0) bad("missing '# fusioncrf-domain 1' header");
  ++number;
  bool have_labels = false;
  while (std::getline(in, line)) {
    ++number;
    const auto w = split(line);
    if (w.empty() || w[0].front() == '#') continue;
    if (w[0] == "name") {
      if (w.size() != 2) bad("expected 'name <name>'");
      d.name = w[1];
    } else if (w[0] == "labels") {
      try {
        d.labels = LabelSet(std::vector<std::string>(w.begin() + 1, w.end()));
      } catch (const Error& e) {
        bad(e.what());
      }
      have_labels = true;
    } else if (w[0] == "frame") {
      if (w.size() < 3) bad("expected 'frame <id> <timestamp> key=path...'");
      FrameBundle f;
      f.id = w[1];
      auto [p, ec] = std::from_chars(w[2].data(), w[2].data() + w[2].size(), f.timestamp);
      if (ec != std::errc() || p != w[2].data() + w[2].size()) bad("bad timestamp '" + w[2] + "'");
      std::map<std::string, fs::path> refs;
      for (std::size_t k = 3; k < w.size(); ++k) {
        const auto eq = w[k].find('=');
        if (eq == std::string::npos) bad("expected key=path, got '" + w[k] + "'");
        refs[w[k].substr(0, eq)] = dir / w[k].substr(eq + 1);
      }
      for (const char* key : {"cloud", "superpixels", "heatmap", "pose"})
        if (!refs.count(key)) bad(std::string("frame '") + f.id + "' lacks " + key + "=");
      f.cloud = io::read_cloud(refs["cloud"]);
      f.superpixels = io::read_pgm(refs["superpixels"]);
      f.heatmap = io::read_heatmap(refs["heatmap"]);
      f.nav = io::read_pose(refs["pose"]);
      if (refs.count("points3d")) f.point_probs = io::read_point_probs(refs["points3d"]);
      if (refs.count("gt2d")) f.gt2d = io::read_pgm(refs["gt2d"]);
      if (refs.count("gt3d")) f.gt3d = io::read_point_labels(refs["gt3d"]);
      d.frames.push_back(std::move(f));
    } else {
      bad("unknown record '" + w[0] + "'");
    }
  }
  if (!have_labels) bad("missing labels line");
  if (d.name.empty()) d.name = dir.filename().string();
  d.camera = io::read_camera(dir / "camera.txt");
  d.validate();
  return d;
}

void write_domain(const fs::path& dir, const Domain& d) {
  d.validate();
  std::string manifest = "# fusioncrf-domain 1\nname " + d.name + "\nlabels";
  for (const auto& n : d.labels.names()) manifest += " " + n;
  manifest += "\n";
  io::write_camera(dir / "camera.txt", d.camera);
  for (const auto& f : d.frames) {
    const fs::path sub = f.id;
    // the binary layout has no room for the sensor origin
    const fs::path cloud = sub / (f.cloud.sensor_origin.isZero() ? "cloud.bin" : "cloud.txt");
    manifest += fmt::format("frame {} {:.17g} cloud={} superpixels={} heatmap={} pose={}", f.id, f.timestamp,
                            cloud.generic_string(), (sub / "superpixels.pgm").generic_string(),
                            (sub / "heatmap.txt").generic_string(), (sub / "pose.txt").generic_string());
    io::write_cloud(dir / cloud, f.cloud);
    io::write_pgm(dir / sub / "superpixels.pgm", f.superpixels);
    io::write_heatmap(dir / sub / "heatmap.txt", f.heatmap);
    io::write_pose(dir / sub / "pose.txt", f.nav);
    if (f.point_probs) {
      manifest += " points3d=" + (sub / "points3d.txt").generic_string();
      io::write_point_probs(dir / sub / "points3d.txt", *f.point_probs);
    }
    if (f.gt2d) {
      manifest += " gt2d=" + (sub / "gt2d.pgm").generic_string();
      io::write_pgm(dir / sub / "gt2d.pgm", *f.gt2d);
    }
    if (f.gt3d) {
      manifest += " gt3d=" + (sub / "gt3d.txt").generic_string();
      io::write_point_labels(dir / sub / "gt3d.txt", *f.gt3d);
    }
    manifest += "\n";
  }
  io::write_text(dir / "manifest.txt", manifest);
}

}  // namespace fusioncrf
