#include "fusioncrf/io.hpp"

#include <fmt/format.h>

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fusioncrf/error.hpp"

namespace fusioncrf::io {

namespace {

std::string where(const fs::path& path, std::size_t line) { return path.string() + ":" + std::to_string(line); }

// Whitespace-separated numeric fields of one line.
template <typename T>
bool parse_fields(std::string_view line, std::vector<T>& out) {
  out.clear();
  const char* p = line.data();
  const char* end = p + line.size();
  while (true) {
    while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
    if (p >= end) return true;
    T v{};
    auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc() || (next < end && *next != ' ' && *next != '\t' && *next != '\r')) return false;
    out.push_back(v);
    p = next;
  }
}

struct LineReader {
  fs::path path;
  std::istringstream in;
  std::size_t number = 0;
  std::string line;

  explicit LineReader(const fs::path& p) : path(p), in(read_text(p)) {}

  // Next line that is neither blank nor a comment; comments are returned
  // through `comment` when requested.
  bool next(std::string* comment = nullptr) {
    while (std::getline(in, line)) {
      ++number;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      if (line[first] == '#') {
        if (comment) *comment = line.substr(first + 1);
        continue;
      }
      return true;
    }
    return false;
  }

  template <typename T>
  std::vector<T> numbers(std::size_t expected = 0) {
    std::vector<T> v;
    if (!parse_fields(line, v) || (expected && v.size() != expected))
      fail(Errc::format, where(path, number) + ": expected " + (expected ? std::to_string(expected) + " " : "") +
                             "numeric fields");
    return v;
  }

  [[noreturn]] void error(const std::string& what) const { fail(Errc::format, where(path, number) + ": " + what); }
};

std::vector<std::string> words(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream ss{std::string(text)};
  for (std::string w; ss >> w;) out.push_back(w);
  return out;
}

// Scans the leading comment block for `# labels ...`.
LabelSet labels_header(const fs::path& path) {
  std::istringstream in(read_text(path));
  for (std::string line; std::getline(in, line);) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    if (line[first] != '#') break;
    auto w = words(std::string_view(line).substr(first + 1));
    if (!w.empty() && w[0] == "labels") return LabelSet(std::vector<std::string>(w.begin() + 1, w.end()));
  }
  fail(Errc::format, path.string() + ": missing '# labels' header");
}

std::string labels_line(const LabelSet& labels) {
  std::string s = "# labels";
  for (const auto& n : labels.names()) s += " " + n;
  return s + "\n";
}

std::string num(double v) { return fmt::format("{:.17g}", v); }

}  // namespace

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::io, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) fail(Errc::io, "write failed for '" + path.string() + "'");
}

PointCloud read_cloud(const fs::path& path) {
  PointCloud cloud;
  if (path.extension() == ".bin") {
    const std::string raw = read_text(path);
    if (raw.size() % 16 != 0) fail(Errc::format, path.string() + ": binary cloud size is not a multiple of 16 bytes");
    const auto n = static_cast<Eigen::Index>(raw.size() / 16);
    cloud.points.resize(3, n);
    cloud.intensity.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      float rec[4];
      std::memcpy(rec, raw.data() + 16 * i, 16);
      if constexpr (std::endian::native == std::endian::big) {
        for (float& f : rec) f = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(f)));
      }
      cloud.points.col(i) << rec[0], rec[1], rec[2];
      cloud.intensity[i] = rec[3];
    }
  } else {
    LineReader r(path);
    std::vector<double> xs;
    std::string comment;
    while (true) {
      comment.clear();
      const bool more = r.next(&comment);
      // origin comments may precede the data
      if (auto w = words(comment); w.size() == 4 && w[0] == "origin") {
        std::vector<double> o;
        if (!parse_fields(comment.substr(comment.find("origin") + 6), o) || o.size() != 3) r.error("bad origin line");
        cloud.sensor_origin << o[0], o[1], o[2];
      }
      if (!more) break;
      const auto v = r.numbers<double>(4);
      xs.insert(xs.end(), v.begin(), v.end());
    }
    const auto n = static_cast<Eigen::Index>(xs.size() / 4);
    cloud.points.resize(3, n);
    cloud.intensity.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      cloud.points.col(i) << xs[4 * i], xs[4 * i + 1], xs[4 * i + 2];
      cloud.intensity[i] = xs[4 * i + 3];
    }
  }
  require(cloud.points.allFinite() && cloud.intensity.allFinite(), Errc::format, path.string() + ": non-finite point");
  return cloud;
}

void write_cloud(const fs::path& path, const PointCloud& cloud) {
  cloud.validate();
  if (path.extension() == ".bin") {
    std::string raw(static_cast<std::size_t>(cloud.size()) * 16, '\0');
    for (Eigen::Index i = 0; i < cloud.size(); ++i) {
      const float rec[4] = {static_cast<float>(cloud.points(0, i)), static_cast<float>(cloud.points(1, i)),
                            static_cast<float>(cloud.points(2, i)), static_cast<float>(cloud.intensity[i])};
      std::memcpy(raw.data() + 16 * i, rec, 16);
    }
    write_text(path, raw);
    return;
  }
  std::string s = fmt::format("# origin {} {} {}\n", num(cloud.sensor_origin.x()), num(cloud.sensor_origin.y()),
                              num(cloud.sensor_origin.z()));
  for (Eigen::Index i = 0; i < cloud.size(); ++i)
    s += fmt::format("{} {} {} {}\n", num(cloud.points(0, i)), num(cloud.points(1, i)), num(cloud.points(2, i)),
                     num(cloud.intensity[i]));
  write_text(path, s);
}

LabelImage read_pgm(const fs::path& path) {
  const std::string raw = read_text(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < raw.size()) {
      if (raw[pos] == '#') {
        while (pos < raw.size() && raw[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(raw[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < raw.size() && !std::isspace(static_cast<unsigned char>(raw[pos]))) ++pos;
    if (start == pos) fail(Errc::format, path.string() + ": truncated PGM header");
    return raw.substr(start, pos - start);
  };
  auto integer = [&](const std::string& t) {
    long v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size() || v < 0) fail(Errc::format, path.string() + ": bad PGM number");
    return v;
  };
  const std::string magic = token();
  if (magic != "P2" && magic != "P5") fail(Errc::format, path.string() + ": not a P2/P5 graymap");
  const long w = integer(token()), h = integer(token()), maxval = integer(token());
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) fail(Errc::format, path.string() + ": bad PGM dimensions");
  LabelImage img(h, w);
  if (magic == "P2") {
    for (long i = 0; i < w * h; ++i) img.data()[i] = static_cast<std::int32_t>(integer(token()));
  } else {
    ++pos;  // single whitespace after maxval
    const std::size_t bytes = maxval > 255 ? 2 : 1;
    if (raw.size() < pos + bytes * static_cast<std::size_t>(w * h)) fail(Errc::format, path.string() + ": truncated PGM data");
    const auto* d = reinterpret_cast<const unsigned char*>(raw.data() + pos);
    for (long i = 0; i < w * h; ++i)
      img.data()[i] = bytes == 2 ? (d[2 * i] << 8) | d[2 * i + 1] : d[i];
  }
  if (img.size() && img.maxCoeff() > maxval) fail(Errc::format, path.string() + ": PGM value above maxval");
  return img;
}

void write_pgm(const fs::path& path, const LabelImage& image) {
  require(image.size() > 0, Errc::invalid_argument, "cannot write an empty image");
  require(image.minCoeff() >= 0 && image.maxCoeff() <= 65535, Errc::invalid_argument, "PGM values must lie in [0, 65535]");
  const bool wide = image.maxCoeff() > 255;
  std::string s = fmt::format("P5\n{} {}\n{}\n", image.cols(), image.rows(), wide ? 65535 : 255);
  for (Eigen::Index i = 0; i < image.size(); ++i) {
    const auto v = static_cast<unsigned>(image.data()[i]);
    if (wide) s.push_back(static_cast<char>(v >> 8));
    s.push_back(static_cast<char>(v & 0xff));
  }
  write_text(path, s);
}

Heatmap read_heatmap(const fs::path& path) {
  Heatmap hm;
  hm.probs.labels = labels_header(path);
  const int L = hm.probs.labels.count();
  LineReader r(path);
  std::vector<std::vector<double>> rows;
  while (r.next()) {
    auto v = r.numbers<double>(static_cast<std::size_t>(4 + L));
    if (v[0] != static_cast<double>(rows.size())) r.error("superpixel ids must be consecutive from 0");
    rows.push_back(std::move(v));
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  hm.probs.probs.resize(n, L);
  hm.rgb.resize(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& v = rows[static_cast<std::size_t>(i)];
    hm.rgb.row(i) << v[1], v[2], v[3];
    for (int l = 0; l < L; ++l) hm.probs.probs(i, l) = v[static_cast<std::size_t>(4 + l)];
  }
  require((hm.rgb.array() >= 0.0).all() && (hm.rgb.array() <= 1.0).all(), Errc::format,
          path.string() + ": rgb components must lie in [0, 1]");
  hm.probs.validate();
  return hm;
}

void write_heatmap(const fs::path& path, const Heatmap& hm) {
  require(hm.rgb.rows() == hm.probs.size(), Errc::dimension_mismatch, "one rgb row per superpixel expected");
  std::string s = labels_line(hm.probs.labels);
  for (Eigen::Index i = 0; i < hm.probs.size(); ++i) {
    s += fmt::format("{} {} {} {}", i, num(hm.rgb(i, 0)), num(hm.rgb(i, 1)), num(hm.rgb(i, 2)));
    for (Eigen::Index l = 0; l < hm.probs.probs.cols(); ++l) s += " " + num(hm.probs.probs(i, l));
    s += "\n";
  }
  write_text(path, s);
}

ProbabilityTable read_point_probs(const fs::path& path) {
  ProbabilityTable t;
  t.labels = labels_header(path);
  const auto L = static_cast<std::size_t>(t.labels.count());
  LineReader r(path);
  std::vector<double> all;
  while (r.next()) {
    const auto v = r.numbers<double>(L);
    all.insert(all.end(), v.begin(), v.end());
  }
  t.probs = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      all.data(), static_cast<Eigen::Index>(all.size() / L), static_cast<Eigen::Index>(L));
  t.validate();
  return t;
}

void write_point_probs(const fs::path& path, const ProbabilityTable& table) {
  std::string s = labels_line(table.labels);
  for (Eigen::Index i = 0; i < table.size(); ++i) {
    for (Eigen::Index l = 0; l < table.probs.cols(); ++l) s += (l ? " " : "") + num(table.probs(i, l));
    s += "\n";
  }
  write_text(path, s);
}

std::vector<int> read_point_labels(const fs::path& path) {
  LineReader r(path);
  std::vector<int> out;
  while (r.next()) {
    const auto v = r.numbers<int>(1);
    if (v[0] < -1) r.error("labels must be -1 or nonnegative");
    out.push_back(v[0]);
  }
  return out;
}

void write_point_labels(const fs::path& path, const std::vector<int>& labels) {
  std::string s;
  for (int l : labels) s += std::to_string(l) + "\n";
  write_text(path, s);
}

NavSample read_pose(const fs::path& path) {
  LineReader r(path);
  if (!r.next()) fail(Errc::format, path.string() + ": empty pose file");
  const auto v = r.numbers<double>(14);
  NavSample nav;
  nav.timestamp = v[0];
  Eigen::Quaterniond q(v[4], v[5], v[6], v[7]);
  if (!(q.norm() > 1e-9)) r.error("zero quaternion");
  nav.pose = Eigen::Translation3d(v[1], v[2], v[3]) * q.normalized();
  for (int i = 0; i < 6; ++i) nav.covariance_diag[i] = v[static_cast<std::size_t>(8 + i)];
  try {
    nav.validate();
  } catch (const Error& e) {
    r.error(e.what());
  }
  return nav;
}

void write_pose(const fs::path& path, const NavSample& nav) {
  const Eigen::Quaterniond q(nav.pose.linear());
  const Eigen::Vector3d t = nav.pose.translation();
  std::string s = fmt::format("{} {} {} {} {} {} {} {}", num(nav.timestamp), num(t.x()), num(t.y()), num(t.z()),
                              num(q.w()), num(q.x()), num(q.y()), num(q.z()));
  for (int i = 0; i < 6; ++i) s += " " + num(nav.covariance_diag[i]);
  write_text(path, s + "\n");
}

CameraModel read_camera(const fs::path& path) {
  LineReader r(path);
  std::vector<double> all;
  while (r.next()) {
    const auto v = r.numbers<double>();
    all.insert(all.end(), v.begin(), v.end());
  }
  if (all.size() != 23) fail(Errc::format, path.string() + ": camera file needs 23 numbers, found " + std::to_string(all.size()));
  CameraModel cam;
  cam.width = static_cast<int>(all[0]);
  cam.height = static_cast<int>(all[1]);
  cam.fx = all[2];
  cam.fy = all[3];
  cam.cx = all[4];
  cam.cy = all[5];
  cam.k1 = all[6];
  cam.k2 = all[7];
  cam.k3 = all[8];
  cam.p1 = all[9];
  cam.p2 = all[10];
  Eigen::Matrix3d rot;
  for (int i = 0; i < 9; ++i) rot(i / 3, i % 3) = all[static_cast<std::size_t>(11 + i)];
  if (!(rot.transpose() * rot).isIdentity(1e-6) || rot.determinant() < 0.0)
    fail(Errc::format, path.string() + ": rotation is not orthonormal");
  cam.lidar_to_camera.linear() = rot;
  cam.lidar_to_camera.translation() << all[20], all[21], all[22];
  try {
    cam.validate();
  } catch (const Error& e) {
    fail(Errc::format, path.string() + ": " + e.what());
  }
  return cam;
}

void write_camera(const fs::path& path, const CameraModel& cam) {
  const auto& R = cam.lidar_to_camera.linear();
  const auto& t = cam.lidar_to_camera.translation();
  std::string s = fmt::format("{} {}\n{} {} {} {}\n{} {} {} {} {}\n", cam.width, cam.height, num(cam.fx), num(cam.fy),
                              num(cam.cx), num(cam.cy), num(cam.k1), num(cam.k2), num(cam.k3), num(cam.p1), num(cam.p2));
  for (int i = 0; i < 3; ++i) s += fmt::format("{} {} {}\n", num(R(i, 0)), num(R(i, 1)), num(R(i, 2)));
  s += fmt::format("{} {} {}\n", num(t.x()), num(t.y()), num(t.z()));
  write_text(path, s);
}

void write_weights(const fs::path& path, const WeightSet& weights, const LabelSet& labels) {
  require(weights.label_count() == labels.count(), Errc::label_space_mismatch, "weights and label set differ in size");
  std::string s = "fusioncrf-weights 1\nlabels";
  for (const auto& n : labels.names()) s += " " + n;
  s += "\nl2_lambda " + num(weights.l2_lambda) + "\n";
  for (auto kind : kAllEdgeKinds) {
    for (int bias = 0; bias < 2; ++bias) {
      const auto& m = bias ? weights.biases(kind) : weights.weights(kind);
      s += fmt::format("{} {}\n", bias ? "b" : "w", to_string(kind));
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) s += (j ? " " : "") + num(m(i, j));
        s += "\n";
      }
    }
  }
  write_text(path, s);
}

std::pair<WeightSet, LabelSet> read_weights(const fs::path& path) {
  LineReader r(path);
  if (!r.next() || words(r.line) != std::vector<std::string>{"fusioncrf-weights", "1"})
    fail(Errc::format, path.string() + ": not a version 1 weights checkpoint");
  if (!r.next()) r.error("missing labels line");
  auto w = words(r.line);
  if (w.empty() || w[0] != "labels") r.error("expected 'labels'");
  LabelSet labels(std::vector<std::string>(w.begin() + 1, w.end()));
  const int L = labels.count();
  WeightSet ws(L);
  if (!r.next()) r.error("missing l2_lambda line");
  w = words(r.line);
  if (w.size() != 2 || w[0] != "l2_lambda") r.error("expected 'l2_lambda <value>'");
  {
    std::vector<double> v;
    if (!parse_fields(w[1], v) || v.size() != 1 || !(v[0] >= 0.0)) r.error("bad l2_lambda");
    ws.l2_lambda = v[0];
  }
  std::array<std::array<bool, 2>, kEdgeKindCount> seen{};
  while (r.next()) {
    w = words(r.line);
    const auto kind = w.size() == 2 ? edge_kind_from_string(w[1]) : std::nullopt;
    if (!kind || (w[0] != "w" && w[0] != "b")) r.error("expected '<w|b> <edge kind>'");
    const bool bias = w[0] == "b";
    auto& m = bias ? ws.biases(*kind) : ws.weights(*kind);
    for (int i = 0; i < L; ++i) {
      if (!r.next()) r.error("truncated matrix");
      const auto v = r.numbers<double>(static_cast<std::size_t>(L));
      for (int j = 0; j < L; ++j) m(i, j) = v[static_cast<std::size_t>(j)];
    }
    seen[static_cast<std::size_t>(to_index(*kind))][bias ? 1 : 0] = true;
  }
  for (const auto& s : seen)
    if (!s[0] || !s[1]) fail(Errc::format, path.string() + ": checkpoint lacks a weight or bias block");
  if (!ws.has_valid_structure()) fail(Errc::format, path.string() + ": weights violate symmetry or zero-diagonal structure");
  return {std::move(ws), std::move(labels)};
}

WeightSet read_weights(const fs::path& path, const LabelSet& expected) {
  auto [ws, labels] = read_weights(path);
  if (!(labels == expected))
    fail(Errc::label_space_mismatch, path.string() + ": checkpoint label set differs from the configured one");
  return ws;
}

}  // namespace fusioncrf::io
