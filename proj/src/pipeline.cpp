#include "fusioncrf/pipeline.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <mutex>
#include <set>
#include <thread>

#include "fusioncrf/error.hpp"
#include "fusioncrf/potentials.hpp"

namespace fusioncrf {

namespace {

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    const auto count = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    for (std::size_t t = 0; t < count; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

ProbabilityTable map_table(const ProbabilityTable& in, const LabelMapping& m) {
  ProbabilityTable out;
  out.labels = m.target;
  out.probs = Eigen::MatrixXd::Zero(in.probs.rows(), m.target.count());
  for (int l = 0; l < in.labels.count(); ++l) out.probs.col(m(l)) += in.probs.col(l);
  return out;
}

int majority(const Eigen::VectorXi& counts) {
  if (counts.sum() == 0) return -1;
  Eigen::Index best = 0;
  counts.maxCoeff(&best);  // first maximum
  return static_cast<int>(best);
}

template <typename F>
auto with_frame(const std::string& id, F&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    fail(e.code(), "frame '" + id + "': " + e.what());
  }
}

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  return fmt::format("{:.10f}", v);
}

const char* to_string(DecodeMethod m) { return m == DecodeMethod::max_product ? "map" : "marginal"; }

}  // namespace

LabelMapping label_mapping(const LabelSet& source, const LabelSet& target) {
  if (source == target) return LabelMapping::identity(source);
  const LabelSet nine = LabelSet::nine_class(), four = LabelSet::four_class(), two = LabelSet::binary();
  if (source == nine && target == four) return LabelMapping::nine_to_four();
  if (source == four && target == two) return LabelMapping::four_to_binary();
  if (source == nine && target == two) return LabelMapping::nine_to_four().then(LabelMapping::four_to_binary());
  fail(Errc::label_space_mismatch, "no label mapping preset leads to the configured label set");
}

FrameGeometry frame_geometry(const FrameBundle& frame, const PipelineConfig& cfg) {
  return with_frame(frame.id, [&] {
    FrameGeometry g;
    if (cfg.align_ground) {
      RansacParams rp = cfg.ransac;
      rp.seed = cfg.ransac.seed ^ fnv1a(frame.id);
      GroundAlignment a = align_ground_plane(frame.cloud, rp);
      g.cloud = std::move(a.cloud);
      g.alignment = a.transform;
    } else {
      g.cloud = frame.cloud;
    }
    g.features = extract_features(g.cloud, cfg.neighborhood, cfg.threads);
    return g;
  });
}

PreparedFrame prepare_frame(const FrameBundle& frame, const CameraModel& camera, const LabelSet& domain_labels,
                            const PointClassifier* classifier, const PipelineConfig& cfg, const FrameGeometry* geometry) {
  return with_frame(frame.id, [&] {
    frame.validate(domain_labels, camera);
    const LabelMapping mapping = label_mapping(domain_labels, cfg.labels);
    const int L = cfg.labels.count();

    FrameGeometry own;
    if (!geometry) {
      own = frame_geometry(frame, cfg);
      geometry = &own;
    }
    PreparedFrame p;
    p.id = frame.id;
    p.labels = cfg.labels;
    p.cloud = geometry->cloud;
    p.features = geometry->features;
    const Eigen::Isometry3d inv = geometry->alignment.inverse();
    p.camera = camera;
    p.camera.lidar_to_camera = camera.lidar_to_camera * inv;
    p.nav = frame.nav;
    p.nav.pose = frame.nav.pose * inv;

    // 2D side
    p.superpixels = frame.superpixels;
    p.superpixel_probs = map_table(frame.heatmap.probs, mapping);
    p.superpixel_rgb = frame.heatmap.rgb;
    std::set<int> ids;
    std::set<std::pair<int, int>> adjacency;
    const auto& sp = p.superpixels;
    for (Eigen::Index y = 0; y < sp.rows(); ++y) {
      for (Eigen::Index x = 0; x < sp.cols(); ++x) {
        const int s = sp(y, x);
        if (s < 0) continue;
        ids.insert(s);
        for (const auto& [ny, nx] : {std::pair{y, x + 1}, std::pair{y + 1, x}}) {
          if (ny >= sp.rows() || nx >= sp.cols()) continue;
          const int t = sp(ny, nx);
          if (t >= 0 && t != s) adjacency.emplace(std::min(s, t), std::max(s, t));
        }
      }
    }
    p.superpixel_ids.assign(ids.begin(), ids.end());
    p.superpixel_adjacency.assign(adjacency.begin(), adjacency.end());

    // 3D side
    bool use_file = frame.point_probs.has_value();
    if (cfg.point_source == PointSource::file) {
      require(use_file, Errc::invalid_argument, "no point probability file");
    } else if (cfg.point_source == PointSource::classifier) {
      use_file = false;
    }
    if (use_file) {
      p.point_probs = map_table(*frame.point_probs, mapping);
    } else {
      require(classifier != nullptr, Errc::invalid_argument, "no point classifier for 3D probabilities");
      require(classifier->labels() == cfg.labels, Errc::label_space_mismatch,
              "point classifier labels differ from the configured label set");
      p.point_probs = classify_points(p.features, *classifier);
    }
    const AdmissibleMask lmask = lidar_mask(cfg.labels);
    for (int l = 0; l < L; ++l)
      if (!lmask(l)) p.point_probs.probs.col(l).setZero();
    for (Eigen::Index i = 0; i < p.point_probs.probs.rows(); ++i) {
      const double s = p.point_probs.probs.row(i).sum();
      if (s > 0.0) {
        p.point_probs.probs.row(i) /= s;
      } else {
        for (int l = 0; l < L; ++l) p.point_probs.probs(i, l) = lmask(l) ? 1.0 / lmask.count() : 0.0;
      }
    }
    p.normal_angles = p.features.row(7).transpose().array().min(1.0).max(0.0).acos();
    p.segmentation = cluster(p.cloud, p.point_probs, cfg.supervoxel, p.normal_angles);
    p.overlaps = crossmodal_edges(p.cloud, p.segmentation.segments, p.superpixels, p.camera);

    // ground truth in the configured label set
    if (frame.gt2d) {
      LabelImage g(frame.gt2d->rows(), frame.gt2d->cols());
      for (Eigen::Index i = 0; i < g.size(); ++i) {
        const int l = frame.gt2d->data()[i];
        g.data()[i] = l == kUnlabeledPixel ? -1 : mapping(l);
      }
      std::vector<Eigen::VectorXi> counts(static_cast<std::size_t>(p.superpixel_probs.size()), Eigen::VectorXi::Zero(L));
      for (Eigen::Index i = 0; i < g.size(); ++i) {
        const int s = sp.data()[i], l = g.data()[i];
        if (s >= 0 && l >= 0) ++counts[static_cast<std::size_t>(s)](l);
      }
      for (const auto& c : counts) p.superpixel_truth.push_back(majority(c));
      p.gt2d = std::move(g);
    }
    if (frame.gt3d) {
      std::vector<int> g(frame.gt3d->size());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = (*frame.gt3d)[i] < 0 ? -1 : mapping((*frame.gt3d)[i]);
      for (const auto& seg : p.segmentation.segments) {
        Eigen::VectorXi c = Eigen::VectorXi::Zero(L);
        for (int m : seg.member_points)
          if (g[static_cast<std::size_t>(m)] >= 0) ++c(g[static_cast<std::size_t>(m)]);
        const int l = majority(c);
        p.supervoxel_truth.push_back(l >= 0 && lmask(l) ? l : -1);
      }
      p.gt3d = std::move(g);
    }
    return p;
  });
}

namespace {

void add_frame_nodes(const PreparedFrame& f, int slot, const GraphSpec& spec, const PipelineConfig& cfg,
                     std::vector<std::pair<NodeRef, NodePayload>>& nodes, std::vector<Edge>& edges) {
  const AdmissibleMask imask = image_mask(cfg.labels), lmask = lidar_mask(cfg.labels);
  const double floor = cfg.kernels.prob_floor;
  if (spec.image) {
    for (int id : f.superpixel_ids) {
      NodePayload pl = NodePayload::from_probabilities(f.superpixel_probs.probs.row(id).transpose(), imask, floor);
      pl.mean_rgb = f.superpixel_rgb.row(id).transpose();
      nodes.emplace_back(NodeRef{slot, Modality::image2d, id}, std::move(pl));
    }
    if (spec.spatial) {
      for (const auto& [a, b] : f.superpixel_adjacency) {
        const double k = rgb_kernel(f.superpixel_rgb.row(a).transpose(), f.superpixel_rgb.row(b).transpose(),
                                    cfg.kernels.sigma_2d);
        edges.push_back({EdgeKind::spatial2d, {slot, Modality::image2d, a}, {slot, Modality::image2d, b}, k});
      }
    }
  }
  if (spec.lidar) {
    for (const auto& seg : f.segmentation.segments) {
      NodePayload pl = NodePayload::from_probabilities(seg.mean_probs, lmask, floor);
      pl.centroid3d = seg.centroid;
      pl.normal_angle = seg.mean_normal_angle;
      nodes.emplace_back(NodeRef{slot, Modality::lidar3d, seg.id}, std::move(pl));
    }
    if (spec.spatial) {
      const auto& segs = f.segmentation.segments;
      for (const auto& [a, b] : f.segmentation.adjacency) {
        const double k = normal_kernel(segs[static_cast<std::size_t>(a)].mean_normal_angle,
                                       segs[static_cast<std::size_t>(b)].mean_normal_angle, cfg.kernels.sigma_3d);
        edges.push_back({EdgeKind::spatial3d, {slot, Modality::lidar3d, a}, {slot, Modality::lidar3d, b}, k});
      }
    }
  }
  if (spec.image && spec.lidar && spec.cross_modal) {
    for (const auto& o : f.overlaps)
      edges.push_back({EdgeKind::cross_modal, {slot, Modality::image2d, o.superpixel_id},
                       {slot, Modality::lidar3d, o.supervoxel_id}, o.normalized_weight});
  }
}

struct GraphParts {
  std::vector<std::pair<NodeRef, NodePayload>> nodes;
  std::vector<Edge> edges;
  std::set<NodeRef> hidden;
};

GraphParts frame_graph_parts(const PreparedFrame& current, const PreparedFrame* previous, const GraphSpec& spec,
                             const PipelineConfig& cfg) {
  GraphParts g;
  add_frame_nodes(current, kCurrentFrame, spec, cfg, g.nodes, g.edges);
  if (previous && spec.temporal && spec.lidar) {
    const auto before = g.nodes.size();
    add_frame_nodes(*previous, kPreviousFrame, spec, cfg, g.nodes, g.edges);
    for (auto i = before; i < g.nodes.size(); ++i) g.hidden.insert(g.nodes[i].first);
    const auto links = temporal_edges(current.segmentation.segments, previous->segmentation.segments, previous->nav,
                                      current.nav, cfg.temporal_gate_m, cfg.kernels);
    for (const auto& l : links)
      g.edges.push_back({EdgeKind::temporal, {kPreviousFrame, Modality::lidar3d, l.previous_id},
                         {kCurrentFrame, Modality::lidar3d, l.current_id}, l.kernel});
  }
  return g;
}

int node_truth(const PreparedFrame& f, const NodeRef& r) {
  const auto& truth = r.modality == Modality::image2d ? f.superpixel_truth : f.supervoxel_truth;
  if (r.index < 0 || static_cast<std::size_t>(r.index) >= truth.size()) return -1;
  return truth[static_cast<std::size_t>(r.index)];
}

}  // namespace

FusionGraph build_frame_graph(const PreparedFrame& current, const PreparedFrame* previous, const GraphSpec& spec,
                              const PipelineConfig& cfg) {
  GraphParts g = frame_graph_parts(current, previous, spec, cfg);
  return with_frame(current.id, [&] {
    return build_graph(cfg.labels, std::move(g.nodes), std::move(g.edges), std::move(g.hidden));
  });
}

TrainingExample make_training_example(const PreparedFrame& current, const PreparedFrame* previous,
                                      const GraphSpec& spec, const PipelineConfig& cfg) {
  require(current.annotated(), Errc::missing_annotations, "frame '" + current.id + "' has no annotations");
  GraphParts g = frame_graph_parts(current, previous, spec, cfg);
  for (const auto& [ref, payload] : g.nodes)
    if (ref.frame == kCurrentFrame && node_truth(current, ref) < 0) g.hidden.insert(ref);
  return with_frame(current.id, [&] {
    FusionGraph graph = build_graph(cfg.labels, std::move(g.nodes), std::move(g.edges), std::move(g.hidden));
    Labeling observed(static_cast<std::size_t>(graph.node_count()), -1);
    for (int i = 0; i < graph.node_count(); ++i)
      if (!graph.is_hidden(i)) observed[static_cast<std::size_t>(i)] = node_truth(current, graph.ref(i));
    return TrainingExample::make(std::move(graph), std::move(observed));
  });
}

FrameLabels broadcast_labels(const FusionGraph& graph, const Labeling& labeling, const PreparedFrame& current) {
  FrameLabels out;
  out.image = LabelImage::Constant(current.superpixels.rows(), current.superpixels.cols(), -1);
  const auto lookup = [&](Modality m, int id) {
    const auto node = graph.find(NodeRef{kCurrentFrame, m, id});
    return node ? labeling[static_cast<std::size_t>(*node)] : -1;
  };
  std::map<int, int> sp_label;
  for (int id : current.superpixel_ids) sp_label[id] = lookup(Modality::image2d, id);
  for (Eigen::Index i = 0; i < current.superpixels.size(); ++i) {
    const int s = current.superpixels.data()[i];
    if (s >= 0) out.image.data()[i] = sp_label[s];
  }
  std::vector<int> sv_label;
  for (const auto& seg : current.segmentation.segments) sv_label.push_back(lookup(Modality::lidar3d, seg.id));
  out.points.resize(current.segmentation.point_segment.size());
  for (std::size_t i = 0; i < out.points.size(); ++i) {
    const int s = current.segmentation.point_segment[i];
    out.points[i] = s >= 0 ? sv_label[static_cast<std::size_t>(s)] : -1;
  }
  return out;
}

FrameResult decode_frame(const FusionGraph& graph, const PreparedFrame& current, const WeightSet& weights,
                         const PipelineConfig& cfg, DecodeMethod method) {
  FrameResult r;
  r.inference = sum_product(graph, weights, cfg.bp);
  r.node_labels = method == DecodeMethod::max_product ? max_product_decode(graph, weights, cfg.bp)
                                                      : marginal_argmax(graph, r.inference);
  r.labels = broadcast_labels(graph, r.node_labels, current);
  return r;
}

FrameResult process_frame(const FrameBundle& current, const FrameBundle* previous, const CameraModel& camera,
                          const LabelSet& domain_labels, const WeightSet& weights, const PointClassifier* classifier,
                          const PipelineConfig& cfg, DecodeMethod method) {
  require(weights.label_count() == cfg.labels.count(), Errc::label_space_mismatch,
          "weights do not match the configured label set");
  const PreparedFrame cur = prepare_frame(current, camera, domain_labels, classifier, cfg);
  std::optional<PreparedFrame> prev;
  if (previous) prev = prepare_frame(*previous, camera, domain_labels, classifier, cfg);
  GraphSpec spec;
  spec.temporal = prev.has_value();
  const FusionGraph graph = build_frame_graph(cur, prev ? &*prev : nullptr, spec, cfg);
  return decode_frame(graph, cur, weights, cfg, method);
}

// ---- metrics ----------------------------------------------------------------

void Confusion::add(int truth, int prediction) {
  if (truth < 0) return;
  const auto L = counts.rows();
  require(truth < L && prediction < L, Errc::invalid_argument, "label outside the confusion matrix");
  ++counts(truth, prediction < 0 ? L : prediction);
}

Confusion& Confusion::operator+=(const Confusion& other) {
  if (counts.size() == 0) {
    counts = other.counts;
  } else {
    require(counts.rows() == other.counts.rows(), Errc::dimension_mismatch, "confusion matrices differ in size");
    counts += other.counts;
  }
  return *this;
}

ModalityMetrics ModalityMetrics::from(const Confusion& confusion) {
  ModalityMetrics m;
  m.confusion = confusion;
  const auto& c = confusion.counts;
  const auto L = c.rows();
  m.iou = Eigen::VectorXd::Constant(L, std::numeric_limits<double>::quiet_NaN());
  m.present.assign(static_cast<std::size_t>(L), false);
  long long correct = 0;
  double sum = 0.0;
  int present = 0;
  for (Eigen::Index l = 0; l < L; ++l) {
    const long long tp = c(l, l);
    const long long fn = c.row(l).sum() - tp;
    const long long fp = c.col(l).sum() - tp;
    correct += tp;
    if (tp + fn + fp > 0) m.iou(l) = static_cast<double>(tp) / static_cast<double>(tp + fn + fp);
    if (tp + fn > 0) {
      m.present[static_cast<std::size_t>(l)] = true;
      sum += m.iou(l);
      ++present;
    }
  }
  m.evaluated = c.sum();
  m.accuracy = m.evaluated > 0 ? static_cast<double>(correct) / static_cast<double>(m.evaluated)
                               : std::numeric_limits<double>::quiet_NaN();
  m.mean_iou = present > 0 ? sum / present : std::numeric_limits<double>::quiet_NaN();
  return m;
}

Confusion confusion_2d(const LabelImage& prediction, const LabelImage& truth, int labels) {
  require(prediction.rows() == truth.rows() && prediction.cols() == truth.cols(), Errc::dimension_mismatch,
          "2D prediction and annotation differ in size");
  Confusion c(labels);
  for (Eigen::Index i = 0; i < truth.size(); ++i) c.add(truth.data()[i], prediction.data()[i]);
  return c;
}

Confusion confusion_3d(const std::vector<int>& prediction, const std::vector<int>& truth, int labels) {
  require(prediction.size() == truth.size(), Errc::dimension_mismatch, "3D prediction and annotation differ in length");
  Confusion c(labels);
  for (std::size_t i = 0; i < truth.size(); ++i) c.add(truth[i], prediction[i]);
  return c;
}

MetricsReport evaluate(const LabelImage& prediction2d, const LabelImage& truth2d, const std::vector<int>& prediction3d,
                       const std::vector<int>& truth3d, const LabelSet& labels) {
  MetricsReport r;
  r.labels = labels;
  r.image = ModalityMetrics::from(confusion_2d(prediction2d, truth2d, labels.count()));
  r.lidar = ModalityMetrics::from(confusion_3d(prediction3d, truth3d, labels.count()));
  return r;
}

// ---- variants and splits -----------------------------------------------------

const char* to_string(Variant v) noexcept {
  switch (v) {
    case Variant::initial: return "initial";
    case Variant::single_modality: return "single_modality";
    case Variant::fused: return "fused";
    case Variant::fused_temporal: return "fused_temporal";
  }
  return "unknown";
}

std::optional<Variant> variant_from_string(std::string_view name) noexcept {
  for (auto v : kAllVariants)
    if (name == to_string(v)) return v;
  return std::nullopt;
}

std::vector<GraphSpec> graph_specs(Variant v) {
  switch (v) {
    case Variant::initial: return {};
    case Variant::single_modality: return {{true, false, true, false, false}, {false, true, true, false, false}};
    case Variant::fused: return {{true, true, true, true, false}};
    case Variant::fused_temporal: return {{true, true, true, true, true}};
  }
  return {};
}

const char* to_string(SplitKind s) noexcept {
  switch (s) {
    case SplitKind::leave_one_domain_out: return "leave_one_domain_out";
    case SplitKind::domain_training: return "domain_training";
    case SplitKind::adaptation_training: return "adaptation_training";
  }
  return "unknown";
}

std::optional<SplitKind> split_from_string(std::string_view name) noexcept {
  for (auto s : {SplitKind::leave_one_domain_out, SplitKind::domain_training, SplitKind::adaptation_training})
    if (name == to_string(s)) return s;
  return std::nullopt;
}

std::vector<Fold> make_folds(const std::vector<Domain>& domains, SplitKind split) {
  std::vector<std::vector<FrameRef>> annotated(domains.size());
  for (std::size_t d = 0; d < domains.size(); ++d) {
    for (std::size_t f = 0; f < domains[d].frames.size(); ++f)
      if (domains[d].frames[f].annotated()) annotated[d].push_back({static_cast<int>(d), static_cast<int>(f)});
    require(!annotated[d].empty(), Errc::missing_annotations, "domain '" + domains[d].name + "' has no annotated frames");
  }
  std::vector<Fold> folds;
  if (split == SplitKind::leave_one_domain_out) {
    require(domains.size() >= 2, Errc::invalid_argument, "leave-one-domain-out needs at least two domains");
    for (std::size_t d = 0; d < domains.size(); ++d) {
      Fold f{domains[d].name, static_cast<int>(d), annotated[d], {}};
      for (std::size_t o = 0; o < domains.size(); ++o)
        if (o != d) f.train.insert(f.train.end(), annotated[o].begin(), annotated[o].end());
      folds.push_back(std::move(f));
    }
    return folds;
  }
  for (std::size_t d = 0; d < domains.size(); ++d) {
    const auto& a = annotated[d];
    require(a.size() >= 2, Errc::missing_annotations,
            "domain '" + domains[d].name + "' needs two annotated frames to be split in halves");
    const auto mid = a.begin() + static_cast<std::ptrdiff_t>((a.size() + 1) / 2);
    const std::vector<FrameRef> first(a.begin(), mid), second(mid, a.end());
    std::vector<FrameRef> others;
    if (split == SplitKind::adaptation_training) {
      for (std::size_t o = 0; o < domains.size(); ++o)
        if (o != d) others.insert(others.end(), annotated[o].begin(), annotated[o].end());
    }
    for (int half = 0; half < 2; ++half) {
      Fold f{domains[d].name + (half == 0 ? ".first" : ".second"), static_cast<int>(d), half == 0 ? first : second,
             half == 0 ? second : first};
      f.train.insert(f.train.end(), others.begin(), others.end());
      std::sort(f.train.begin(), f.train.end());
      folds.push_back(std::move(f));
    }
  }
  return folds;
}

// ---- training ---------------------------------------------------------------

std::unique_ptr<PointClassifier> train_point_classifier(const std::vector<const FeatureMatrix*>& features,
                                                        const std::vector<std::vector<int>>& labels,
                                                        const PipelineConfig& cfg) {
  require(features.size() == labels.size(), Errc::dimension_mismatch, "one label list per feature matrix expected");
  Eigen::Index total = 0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    require(static_cast<Eigen::Index>(labels[i].size()) == features[i]->cols(), Errc::dimension_mismatch,
            "one label per feature column expected");
    total += features[i]->cols();
  }
  require(total > 0, Errc::missing_annotations, "no points to train the point classifier on");
  const AdmissibleMask mask = lidar_mask(cfg.labels);
  Eigen::MatrixXd x(features.front()->rows(), total);
  std::vector<int> y(static_cast<std::size_t>(total));
  Eigen::Index at = 0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    x.middleCols(at, features[i]->cols()) = *features[i];
    for (std::size_t k = 0; k < labels[i].size(); ++k) {
      const int l = labels[i][k];
      y[static_cast<std::size_t>(at) + k] = l >= 0 && mask(l) ? l : -1;
    }
    at += features[i]->cols();
  }
  return std::make_unique<LogisticClassifier>(LogisticClassifier::train(x, y, cfg.labels, mask, cfg.classifier));
}

FitResult train_weights(const std::vector<std::pair<const PreparedFrame*, const PreparedFrame*>>& frames, Variant variant,
                        const PipelineConfig& cfg) {
  std::vector<TrainingExample> dataset;
  for (const auto& spec : graph_specs(variant)) {
    for (const auto& [cur, prev] : frames) {
      TrainingExample ex = make_training_example(*cur, spec.temporal ? prev : nullptr, spec, cfg);
      const bool any = std::any_of(ex.observed.begin(), ex.observed.end(), [](int l) { return l >= 0; });
      if (any) dataset.push_back(std::move(ex));
    }
  }
  require(!dataset.empty(), Errc::missing_annotations, "no annotated nodes to train on");
  TrainConfig tc = cfg.train;
  tc.threads = cfg.threads;
  WeightSet init(cfg.labels.count());
  init.l2_lambda = tc.l2_lambda;
  return fit(dataset, tc, cfg.bp, init);
}

// ---- cross-validation -------------------------------------------------------

CrossValidationReport cross_validate(const std::vector<Domain>& domains, SplitKind split, const PipelineConfig& cfg,
                                     const std::vector<Variant>& variants) {
  cfg.validate();
  for (const auto& d : domains) {
    d.validate();
    label_mapping(d.labels, cfg.labels);
  }
  const std::vector<Fold> folds = make_folds(domains, split);

  std::vector<FrameRef> all;
  for (std::size_t d = 0; d < domains.size(); ++d)
    for (std::size_t f = 0; f < domains[d].frames.size(); ++f) all.push_back({static_cast<int>(d), static_cast<int>(f)});
  const auto& frame_of = [&](FrameRef r) -> const FrameBundle& {
    return domains[static_cast<std::size_t>(r.domain)].frames[static_cast<std::size_t>(r.frame)];
  };
  const auto name_of = [&](FrameRef r) { return domains[static_cast<std::size_t>(r.domain)].name + "/" + frame_of(r).id; };

  PipelineConfig inner = cfg;
  inner.threads = 1;
  std::map<FrameRef, FrameGeometry> geometry;
  {
    std::vector<FrameGeometry> g(all.size());
    parallel_for(all.size(), cfg.threads, [&](std::size_t i) { g[i] = frame_geometry(frame_of(all[i]), inner); });
    for (std::size_t i = 0; i < all.size(); ++i) geometry.emplace(all[i], std::move(g[i]));
  }

  bool needs_classifier = cfg.point_source == PointSource::classifier;
  for (auto r : all)
    needs_classifier = needs_classifier || (cfg.point_source == PointSource::automatic && !frame_of(r).point_probs);

  std::map<FrameRef, PreparedFrame> shared;  // reused across folds when no classifier is trained
  const auto previous_of = [&](FrameRef r) -> std::optional<FrameRef> {
    if (r.frame == 0) return std::nullopt;
    return FrameRef{r.domain, r.frame - 1};
  };

  CrossValidationReport report;
  report.split = split;
  report.labels = cfg.labels;
  for (const Fold& fold : folds) {
    spdlog::info("fold {}: {} test frames, {} training frames", fold.name, fold.test.size(), fold.train.size());
    FoldReport fr;
    fr.fold = fold;
    for (auto r : fold.train) fr.training_frames.push_back(name_of(r));

    std::unique_ptr<PointClassifier> classifier;
    if (needs_classifier) {
      std::vector<const FeatureMatrix*> feats;
      std::vector<std::vector<int>> labels;
      for (auto r : fold.train) {
        const FrameBundle& fb = frame_of(r);
        const LabelMapping m = label_mapping(domains[static_cast<std::size_t>(r.domain)].labels, cfg.labels);
        feats.push_back(&geometry.at(r).features);
        std::vector<int> l(fb.gt3d->size());
        for (std::size_t i = 0; i < l.size(); ++i) l[i] = (*fb.gt3d)[i] < 0 ? -1 : m((*fb.gt3d)[i]);
        labels.push_back(std::move(l));
      }
      classifier = train_point_classifier(feats, labels, cfg);
    }

    std::set<FrameRef> needed;
    for (const auto* list : {&fold.train, &fold.test}) {
      for (auto r : *list) {
        needed.insert(r);
        if (auto p = previous_of(r)) needed.insert(*p);
      }
    }
    std::map<FrameRef, PreparedFrame> local;
    auto& store = needs_classifier ? local : shared;
    {
      std::vector<FrameRef> todo;
      for (auto r : needed)
        if (!store.count(r)) todo.push_back(r);
      std::vector<PreparedFrame> out(todo.size());
      parallel_for(todo.size(), cfg.threads, [&](std::size_t i) {
        const auto& d = domains[static_cast<std::size_t>(todo[i].domain)];
        out[i] = prepare_frame(frame_of(todo[i]), d.camera, d.labels, classifier.get(), inner, &geometry.at(todo[i]));
      });
      for (std::size_t i = 0; i < todo.size(); ++i) store.emplace(todo[i], std::move(out[i]));
    }
    const auto pair_of = [&](FrameRef r) -> std::pair<const PreparedFrame*, const PreparedFrame*> {
      const auto p = previous_of(r);
      return {&store.at(r), p ? &store.at(*p) : nullptr};
    };

    for (Variant v : variants) {
      VariantResult vr;
      WeightSet weights(cfg.labels.count());
      if (v != Variant::initial) {
        std::vector<std::pair<const PreparedFrame*, const PreparedFrame*>> train;
        for (auto r : fold.train) train.push_back(pair_of(r));
        vr.fit = train_weights(train, v, cfg);
        weights = vr.fit->weights;
        spdlog::info("fold {} {}: objective {:.6g} after {} iterations{}", fold.name, to_string(v), vr.fit->objective,
                     vr.fit->iterations, vr.fit->converged ? "" : " (not converged)");
      }
      std::vector<GraphSpec> specs = graph_specs(v);
      if (specs.empty()) specs.push_back({true, true, false, false, false});

      for (DecodeMethod method : {DecodeMethod::max_product, DecodeMethod::marginal_argmax}) {
        std::vector<Confusion> c2(fold.test.size()), c3(fold.test.size());
        parallel_for(fold.test.size(), cfg.threads, [&](std::size_t i) {
          const auto [cur, prev] = pair_of(fold.test[i]);
          c2[i] = Confusion(cfg.labels.count());
          c3[i] = Confusion(cfg.labels.count());
          for (const auto& spec : specs) {
            const FusionGraph g = build_frame_graph(*cur, spec.temporal ? prev : nullptr, spec, inner);
            const FrameResult res = decode_frame(g, *cur, weights, inner, method);
            if (spec.image) c2[i] += confusion_2d(res.labels.image, *cur->gt2d, cfg.labels.count());
            if (spec.lidar) c3[i] += confusion_3d(res.labels.points, *cur->gt3d, cfg.labels.count());
          }
        });
        Confusion t2(cfg.labels.count()), t3(cfg.labels.count());
        for (std::size_t i = 0; i < c2.size(); ++i) {
          t2 += c2[i];
          t3 += c3[i];
        }
        vr.metrics[method] = MetricsReport{cfg.labels, ModalityMetrics::from(t2), ModalityMetrics::from(t3)};
      }
      fr.variants.emplace(v, std::move(vr));
    }
    report.folds.push_back(std::move(fr));
  }
  return report;
}

std::string CrossValidationReport::metrics_text() const {
  std::string out;
  const auto line = [&](const std::string& k, const std::string& v) { out += k + "=" + v + "\n"; };
  line("split", to_string(split));
  std::string names;
  for (const auto& n : labels.names()) names += (names.empty() ? "" : " ") + n;
  line("labels", names);
  std::map<std::string, std::vector<double>> means;
  for (const auto& f : folds) {
    const std::string p = "fold." + f.fold.name;
    std::string train;
    for (const auto& t : f.training_frames) train += (train.empty() ? "" : ",") + t;
    line(p + ".train_frames", train);
    line(p + ".test_frame_count", std::to_string(f.fold.test.size()));
    for (const auto& [v, vr] : f.variants) {
      const std::string pv = p + "." + to_string(v);
      if (vr.fit) {
        line(pv + ".fit.iterations", std::to_string(vr.fit->iterations));
        line(pv + ".fit.converged", vr.fit->converged ? "1" : "0");
        line(pv + ".fit.objective", format_real(vr.fit->objective));
      }
      for (const auto& [method, m] : vr.metrics) {
        for (const auto& [tag, mm] : {std::pair<const char*, const ModalityMetrics*>{"2d", &m.image}, {"3d", &m.lidar}}) {
          const std::string pm = pv + "." + to_string(method) + "." + tag;
          line(pm + ".accuracy", format_real(mm->accuracy));
          line(pm + ".mean_iou", format_real(mm->mean_iou));
          line(pm + ".evaluated", std::to_string(mm->evaluated));
          for (int l = 0; l < labels.count(); ++l) line(pm + ".iou." + labels.name(l), format_real(mm->iou(l)));
          const std::string tail = std::string(to_string(v)) + "." + to_string(method) + "." + tag;
          means["mean." + tail + ".accuracy"].push_back(mm->accuracy);
          means["mean." + tail + ".mean_iou"].push_back(mm->mean_iou);
        }
      }
    }
  }
  for (const auto& [k, vals] : means) {
    double s = 0.0;
    for (double v : vals) s += v;
    line(k, format_real(s / static_cast<double>(vals.size())));
  }
  return out;
}

std::string CrossValidationReport::table() const {
  std::string out = fmt::format("{:<24} {:<16} {:>8} {:>8} {:>8} {:>8}\n", "fold", "variant", "2D acc", "2D mIoU",
                                "3D acc", "3D mIoU");
  for (const auto& f : folds) {
    for (const auto& [v, vr] : f.variants) {
      const auto& m = vr.metrics.at(DecodeMethod::max_product);
      out += fmt::format("{:<24} {:<16} {:>8.4f} {:>8.4f} {:>8.4f} {:>8.4f}\n", f.fold.name, to_string(v), m.image.accuracy,
                         m.image.mean_iou, m.lidar.accuracy, m.lidar.mean_iou);
    }
  }
  return out;
}

}  // namespace fusioncrf
