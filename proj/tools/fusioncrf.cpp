// Command-line front end: synthetic data, per-stage inspection, training,
// inference, evaluation and cross-validation over domain directories.

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <iostream>
#include <optional>

#include "fusioncrf/config.hpp"
#include "fusioncrf/error.hpp"
#include "fusioncrf/io.hpp"
#include "fusioncrf/pipeline.hpp"
#include "fusioncrf/synthetic.hpp"

using namespace fusioncrf;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::vector<std::string> configs;
  std::vector<std::string> overrides;  // key=value
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string log_level = "info";
  bool tune_synthetic = false;
};

PipelineConfig resolve(const Globals& g) {
  ConfigValues values;
  for (const auto& path : g.configs)
    for (auto& [k, v] : read_config(path)) values[k] = v;
  for (const auto& o : g.overrides)
    for (auto& [k, v] : parse_config(o, "--set " + o)) values[k] = v;
  PipelineConfig cfg = apply_config({}, values);
  if (g.tune_synthetic) {
    // explicit values still win over the tuned defaults
    tune_for_synthetic(cfg, cfg.synth);
    cfg = apply_config(cfg, values);
  }
  if (g.seed) cfg.seed = *g.seed;
  if (g.threads) cfg.threads = *g.threads;
  cfg.validate();
  return cfg;
}

const FrameBundle& find_frame(const Domain& d, const std::string& id, std::size_t* index = nullptr) {
  for (std::size_t i = 0; i < d.frames.size(); ++i) {
    if (d.frames[i].id == id) {
      if (index) *index = i;
      return d.frames[i];
    }
  }
  fail(Errc::invalid_argument, "domain '" + d.name + "' has no frame '" + id + "'");
}

std::unique_ptr<PointClassifier> maybe_classifier(const std::string& path) {
  if (path.empty()) return nullptr;
  return load_classifier(path);
}

std::string feature_text(const FeatureMatrix& f) {
  std::string out = "# f1 f2 f3 f4 f5 f6 f7 f8 f9\n";
  for (Eigen::Index i = 0; i < f.cols(); ++i) {
    for (Eigen::Index r = 0; r < f.rows(); ++r) out += fmt::format("{}{:.9g}", r ? " " : "", f(r, i));
    out += "\n";
  }
  return out;
}

std::string node_name(const NodeRef& r) {
  return fmt::format("{}:{}:{}", r.frame, r.modality == Modality::image2d ? "2d" : "3d", r.index);
}

std::string graph_text(const FusionGraph& g) {
  std::string out = "# fusioncrf-graph 1\nlabels";
  for (const auto& n : g.labels().names()) out += " " + n;
  out += fmt::format("\nnodes {}\n", g.node_count());
  for (int i = 0; i < g.node_count(); ++i) {
    out += fmt::format("node {} {}", node_name(g.ref(i)), g.is_hidden(i) ? "hidden" : "visible");
    const auto& p = g.payload(i);
    for (int l = 0; l < g.label_count(); ++l)
      out += p.admissible(l) ? fmt::format(" {:.9g}", std::exp(p.unary_log_prob(l))) : std::string(" -");
    out += "\n";
  }
  out += fmt::format("edges {}\n", g.edge_count());
  for (int e = 0; e < g.edge_count(); ++e) {
    const Edge& edge = g.edge(e);
    out += fmt::format("edge {} {} {} {:.9g}\n", to_string(edge.kind), node_name(edge.a), node_name(edge.b), edge.kernel);
  }
  return out;
}

std::string metrics_lines(const MetricsReport& m) {
  std::string out;
  for (const auto& [tag, mm] : {std::pair<const char*, const ModalityMetrics*>{"2d", &m.image}, {"3d", &m.lidar}}) {
    out += fmt::format("{}.accuracy={:.10f}\n{}.mean_iou={:.10f}\n{}.evaluated={}\n", tag, mm->accuracy, tag, mm->mean_iou,
                       tag, mm->evaluated);
    for (int l = 0; l < m.labels.count(); ++l) out += fmt::format("{}.iou.{}={:.10f}\n", tag, m.labels.name(l), mm->iou(l));
  }
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"Camera/lidar fusion CRF for semantic labeling"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.configs, "Key-value config file; later files override earlier ones")->check(CLI::ExistingFile);
  app.add_option("--set", g.overrides, "Override one config key (key=value)");
  app.add_option("--seed", g.seed, "Base random seed");
  app.add_option("--threads", g.threads, "Worker threads");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}));
  app.add_flag("--tune-synthetic", g.tune_synthetic, "Start from settings matched to the synthetic sensor");

  // synth
  auto* synth = app.add_subcommand("synth", "Write synthetic domains");
  std::string synth_out, synth_prefix = "domain";
  int synth_domains = 2;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--domains", synth_domains, "Number of domains")->check(CLI::PositiveNumber);
  synth->add_option("--prefix", synth_prefix, "Domain name prefix");

  // extract-features
  auto* feats = app.add_subcommand("extract-features", "Ground-align one frame and write its point features");
  std::string fx_domain, fx_frame, fx_out, fx_cloud;
  feats->add_option("--domain", fx_domain, "Domain directory")->required()->check(CLI::ExistingDirectory);
  feats->add_option("--frame", fx_frame, "Frame id")->required();
  feats->add_option("--out", fx_out, "Feature table (one row per point)")->required();
  feats->add_option("--aligned-cloud", fx_cloud, "Also write the ground-aligned cloud");

  // segment
  auto* seg = app.add_subcommand("segment", "Cluster one frame into supervoxels");
  std::string sg_domain, sg_frame, sg_out, sg_classifier;
  seg->add_option("--domain", sg_domain, "Domain directory")->required()->check(CLI::ExistingDirectory);
  seg->add_option("--frame", sg_frame, "Frame id")->required();
  seg->add_option("--out", sg_out, "Per-point supervoxel ids")->required();
  seg->add_option("--classifier", sg_classifier, "Point classifier model")->check(CLI::ExistingFile);

  // build-graph
  auto* bg = app.add_subcommand("build-graph", "Build the CRF of one frame and write it as text");
  std::string bg_domain, bg_frame, bg_out, bg_classifier, bg_variant = "fused_temporal";
  bg->add_option("--domain", bg_domain, "Domain directory")->required()->check(CLI::ExistingDirectory);
  bg->add_option("--frame", bg_frame, "Frame id")->required();
  bg->add_option("--out", bg_out, "Graph file")->required();
  bg->add_option("--variant", bg_variant, "fused or fused_temporal")->check(CLI::IsMember({"fused", "fused_temporal"}));
  bg->add_option("--classifier", bg_classifier, "Point classifier model")->check(CLI::ExistingFile);

  // train
  auto* train = app.add_subcommand("train", "Fit CRF weights on annotated domains");
  std::vector<std::string> tr_domains;
  std::string tr_out, tr_variant = "fused_temporal", tr_classifier_out;
  train->add_option("--domain", tr_domains, "Domain directory (repeatable)")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", tr_out, "Weight checkpoint")->required();
  train->add_option("--variant", tr_variant, "fused or fused_temporal")->check(CLI::IsMember({"fused", "fused_temporal"}));
  train->add_option("--classifier-out", tr_classifier_out, "Also train and save the point classifier");

  // infer
  auto* infer = app.add_subcommand("infer", "Label every frame of a domain");
  std::string in_domain, in_weights, in_out, in_classifier, in_method = "map";
  infer->add_option("--domain", in_domain, "Domain directory")->required()->check(CLI::ExistingDirectory);
  infer->add_option("--weights", in_weights, "Weight checkpoint")->required()->check(CLI::ExistingFile);
  infer->add_option("--out", in_out, "Output directory")->required();
  infer->add_option("--classifier", in_classifier, "Point classifier model")->check(CLI::ExistingFile);
  infer->add_option("--method", in_method, "map or marginal")->check(CLI::IsMember({"map", "marginal"}));

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Score predictions written by infer");
  std::string ev_domain, ev_predictions, ev_out;
  eval->add_option("--domain", ev_domain, "Domain directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--predictions", ev_predictions, "Directory written by infer")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--metrics", ev_out, "Key-value metrics file");

  // cross-validate
  auto* cv = app.add_subcommand("cross-validate", "Train and test across domains");
  std::vector<std::string> cv_domains, cv_variants;
  std::string cv_split = "leave_one_domain_out", cv_out;
  cv->add_option("--domain", cv_domains, "Domain directory (repeatable)")->required()->check(CLI::ExistingDirectory);
  cv->add_option("--split", cv_split, "Split")
      ->check(CLI::IsMember({"leave_one_domain_out", "domain_training", "adaptation_training"}));
  cv->add_option("--variant", cv_variants, "Variants to run (default: all)")
      ->check(CLI::IsMember({"initial", "single_modality", "fused", "fused_temporal"}));
  cv->add_option("--metrics", cv_out, "Key-value metrics file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  spdlog::set_level(spdlog::level::from_str(g.log_level));
  const PipelineConfig cfg = resolve(g);
  spdlog::debug("configuration:\n{}", dump_config(cfg));

  if (*synth) {
    fs::create_directories(synth_out);
    for (int k = 0; k < synth_domains; ++k) {
      const std::string name = fmt::format("{}{}", synth_prefix, k);
      const Domain d = generate_synthetic_scene(cfg.synth, cfg.seed + static_cast<std::uint64_t>(k), name);
      fs::create_directories(fs::path(synth_out) / name);
      write_domain(fs::path(synth_out) / name, d);
      spdlog::info("wrote {} ({} frames)", (fs::path(synth_out) / name).string(), d.frames.size());
    }
    return 0;
  }

  if (*feats) {
    const Domain d = read_domain(fx_domain);
    const FrameGeometry geo = frame_geometry(find_frame(d, fx_frame), cfg);
    io::write_text(fx_out, feature_text(geo.features));
    if (!fx_cloud.empty()) io::write_cloud(fx_cloud, geo.cloud);
    return 0;
  }

  if (*seg) {
    const Domain d = read_domain(sg_domain);
    const auto clf = maybe_classifier(sg_classifier);
    const PreparedFrame p = prepare_frame(find_frame(d, sg_frame), d.camera, d.labels, clf.get(), cfg);
    io::write_point_labels(sg_out, p.segmentation.point_segment);
    std::cout << fmt::format("{} points, {} supervoxels, {} adjacent pairs\n", p.cloud.size(),
                             p.segmentation.segments.size(), p.segmentation.adjacency.size());
    return 0;
  }

  if (*bg) {
    const Domain d = read_domain(bg_domain);
    const auto clf = maybe_classifier(bg_classifier);
    std::size_t index = 0;
    const FrameBundle& frame = find_frame(d, bg_frame, &index);
    const PreparedFrame cur = prepare_frame(frame, d.camera, d.labels, clf.get(), cfg);
    std::optional<PreparedFrame> prev;
    GraphSpec spec;
    spec.temporal = bg_variant == "fused_temporal";
    if (spec.temporal && index > 0) prev = prepare_frame(d.frames[index - 1], d.camera, d.labels, clf.get(), cfg);
    const FusionGraph graph = build_frame_graph(cur, prev ? &*prev : nullptr, spec, cfg);
    io::write_text(bg_out, graph_text(graph));
    std::cout << fmt::format("{} nodes, {} edges\n", graph.node_count(), graph.edge_count());
    return 0;
  }

  if (*train) {
    std::vector<Domain> domains;
    for (const auto& p : tr_domains) domains.push_back(read_domain(p));
    PipelineConfig tcfg = cfg;
    std::unique_ptr<PointClassifier> clf;
    std::vector<FrameGeometry> geos;
    std::vector<std::pair<std::size_t, std::size_t>> refs;
    for (std::size_t di = 0; di < domains.size(); ++di)
      for (std::size_t fi = 0; fi < domains[di].frames.size(); ++fi) {
        refs.emplace_back(di, fi);
        geos.push_back(frame_geometry(domains[di].frames[fi], cfg));
      }
    if (!tr_classifier_out.empty()) {
      std::vector<const FeatureMatrix*> fm;
      std::vector<std::vector<int>> labels;
      for (std::size_t k = 0; k < refs.size(); ++k) {
        const auto& d = domains[refs[k].first];
        const auto& f = d.frames[refs[k].second];
        if (!f.gt3d) continue;
        const LabelMapping m = label_mapping(d.labels, cfg.labels);
        std::vector<int> l(f.gt3d->size());
        for (std::size_t i = 0; i < l.size(); ++i) l[i] = (*f.gt3d)[i] < 0 ? -1 : m((*f.gt3d)[i]);
        fm.push_back(&geos[k].features);
        labels.push_back(std::move(l));
      }
      clf = train_point_classifier(fm, labels, cfg);
      save_classifier(*clf, tr_classifier_out);
      spdlog::info("point classifier written to {}", tr_classifier_out);
    }
    std::vector<PreparedFrame> prepared(refs.size());
    for (std::size_t k = 0; k < refs.size(); ++k) {
      const auto& d = domains[refs[k].first];
      prepared[k] = prepare_frame(d.frames[refs[k].second], d.camera, d.labels, clf.get(), cfg, &geos[k]);
    }
    std::vector<std::pair<const PreparedFrame*, const PreparedFrame*>> pairs;
    for (std::size_t k = 0; k < refs.size(); ++k) {
      if (!prepared[k].annotated()) continue;
      const PreparedFrame* prev = refs[k].second > 0 ? &prepared[k - 1] : nullptr;
      pairs.emplace_back(&prepared[k], prev);
    }
    const FitResult r = train_weights(pairs, *variant_from_string(tr_variant), tcfg);
    io::write_weights(tr_out, r.weights, cfg.labels);
    std::cout << fmt::format("objective {:.6f} after {} iterations ({}), {} BP runs did not converge\n", r.objective,
                             r.iterations, r.converged ? "converged" : "not converged", r.nonconverged_inference);
    return 0;
  }

  if (*infer) {
    const Domain d = read_domain(in_domain);
    const WeightSet w = io::read_weights(in_weights, cfg.labels);
    const auto clf = maybe_classifier(in_classifier);
    const DecodeMethod method = in_method == "map" ? DecodeMethod::max_product : DecodeMethod::marginal_argmax;
    fs::create_directories(in_out);
    for (std::size_t i = 0; i < d.frames.size(); ++i) {
      const FrameBundle* prev = i > 0 ? &d.frames[i - 1] : nullptr;
      const FrameResult r = process_frame(d.frames[i], prev, d.camera, d.labels, w, clf.get(), cfg, method);
      LabelImage image = r.labels.image;
      image = (image < 0).select(LabelImage::Constant(image.rows(), image.cols(), kUnlabeledPixel), image);
      io::write_pgm(fs::path(in_out) / (d.frames[i].id + ".labels2d.pgm"), image);
      io::write_point_labels(fs::path(in_out) / (d.frames[i].id + ".labels3d.txt"), r.labels.points);
      spdlog::info("frame {}: BP {} after {} iterations", d.frames[i].id,
                   r.inference.converged ? "converged" : "did not converge", r.inference.iterations_used);
    }
    return 0;
  }

  if (*eval) {
    const Domain d = read_domain(ev_domain);
    Confusion c2(cfg.labels.count()), c3(cfg.labels.count());
    for (const auto& f : d.frames) {
      if (!f.annotated()) continue;
      const LabelMapping m = label_mapping(d.labels, cfg.labels);
      LabelImage pred = io::read_pgm(fs::path(ev_predictions) / (f.id + ".labels2d.pgm"));
      pred = (pred == kUnlabeledPixel).select(LabelImage::Constant(pred.rows(), pred.cols(), -1), pred);
      LabelImage truth = *f.gt2d;
      for (Eigen::Index i = 0; i < truth.size(); ++i)
        truth.data()[i] = truth.data()[i] == kUnlabeledPixel ? -1 : m(truth.data()[i]);
      std::vector<int> t3(f.gt3d->size());
      for (std::size_t i = 0; i < t3.size(); ++i) t3[i] = (*f.gt3d)[i] < 0 ? -1 : m((*f.gt3d)[i]);
      c2 += confusion_2d(pred, truth, cfg.labels.count());
      c3 += confusion_3d(io::read_point_labels(fs::path(ev_predictions) / (f.id + ".labels3d.txt")), t3,
                         cfg.labels.count());
    }
    const MetricsReport r{cfg.labels, ModalityMetrics::from(c2), ModalityMetrics::from(c3)};
    std::cout << fmt::format("{:<12} {:>8} {:>8}\n", "", "2D", "3D");
    std::cout << fmt::format("{:<12} {:>8.4f} {:>8.4f}\n", "accuracy", r.image.accuracy, r.lidar.accuracy);
    std::cout << fmt::format("{:<12} {:>8.4f} {:>8.4f}\n", "mean IoU", r.image.mean_iou, r.lidar.mean_iou);
    for (int l = 0; l < cfg.labels.count(); ++l)
      std::cout << fmt::format("{:<12} {:>8.4f} {:>8.4f}\n", cfg.labels.name(l), r.image.iou(l), r.lidar.iou(l));
    if (!ev_out.empty()) io::write_text(ev_out, metrics_lines(r));
    return 0;
  }

  if (*cv) {
    std::vector<Domain> domains;
    for (const auto& p : cv_domains) domains.push_back(read_domain(p));
    std::vector<Variant> variants;
    for (const auto& v : cv_variants) variants.push_back(*variant_from_string(v));
    if (variants.empty()) variants.assign(kAllVariants.begin(), kAllVariants.end());
    const auto report = cross_validate(domains, *split_from_string(cv_split), cfg, variants);
    std::cout << report.table();
    if (!cv_out.empty()) io::write_text(cv_out, report.metrics_text());
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 3;
  }
}
