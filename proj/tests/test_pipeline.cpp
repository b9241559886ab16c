#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>

#include "fusioncrf/error.hpp"
#include "fusioncrf/pipeline.hpp"
#include "fusioncrf/synthetic.hpp"

using namespace fusioncrf;
namespace fs = std::filesystem;

namespace {

SceneSpec small_scene() {
  SceneSpec s;
  s.frames = 2;
  s.far_m = 10.0;
  s.half_width_m = 4.0;
  return s;
}

PipelineConfig config_for(const SceneSpec& s) {
  PipelineConfig cfg;
  cfg.synth = s;
  tune_for_synthetic(cfg, s);
  cfg.train.max_outer_iterations = 5;
  cfg.train.l2_lambda = 1.0;
  return cfg;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("fusioncrf_pipeline_" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int argmax(const Eigen::VectorXd& v) {
  Eigen::Index i = 0;
  v.maxCoeff(&i);
  return static_cast<int>(i);
}

}  // namespace

TEST_CASE("synthetic scenes are deterministic") {
  const SceneSpec spec = small_scene();
  const Domain a = generate_synthetic_scene(spec, 7, "a");
  const Domain b = generate_synthetic_scene(spec, 7, "a");
  const Domain c = generate_synthetic_scene(spec, 8, "a");
  REQUIRE(a.frames.size() == 2);
  CHECK_NOTHROW(a.validate());
  CHECK(a.annotated());
  for (std::size_t f = 0; f < a.frames.size(); ++f) {
    CHECK(a.frames[f].cloud.points == b.frames[f].cloud.points);
    CHECK(a.frames[f].heatmap.probs.probs == b.frames[f].heatmap.probs.probs);
    CHECK(*a.frames[f].gt3d == *b.frames[f].gt3d);
  }
  const bool differs = a.frames[0].cloud.points.size() != c.frames[0].cloud.points.size() ||
                       a.frames[0].cloud.points != c.frames[0].cloud.points;
  CHECK(differs);

  TempDir d1("det1"), d2("det2");
  write_domain(d1.path, a);
  write_domain(d2.path, b);
  for (const auto& entry : fs::recursive_directory_iterator(d1.path)) {
    if (!entry.is_regular_file()) continue;
    const fs::path other = d2.path / fs::relative(entry.path(), d1.path);
    REQUIRE(fs::exists(other));
    CHECK(slurp(entry.path()) == slurp(other));
  }
}

TEST_CASE("domain directories round trip") {
  const Domain a = generate_synthetic_scene(small_scene(), 3, "roundtrip");
  TempDir dir("roundtrip");
  write_domain(dir.path, a);
  const Domain b = read_domain(dir.path);
  CHECK(b.name == "roundtrip");
  CHECK(b.labels == a.labels);
  REQUIRE(b.frames.size() == a.frames.size());
  for (std::size_t f = 0; f < a.frames.size(); ++f) {
    CHECK(b.frames[f].id == a.frames[f].id);
    CHECK((b.frames[f].superpixels == a.frames[f].superpixels).all());
    CHECK((*b.frames[f].gt2d == *a.frames[f].gt2d).all());
    CHECK(*b.frames[f].gt3d == *a.frames[f].gt3d);
    CHECK((b.frames[f].cloud.points - a.frames[f].cloud.points).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((b.frames[f].nav.pose.matrix() - a.frames[f].nav.pose.matrix()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("noise-free classifiers reproduce the annotations") {
  SceneSpec spec = small_scene();
  spec.flip_probability = 0.0;
  spec.clean_alpha_max = 0.0;
  spec.epsilon = 0.0;
  const Domain d = generate_synthetic_scene(spec, 11);
  for (const auto& f : d.frames) {
    for (Eigen::Index i = 0; i < f.superpixels.size(); ++i) {
      const int s = f.superpixels.data()[i];
      REQUIRE(argmax(f.heatmap.probs.probs.row(s).transpose()) == f.gt2d->data()[i]);
    }
    for (std::size_t i = 0; i < f.gt3d->size(); ++i)
      REQUIRE(argmax(f.point_probs->probs.row(static_cast<Eigen::Index>(i)).transpose()) == (*f.gt3d)[i]);
  }

  PipelineConfig cfg = config_for(spec);
  const auto r = cross_validate({d, generate_synthetic_scene(spec, 12)}, SplitKind::leave_one_domain_out, cfg,
                                {Variant::initial});
  for (const auto& fold : r.folds) {
    const auto& m = fold.variants.at(Variant::initial).metrics.at(DecodeMethod::max_product);
    CHECK(m.image.mean_iou == doctest::Approx(1.0));
    CHECK(m.image.accuracy == doctest::Approx(1.0));
  }
}

TEST_CASE("designed ambiguity is complementary") {
  const Domain d = generate_synthetic_scene(SceneSpec{}, 5);
  const auto four = LabelSet::four_class();
  const int ground = *four.find("ground"), veg = *four.find("vegetation"), object = *four.find("object");
  int confused2d = 0, confused3d = 0;
  for (const auto& f : d.frames) {
    for (Eigen::Index i = 0; i < f.superpixels.size(); ++i) {
      const int truth = f.gt2d->data()[i];
      const int pred = argmax(f.heatmap.probs.probs.row(f.superpixels.data()[i]).transpose());
      if (pred == truth) continue;
      ++confused2d;
      REQUIRE(((truth == ground && pred == veg) || (truth == veg && pred == ground)));
    }
    for (std::size_t i = 0; i < f.gt3d->size(); ++i) {
      const int truth = (*f.gt3d)[i];
      const int pred = argmax(f.point_probs->probs.row(static_cast<Eigen::Index>(i)).transpose());
      if (pred == truth) continue;
      ++confused3d;
      REQUIRE(((truth == veg && pred == object) || (truth == object && pred == veg)));
    }
  }
  CHECK(confused2d > 0);
  CHECK(confused3d > 0);
}

TEST_CASE("label mapping presets") {
  const auto four = LabelSet::four_class(), two = LabelSet::binary(), nine = LabelSet::nine_class();
  CHECK(label_mapping(four, two)(*four.find("vegetation")) == *two.find("non-ground"));
  CHECK(label_mapping(nine, two)(*nine.find("ground")) == *two.find("ground"));
  CHECK(label_mapping(four, four)(2) == 2);
  try {
    label_mapping(two, four);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::label_space_mismatch);
  }
}

TEST_CASE("frame graphs") {
  const SceneSpec spec = small_scene();
  const Domain d = generate_synthetic_scene(spec, 21);
  const PipelineConfig cfg = config_for(spec);
  const PreparedFrame prev = prepare_frame(d.frames[0], d.camera, d.labels, nullptr, cfg);
  const PreparedFrame cur = prepare_frame(d.frames[1], d.camera, d.labels, nullptr, cfg);
  CHECK(cur.annotated());
  CHECK(cur.superpixel_ids.size() > 10);
  CHECK(cur.segmentation.segments.size() > 10);

  SUBCASE("overlap weights are normalized per supervoxel") {
    std::map<int, double> best;
    for (const auto& o : cur.overlaps) {
      CHECK(o.normalized_weight > 0.0);
      CHECK(o.normalized_weight <= 1.0);
      best[o.supervoxel_id] = std::max(best[o.supervoxel_id], o.normalized_weight);
    }
    CHECK(!best.empty());
    for (const auto& [id, w] : best) CHECK(w == 1.0);
  }

  SUBCASE("a missing previous frame equals disabled temporal edges") {
    GraphSpec with, without;
    with.temporal = true;
    const FusionGraph a = build_frame_graph(cur, nullptr, with, cfg);
    const FusionGraph b = build_frame_graph(cur, nullptr, without, cfg);
    CHECK(a.node_count() == b.node_count());
    CHECK(a.edge_count() == b.edge_count());
    const WeightSet w = [] {
      WeightSet w(4);
      w.set_weight(EdgeKind::spatial2d, 0, 2, 1.0);
      w.set_weight(EdgeKind::cross_modal, 2, 3, 0.7);
      return w;
    }();
    const auto ra = decode_frame(a, cur, w, cfg), rb = decode_frame(b, cur, w, cfg);
    CHECK((ra.labels.image == rb.labels.image).all());
    CHECK(ra.labels.points == rb.labels.points);
  }

  SUBCASE("the previous frame enters as hidden nodes") {
    GraphSpec spec_t;
    spec_t.temporal = true;
    const FusionGraph g = build_frame_graph(cur, &prev, spec_t, cfg);
    int temporal = 0;
    for (int e = 0; e < g.edge_count(); ++e) {
      const Edge& edge = g.edge(e);
      if (edge.kind != EdgeKind::temporal) continue;
      ++temporal;
      CHECK(edge.a.frame == kPreviousFrame);
      CHECK(edge.b.frame == kCurrentFrame);
      CHECK(edge.kernel > 0.0);
      CHECK(edge.kernel <= 1.0);
    }
    CHECK(temporal > 0);
    for (int i = 0; i < g.node_count(); ++i) CHECK(g.is_hidden(i) == (g.ref(i).frame == kPreviousFrame));

    const TrainingExample ex = make_training_example(cur, &prev, spec_t, cfg);
    for (int i = 0; i < ex.graph.node_count(); ++i)
      if (ex.graph.ref(i).frame == kPreviousFrame) CHECK(ex.observed[static_cast<std::size_t>(i)] < 0);
  }

  SUBCASE("zero weights decode to the per-segment argmax and broadcast constantly") {
    const FusionGraph g = build_frame_graph(cur, nullptr, GraphSpec{}, cfg);
    for (auto method : {DecodeMethod::max_product, DecodeMethod::marginal_argmax}) {
      const FrameResult r = decode_frame(g, cur, WeightSet(4), cfg, method);
      for (int i = 0; i < g.node_count(); ++i) {
        const auto& p = g.payload(i);
        Eigen::VectorXd u = p.unary_log_prob;
        for (int l = 0; l < 4; ++l)
          if (!p.admissible(l)) u(l) = -std::numeric_limits<double>::infinity();
        CHECK(r.node_labels[static_cast<std::size_t>(i)] == argmax(u));
      }
      std::map<int, int> sp;
      for (Eigen::Index i = 0; i < cur.superpixels.size(); ++i) {
        const auto [it, fresh] = sp.emplace(cur.superpixels.data()[i], r.labels.image.data()[i]);
        CHECK(it->second == r.labels.image.data()[i]);
      }
      std::map<int, int> sv;
      for (std::size_t i = 0; i < r.labels.points.size(); ++i) {
        const int s = cur.segmentation.point_segment[i];
        if (s < 0) continue;
        const auto [it, fresh] = sv.emplace(s, r.labels.points[i]);
        CHECK(it->second == r.labels.points[i]);
      }
    }
  }
}

TEST_CASE("metrics") {
  const auto two = LabelSet::binary();
  SUBCASE("intersection over union") {
    std::vector<int> truth, pred;
    for (int i = 0; i < 100; ++i) {
      truth.push_back(0);
      pred.push_back(i < 50 ? 0 : 1);
    }
    for (int i = 0; i < 50; ++i) {
      truth.push_back(1);
      pred.push_back(0);
    }
    const auto m = ModalityMetrics::from(confusion_3d(pred, truth, 2));
    CHECK(m.iou(0) == doctest::Approx(50.0 / 150.0));
    CHECK(m.iou(1) == doctest::Approx(0.0));
    CHECK(m.accuracy == doctest::Approx(50.0 / 150.0));
    CHECK(m.evaluated == 150);
  }
  SUBCASE("labels absent from truth and prediction are skipped") {
    const auto four = LabelSet::four_class();
    const std::vector<int> truth{0, 0, 2, 2, -1}, pred{0, 0, 2, -1, 3};
    const auto m = ModalityMetrics::from(confusion_3d(pred, truth, 4));
    CHECK(std::isnan(m.iou(1)));
    CHECK(std::isnan(m.iou(3)));  // predicted only on an unlabeled point
    CHECK(m.present == std::vector<bool>{true, false, true, false});
    CHECK(m.mean_iou == doctest::Approx((1.0 + 0.5) / 2.0));
    CHECK(m.confusion.counts(2, 4) == 1);
    CHECK(m.evaluated == 4);
  }
  SUBCASE("a prediction equal to the truth is perfect") {
    const Domain d = generate_synthetic_scene(small_scene(), 2);
    const auto& f = d.frames[0];
    const LabelImage gt = *f.gt2d;
    const auto r = evaluate(gt, gt, *f.gt3d, *f.gt3d, d.labels);
    CHECK(r.image.accuracy == 1.0);
    CHECK(r.image.mean_iou == 1.0);
    CHECK(r.lidar.accuracy == 1.0);
    CHECK(r.lidar.mean_iou == 1.0);
  }
  SUBCASE("shape mismatches are rejected") {
    CHECK_THROWS_AS(confusion_3d({0, 1}, {0}, 2), Error);
    CHECK_THROWS_AS(confusion_2d(LabelImage::Zero(2, 2), LabelImage::Zero(2, 3), 2), Error);
  }
  (void)two;
}

TEST_CASE("folds") {
  const SceneSpec spec = small_scene();
  SceneSpec four = spec;
  four.frames = 4;
  const std::vector<Domain> ds{generate_synthetic_scene(four, 1, "x"), generate_synthetic_scene(spec, 2, "y"),
                               generate_synthetic_scene(spec, 3, "z")};

  const auto lodo = make_folds(ds, SplitKind::leave_one_domain_out);
  REQUIRE(lodo.size() == 3);
  for (const auto& f : lodo) {
    CHECK(f.name == ds[static_cast<std::size_t>(f.test_domain)].name);
    for (const auto& r : f.train) CHECK(r.domain != f.test_domain);
    for (const auto& r : f.test) CHECK(r.domain == f.test_domain);
    CHECK(f.train.size() + f.test.size() == 8);
  }

  const auto dt = make_folds(ds, SplitKind::domain_training);
  REQUIRE(dt.size() == 6);
  CHECK(dt[0].name == "x.first");
  CHECK(dt[0].test == std::vector<FrameRef>{{0, 0}, {0, 1}});
  CHECK(dt[0].train == std::vector<FrameRef>{{0, 2}, {0, 3}});
  CHECK(dt[1].name == "x.second");
  CHECK(dt[1].test == dt[0].train);
  for (const auto& f : dt)
    for (const auto& r : f.train) CHECK(r.domain == f.test_domain);

  const auto at = make_folds(ds, SplitKind::adaptation_training);
  REQUIRE(at.size() == 6);
  for (std::size_t i = 0; i < at.size(); ++i) {
    CHECK(at[i].test == dt[i].test);
    std::set<FrameRef> train(at[i].train.begin(), at[i].train.end());
    for (const auto& r : dt[i].train) CHECK(train.count(r) == 1);
    CHECK(at[i].train.size() == dt[i].train.size() + 8 - ds[static_cast<std::size_t>(at[i].test_domain)].frames.size());
  }

  CHECK_THROWS_AS(make_folds({ds[0]}, SplitKind::leave_one_domain_out), Error);
  Domain bare = ds[1];
  for (auto& f : bare.frames) f.gt3d.reset();
  try {
    make_folds({ds[0], bare}, SplitKind::leave_one_domain_out);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::missing_annotations);
  }
}

TEST_CASE("cross-validation") {
  const SceneSpec spec = small_scene();
  const std::vector<Domain> ds{generate_synthetic_scene(spec, 31, "a"), generate_synthetic_scene(spec, 32, "b")};
  const PipelineConfig cfg = config_for(spec);
  const std::vector<Variant> variants{Variant::initial, Variant::fused};
  const auto r1 = cross_validate(ds, SplitKind::leave_one_domain_out, cfg, variants);
  REQUIRE(r1.folds.size() == 2);
  CHECK(r1.folds[0].training_frames == std::vector<std::string>{"b/f000", "b/f001"});
  CHECK(!r1.folds[0].variants.at(Variant::initial).fit);
  CHECK(r1.folds[0].variants.at(Variant::fused).fit);
  const std::string text = r1.metrics_text();
  CHECK(text.find("split=leave_one_domain_out\n") == 0);
  CHECK(text.find("fold.a.fused.map.3d.accuracy=") != std::string::npos);
  CHECK(text.find("mean.fused.marginal.2d.mean_iou=") != std::string::npos);
  CHECK(cross_validate(ds, SplitKind::leave_one_domain_out, cfg, variants).metrics_text() == text);

  SUBCASE("binary labels with a trained point classifier") {
    PipelineConfig bin = cfg;
    bin.labels = LabelSet::binary();
    bin.point_source = PointSource::classifier;
    const auto r = cross_validate(ds, SplitKind::leave_one_domain_out, bin, {Variant::initial});
    for (const auto& f : r.folds) {
      const auto& m = f.variants.at(Variant::initial).metrics.at(DecodeMethod::max_product);
      CHECK(m.lidar.accuracy > 0.9);
    }
  }
}
