#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "fusioncrf/classifier.hpp"
#include "fusioncrf/kdtree.hpp"
#include "fusioncrf/lidar.hpp"

using namespace fusioncrf;
using doctest::Approx;

namespace {

PointCloud make_cloud(const std::vector<Eigen::Vector3d>& pts, double intensity = 0.5) {
  PointCloud c;
  c.points.resize(3, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) c.points.col(static_cast<Eigen::Index>(i)) = pts[i];
  c.intensity = Eigen::VectorXd::Constant(c.points.cols(), intensity);
  return c;
}

std::vector<Eigen::Vector3d> ground_grid(double x0, double x1, double y0, double y1, double step) {
  std::vector<Eigen::Vector3d> pts;
  for (double x = x0; x <= x1 + 1e-9; x += step)
    for (double y = y0; y <= y1 + 1e-9; y += step) pts.emplace_back(x, y, 0.0);
  return pts;
}

double deg(double d) { return d * std::numbers::pi / 180.0; }

}  // namespace

TEST_CASE("adaptive radius") {
  const NeighborhoodParams p{60, deg(0.08)};
  CHECK(adaptive_radius(Eigen::Vector3d(0, 0, 5), p) == 0.0);
  CHECK(adaptive_radius(Eigen::Vector3d(10, 0, 0), p) == Approx(0.4189).epsilon(1e-3));
  CHECK(adaptive_radius(Eigen::Vector3d(10, 0, 0), p) == Approx(20.0 * std::sin(deg(1.2))).epsilon(1e-12));
  CHECK(adaptive_radius(Eigen::Vector3d(6, 8, 0), p) == Approx(adaptive_radius(Eigen::Vector3d(10, 0, 0), p)));

  const double r1 = adaptive_radius(Eigen::Vector3d(3, 4, 1), p);
  const double r2 = adaptive_radius(Eigen::Vector3d(6, 8, -7), p);
  CHECK(std::abs(r2 - 2.0 * r1) < 1e-9);

  double prev = 0.0;
  for (double d = 0.0; d < 80.0; d += 0.7) {
    const double r = adaptive_radius(Eigen::Vector3d(d, 0.0, 3.0), p);
    CHECK(r >= prev);
    prev = r;
  }
  CHECK(adaptive_radius(Eigen::Vector3f(10, 0, 0), p) == Approx(0.4189).epsilon(1e-3));
}

TEST_CASE("kd-tree agrees with brute force") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  Eigen::Matrix3Xd pts(3, 700);
  for (Eigen::Index i = 0; i < pts.cols(); ++i) pts.col(i) << u(rng), u(rng), u(rng) * 0.2;
  pts.col(10) = pts.col(20);  // duplicate
  const KdTree tree(pts, 4);

  for (int q = 0; q < 60; ++q) {
    const Eigen::Vector3d query(u(rng), u(rng), u(rng) * 0.2);
    const double r = std::abs(u(rng)) * 0.4;
    std::vector<int> expect;
    int best = -1;
    double best_d = 1e300;
    for (Eigen::Index i = 0; i < pts.cols(); ++i) {
      const double d = (pts.col(i) - query).norm();
      if (d <= r) expect.push_back(static_cast<int>(i));
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(i);
      }
    }
    CHECK(tree.radius_search(query, r) == expect);
    const auto [idx, dist] = tree.nearest(query);
    CHECK(idx == best);
    CHECK(dist == Approx(best_d));
  }
  CHECK(tree.nearest(pts.col(20)).first == 10);
  CHECK(KdTree().nearest(Eigen::Vector3d::Zero()).first == -1);
  CHECK(KdTree().radius_search(Eigen::Vector3d::Zero(), 1.0).empty());
}

TEST_CASE("ground plane alignment") {
  SUBCASE("already level cloud is a fixed point") {
    auto pts = ground_grid(-5, 5, -5, 5, 0.5);
    pts.emplace_back(1.0, 1.0, 2.0);
    pts.emplace_back(-2.0, 3.0, 1.5);
    pts.emplace_back(0.5, -1.0, 3.0);
    const auto res = align_ground_plane(make_cloud(pts));
    CHECK((res.transform.linear() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((res.plane - Eigen::Vector4d(0, 0, 1, 0)).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(res.inliers == static_cast<int>(pts.size()) - 3);
  }

  SUBCASE("tilted cloud is leveled") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> noise(0.0, 0.01);
    auto pts = ground_grid(-8, 8, -8, 8, 0.4);
    for (auto& p : pts) p.z() = noise(rng);
    std::uniform_real_distribution<double> u(-4.0, 4.0);
    for (int i = 0; i < 150; ++i) pts.emplace_back(u(rng), u(rng), 1.0 + std::abs(u(rng)));
    const Eigen::AngleAxisd tilt(deg(10.0), Eigen::Vector3d::UnitX());
    for (auto& p : pts) p = tilt * p + Eigen::Vector3d(0.3, -0.2, 1.7);
    auto cloud = make_cloud(pts);
    cloud.sensor_origin = tilt * Eigen::Vector3d(0, 0, 2.0) + Eigen::Vector3d(0.3, -0.2, 1.7);

    const auto res = align_ground_plane(cloud);
    const double recovered = std::acos(std::clamp(res.plane.head<3>().dot(Eigen::Vector3d::UnitZ()), -1.0, 1.0));
    CHECK(std::abs(recovered - deg(10.0)) < deg(0.1));
    double worst = 0.0;
    for (Eigen::Index i = 0; i < res.cloud.size() - 150; ++i) worst = std::max(worst, std::abs(res.cloud.points(2, i)));
    CHECK(worst < 0.06);
    CHECK(res.cloud.sensor_origin.z() == Approx(2.0).epsilon(1e-2));

    const auto again = align_ground_plane(cloud);
    CHECK(again.plane == res.plane);
  }

  SUBCASE("normal is oriented upwards") {
    auto pts = ground_grid(-3, 3, -3, 3, 0.5);
    const Eigen::AngleAxisd flip(std::numbers::pi, Eigen::Vector3d::UnitX());
    for (auto& p : pts) p = flip * p;
    const auto res = align_ground_plane(make_cloud(pts));
    CHECK(res.plane.z() > 0.0);
    CHECK(res.cloud.points.row(2).cwiseAbs().maxCoeff() < 1e-9);
  }

  SUBCASE("degenerate inputs") {
    const auto line = make_cloud({{0, 0, 0}, {1, 1, 1}, {2, 2, 2}});
    try {
      align_ground_plane(line);
      FAIL("expected rejection");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::degenerate_cloud);
    }
    CHECK_THROWS_AS(align_ground_plane(make_cloud({{0, 0, 0}, {1, 0, 0}})), Error);
  }
}

TEST_CASE("point features") {
  const NeighborhoodParams p{60, deg(0.08)};

  SUBCASE("singleton neighborhood") {
    auto cloud = make_cloud({{10, 0, 1.5}, {20, 0, 0}}, 0.7);
    const auto f = point_features(cloud, 0, p);
    CHECK(f[0] == 1.5);
    CHECK(f[1] == 1.5);
    CHECK(f[2] == 1.5);
    CHECK(f[3] == 0.0);
    CHECK(f[4] == Approx(1.0 / 3.0));
    CHECK(f[5] == Approx(1.0 / 3.0));
    CHECK(f[6] == Approx(1.0 / 3.0));
    CHECK(f[7] == 1.0);
    CHECK(f[8] == 0.7);
  }

  SUBCASE("flat ground") {
    const auto cloud = make_cloud(ground_grid(8, 12, -2, 2, 0.1));
    const auto feats = extract_features(cloud, p);
    for (Eigen::Index i = 0; i < feats.cols(); ++i) {
      CHECK(feats.col(i).head<4>().cwiseAbs().maxCoeff() < 1e-12);
      CHECK(std::abs(feats(6, i)) < 1e-9);
      CHECK(feats(7, i) < 1e-6);
    }
  }

  SUBCASE("vertical pole") {
    std::vector<Eigen::Vector3d> pts;
    for (int k = 0; k <= 40; ++k) pts.emplace_back(10.0, 0.0, 0.05 * k);
    const auto feats = extract_features(make_cloud(pts), p);
    for (Eigen::Index i = 0; i < feats.cols(); ++i) CHECK(feats(7, i) == Approx(1.0).epsilon(1e-6));
    CHECK(feats(4, 20) == Approx(1.0));
  }

  SUBCASE("invariants on a random scene") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Eigen::Vector3d> pts;
    for (int i = 0; i < 1500; ++i) {
      const double a = u(rng) * 2.0 * std::numbers::pi, r = 4.0 + 8.0 * u(rng);
      pts.emplace_back(r * std::cos(a), r * std::sin(a), u(rng) < 0.7 ? 0.02 * u(rng) : 2.0 * u(rng));
    }
    auto cloud = make_cloud(pts);
    for (Eigen::Index i = 0; i < cloud.size(); ++i) cloud.intensity[i] = u(rng);
    const auto feats = extract_features(cloud, p);

    for (Eigen::Index i = 0; i < feats.cols(); ++i) {
      CHECK(feats(4, i) >= feats(5, i));
      CHECK(feats(5, i) >= feats(6, i));
      CHECK(feats(6, i) >= 0.0);
      CHECK(std::abs(feats.col(i).segment<3>(4).sum() - 1.0) < 1e-9);
      CHECK(feats(7, i) >= 0.0);
      CHECK(feats(7, i) <= 1.0);
      CHECK(feats(3, i) >= 0.0);
    }

    auto rotated = cloud;
    rotated.points = Eigen::AngleAxisd(0.7, Eigen::Vector3d::UnitZ()).toRotationMatrix() * cloud.points;
    CHECK((extract_features(rotated, p) - feats).cwiseAbs().maxCoeff() < 1e-6);

    auto dim = cloud;
    dim.intensity *= 0.5;
    const auto fd = extract_features(dim, p);
    CHECK((fd.topRows(8) - feats.topRows(8)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((fd.row(8) - 0.5 * feats.row(8)).cwiseAbs().maxCoeff() < 1e-15);

    CHECK(extract_features(cloud, p, 3) == feats);
  }

  CHECK_THROWS_AS(point_features(make_cloud({{1, 0, 0}}), 3, p), Error);
}

TEST_CASE("point classifiers") {
  const LabelSet labels = LabelSet::four_class();
  const AdmissibleMask mask = lidar_mask(labels);

  SUBCASE("constant stub") {
    const ConstantClassifier stub(labels, mask);
    const auto table = classify_points(Eigen::MatrixXd::Random(9, 5), stub);
    table.validate();
    for (Eigen::Index i = 0; i < 5; ++i) {
      CHECK(table.probs(i, 1) == 0.0);
      CHECK(table.probs(i, 0) == Approx(1.0 / 3.0));
    }
    CHECK_THROWS_AS(stub.predict(Eigen::MatrixXd::Zero(4, 2)), Error);
  }

  SUBCASE("logistic regression on separable data") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g(0.0, 1.0);
    auto sample = [&](int n, Eigen::MatrixXd& x, std::vector<int>& y) {
      x.resize(9, n);
      y.resize(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        const int cls = i % 2 == 0 ? 0 : 3;
        for (int r = 0; r < 9; ++r) x(r, i) = 100.0 + 20.0 * g(rng);
        x(0, i) = (cls == 0 ? 0.0 : 1.5) + 0.2 * g(rng);
        x(7, i) = (cls == 0 ? 0.05 : 0.9) + 0.03 * g(rng);
        y[static_cast<std::size_t>(i)] = cls;
      }
    };
    Eigen::MatrixXd xtr, xte;
    std::vector<int> ytr, yte;
    sample(400, xtr, ytr);
    sample(400, xte, yte);
    const auto model = LogisticClassifier::train(xtr, ytr, labels, mask);
    CHECK((model.mean().array() != 0.0).all());

    const auto table = classify_points(xte, model);
    table.validate();
    int correct = 0;
    for (Eigen::Index i = 0; i < table.size(); ++i) {
      Eigen::Index arg = 0;
      table.probs.row(i).maxCoeff(&arg);
      correct += static_cast<int>(arg) == yte[static_cast<std::size_t>(i)];
      CHECK(table.probs(i, 1) == 0.0);
    }
    CHECK(static_cast<double>(correct) / 400.0 > 0.95);

    std::stringstream ss;
    model.save(ss);
    const auto loaded = load_classifier(ss);
    CHECK(loaded->kind() == "logistic");
    CHECK((loaded->predict(xte) - model.predict(xte)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_THROWS_AS(model.predict(Eigen::MatrixXd::Zero(5, 1)), Error);
  }

  SUBCASE("standardization is stored and reapplied") {
    Eigen::MatrixXd x(2, 4);
    x << 0, 1, 2, 3, 10, 10, 10, 10;
    const auto model = LogisticClassifier::train(x, {0, 0, 2, 2}, labels, mask);
    CHECK(model.mean()[0] == Approx(1.5));
    CHECK(model.scale()[0] == Approx(std::sqrt(1.25)));
    CHECK(model.scale()[1] == 1.0);  // constant feature left unscaled

    Eigen::MatrixXd shifted = x;
    shifted.row(0).array() = (x.row(0).array() - 1.5) / std::sqrt(1.25);
    const LogisticClassifier identity(labels, mask, Eigen::Vector2d(0.0, 10.0), Eigen::Vector2d(1.0, 1.0),
                                      model.coefficients());
    CHECK((identity.predict(shifted) - model.predict(x)).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("checkpoint rejects garbage") {
    std::stringstream bad("fusioncrf-point-classifier 2\n");
    CHECK_THROWS_AS(load_classifier(bad), Error);
    std::stringstream stub_text;
    ConstantClassifier(labels, mask).save(stub_text);
    CHECK(load_classifier(stub_text)->kind() == "constant");
  }

  CHECK_THROWS_AS(LogisticClassifier::train(Eigen::MatrixXd::Zero(9, 2), {1, 0}, labels, mask), Error);
}
