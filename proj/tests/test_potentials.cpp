#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fusioncrf/inference.hpp"
#include "fusioncrf/potentials.hpp"
#include "support/random_graph.hpp"

using namespace fusioncrf;
using doctest::Approx;

TEST_CASE("unary cost") {
  CHECK(unary_cost(1.0) == 0.0);
  CHECK(unary_cost(0.5) == Approx(0.6931).epsilon(1e-4));
  CHECK(unary_cost(0.0, 1e-9) == Approx(20.723).epsilon(1e-4));
  CHECK_THROWS_AS(unary_cost(1.5), Error);
  CHECK_THROWS_AS(unary_cost(-0.1), Error);
}

TEST_CASE("rgb kernel") {
  const Eigen::Vector3d grey(0.5, 0.5, 0.5);
  CHECK(rgb_kernel(grey, grey, 0.5) == 1.0);
  CHECK(rgb_kernel(Eigen::Vector3d(0, 0, 0), Eigen::Vector3d(1, 0, 0), 0.5) == Approx(std::exp(-2.0)).epsilon(1e-12));
  CHECK(rgb_kernel(Eigen::Vector3d(0, 0, 0), Eigen::Vector3d(1, 1, 1), 0.5) == Approx(0.00248).epsilon(1e-2));
  CHECK(rgb_kernel(Eigen::Vector3d(0, 0, 0), Eigen::Vector3d(1, 1, 1), 0.5) == Approx(std::exp(-6.0)));
  CHECK_THROWS_AS(rgb_kernel(Eigen::Vector3d(0, 0, 2), grey, 0.5), Error);
  // templated on scalar
  CHECK(rgb_kernel(Eigen::Vector3f(0, 0, 0), Eigen::Vector3f(1, 0, 0), 0.5f) == Approx(std::exp(-2.0)).epsilon(1e-6));
}

TEST_CASE("normal kernel") {
  CHECK(normal_kernel(0.3, 0.3, 0.5) == 1.0);
  CHECK(normal_kernel(0.0, std::numbers::pi / 2, 0.5) == Approx(0.00720).epsilon(2e-3));
  CHECK(normal_kernel(0.0, std::numbers::pi / 2, 0.5) == Approx(std::exp(-4.934802200544679)).epsilon(1e-12));
  CHECK(normal_kernel(0.2, 0.3, 0.5) == Approx(0.9802).epsilon(1e-4));
  CHECK_THROWS_AS(normal_kernel(-0.1, 0.3, 0.5), Error);
  CHECK_THROWS_AS(normal_kernel(0.1, 2.0, 0.5), Error);
}

TEST_CASE("temporal kernel") {
  const double st = 1.0 / std::sqrt(8.0);
  CHECK(temporal_kernel(0.0, 0.0, 1.0, st) == 1.0);
  CHECK(temporal_kernel(0.0, 0.5, 1.0, st) == Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(temporal_kernel(50.0, 0.0, 1.0, st) < 2e-11);
  CHECK_THROWS_AS(temporal_kernel(-1.0, 0.0, 1.0, st), Error);
}

TEST_CASE("kernels are 1 at zero distance and strictly decreasing") {
  double prev_rgb = 2, prev_n = 2, prev_t = 2, prev_v = 2;
  for (int i = 0; i <= 20; ++i) {
    const double d = 0.05 * i;
    const double rgb = rgb_kernel(Eigen::Vector3d(0, 0, 0), Eigen::Vector3d(d, 0, 0), 0.5);
    const double n = normal_kernel(0.0, d, 0.5);
    const double t = temporal_kernel(0.0, d, 1.0, 0.354);
    const double v = temporal_kernel(d, 0.0, 1.0, 0.354);
    if (i == 0) {
      CHECK(rgb == 1.0);
      CHECK(n == 1.0);
      CHECK(t == 1.0);
      CHECK(v == 1.0);
    }
    CHECK(rgb < prev_rgb);
    CHECK(n < prev_n);
    CHECK(t < prev_t);
    CHECK(v < prev_v);
    CHECK(rgb > 0.0);
    prev_rgb = rgb;
    prev_n = n;
    prev_t = t;
    prev_v = v;
  }
}

namespace {

FusionGraph two_node_graph(EdgeKind kind, double kernel, const Eigen::Vector2d& pa, const Eigen::Vector2d& pb) {
  const auto labels = LabelSet::binary();
  NodeRef a{0, Modality::image2d, 0};
  NodeRef b{0, kind == EdgeKind::spatial2d ? Modality::image2d : Modality::lidar3d, 1};
  return build_graph(labels,
                     {{a, NodePayload::from_probabilities(pa, image_mask(labels))},
                      {b, NodePayload::from_probabilities(pb, image_mask(labels))}},
                     {{kind, a, b, kernel}});
}

}  // namespace

TEST_CASE("pairwise cost") {
  WeightSet w(2);
  w.set_weight(EdgeKind::spatial2d, 0, 1, 2.037);
  auto g = two_node_graph(EdgeKind::spatial2d, 1.0, {0.5, 0.5}, {0.5, 0.5});
  CHECK(pairwise_cost(g, 0, 0, 0, w) == 0.0);
  CHECK(pairwise_cost(g, 0, 1, 1, w) == 0.0);
  CHECK(pairwise_cost(g, 0, 0, 1, w) == Approx(2.037));
  CHECK(pairwise_cost(g, 0, 1, 0, w) == Approx(2.037));

  auto x = two_node_graph(EdgeKind::cross_modal, 0.5, {0.5, 0.5}, {0.5, 0.5});
  w.set_weight(EdgeKind::cross_modal, 0, 1, 1.0);
  w.set_weight(EdgeKind::cross_modal, 1, 0, -0.2);
  CHECK(pairwise_cost(x, 0, 0, 1, w) == Approx(0.5));
  CHECK(pairwise_cost(x, 0, 1, 0, w) == Approx(-0.1));

  w.set_bias(EdgeKind::spatial2d, 0, 1, 0.25);
  CHECK(pairwise_cost(g, 0, 0, 1, w) == Approx(2.287));
  CHECK(pairwise_cost(g, 0, 0, 0, w) == 0.0);
}

TEST_CASE("pairwise cost rejects inadmissible labels") {
  const auto labels = LabelSet::four_class();
  NodeRef a{0, Modality::image2d, 0};
  NodeRef v{0, Modality::lidar3d, 0};
  Eigen::Vector4d p(0.25, 0.25, 0.25, 0.25);
  auto g = build_graph(labels,
                       {{a, NodePayload::from_probabilities(p, image_mask(labels))},
                        {v, NodePayload::from_probabilities(p, lidar_mask(labels))}},
                       {{EdgeKind::cross_modal, a, v, 1.0}});
  CHECK_THROWS_AS(pairwise_cost(g, 0, 0, 1, WeightSet(4)), Error);
}

TEST_CASE("total energy") {
  WeightSet w(2);
  SUBCASE("certain unaries, agreeing labels") {
    auto g = two_node_graph(EdgeKind::spatial2d, 1.0, {1.0, 0.0}, {1.0, 0.0});
    w.set_weight(EdgeKind::spatial2d, 0, 1, 3.0);
    CHECK(total_energy(g, Labeling{0, 0}, w) == Approx(0.0).epsilon(1e-8));
  }
  SUBCASE("two-node chain by hand") {
    auto g = two_node_graph(EdgeKind::spatial2d, 0.5, {0.5, 0.5}, {0.5, 0.5});
    w.set_weight(EdgeKind::spatial2d, 0, 1, 1.6);
    w.set_bias(EdgeKind::spatial2d, 0, 1, 0.2);
    CHECK(total_energy(g, Labeling{0, 1}, w) == Approx(2.3863).epsilon(1e-4));
  }
  SUBCASE("single node") {
    const auto labels = LabelSet::four_class();
    auto g = build_graph(labels, {{{0, Modality::image2d, 0},
                                   NodePayload::from_probabilities(Eigen::Vector4d(0.25, 0.25, 0.25, 0.25), image_mask(labels))}},
                         {});
    CHECK(total_energy(g, Labeling{2}, WeightSet(4)) == Approx(std::log(4.0)).epsilon(1e-12));
  }
  SUBCASE("errors") {
    auto g = two_node_graph(EdgeKind::spatial2d, 0.5, {0.5, 0.5}, {0.5, 0.5});
    CHECK_THROWS_AS(total_energy(g, Labeling{0, -1}, w), Error);
    CHECK_THROWS_AS(total_energy(g, Labeling{0}, w), Error);
  }
}

TEST_CASE("pairwise symmetry per edge kind") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 10; ++t) {
    auto g = testing::random_graph(rng, {.nodes = 8, .labels = 3, .extra_edges = 2, .inadmissible_rate = 0.0});
    auto w = testing::random_weights(rng, 3, 1.0, 0.5);
    for (int e = 0; e < g.edge_count(); ++e) {
      for (int a = 0; a < 3; ++a) {
        CHECK(pairwise_cost(g, e, a, a, w) == 0.0);
        for (int b = 0; b < 3; ++b) {
          if (is_symmetric(g.edge(e).kind)) CHECK(pairwise_cost(g, e, a, b, w) == pairwise_cost(g, e, b, a, w));
        }
      }
    }
  }
}

TEST_CASE("zero weights reproduce the product of initial distributions") {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 10; ++t) {
    auto g = testing::random_graph(rng, {.nodes = 2 + t % 8, .labels = 3, .extra_edges = 2});
    const WeightSet zero(3);
    // enumerate exp(-E) over labelings independently of the inference module
    const int n = g.node_count();
    std::vector<Eigen::VectorXd> marg(static_cast<std::size_t>(n), Eigen::VectorXd::Zero(3));
    Labeling x(static_cast<std::size_t>(n), 0);
    double z = 0;
    const int total = static_cast<int>(std::pow(3, n));
    for (int code = 0; code < total; ++code) {
      int c = code;
      bool ok = true;
      for (int i = 0; i < n; ++i) {
        x[static_cast<std::size_t>(i)] = c % 3;
        c /= 3;
        ok = ok && g.payload(i).admissible(x[static_cast<std::size_t>(i)]);
      }
      if (!ok) continue;
      const double p = std::exp(-total_energy(g, x, zero));
      z += p;
      for (int i = 0; i < n; ++i) marg[static_cast<std::size_t>(i)](x[static_cast<std::size_t>(i)]) += p;
    }
    CHECK(z == Approx(1.0).epsilon(1e-9));
    for (int i = 0; i < n; ++i) {
      CHECK((marg[static_cast<std::size_t>(i)] / z).isApprox(g.payload(i).probabilities(), 1e-9));
    }
  }
}

TEST_CASE("total energy is invariant under edge permutation") {
  std::mt19937_64 rng(5);
  auto g = testing::random_graph(rng, {.nodes = 9, .labels = 3, .extra_edges = 4, .inadmissible_rate = 0.0});
  auto w = testing::random_weights(rng, 3, 1.0, 0.5);
  std::vector<std::pair<NodeRef, NodePayload>> nodes;
  for (int i = 0; i < g.node_count(); ++i) nodes.emplace_back(g.ref(i), g.payload(i));
  auto edges = g.edges();
  std::shuffle(edges.begin(), edges.end(), rng);
  auto h = build_graph(g.labels(), nodes, edges);
  Labeling x(static_cast<std::size_t>(g.node_count()));
  for (auto& l : x) l = static_cast<int>(rng() % 3);
  CHECK(total_energy(g, x, w) == total_energy(h, x, w));
}
