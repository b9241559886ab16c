#include <doctest.h>

#include <cmath>
#include <random>

#include "fusioncrf/error.hpp"
#include "fusioncrf/graph.hpp"
#include "support/random_graph.hpp"

using namespace fusioncrf;

namespace {

NodePayload payload(std::initializer_list<double> probs, const AdmissibleMask& mask) {
  Eigen::VectorXd p(static_cast<Eigen::Index>(probs.size()));
  Eigen::Index i = 0;
  for (double v : probs) p(i++) = v;
  return NodePayload::from_probabilities(p, mask);
}

Errc build_error(const LabelSet& labels, std::vector<std::pair<NodeRef, NodePayload>> nodes, std::vector<Edge> edges,
                 std::set<NodeRef> hidden = {}) {
  try {
    build_graph(labels, std::move(nodes), std::move(edges), std::move(hidden));
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected rejection");
  return Errc::invalid_argument;
}

const NodeRef kA{0, Modality::image2d, 0};
const NodeRef kB{0, Modality::image2d, 1};
const NodeRef kV{0, Modality::lidar3d, 0};

}  // namespace

TEST_CASE("label sets") {
  CHECK(LabelSet::four_class().count() == 4);
  CHECK(LabelSet::four_class().index_of("object") == 3);
  CHECK_THROWS_AS(LabelSet({"a"}), Error);
  CHECK_THROWS_AS(LabelSet({"a", "a"}), Error);
  const auto m = LabelMapping::nine_to_four();
  CHECK(m(LabelSet::nine_class().index_of("pole")) == 3);
  CHECK(m(LabelSet::nine_class().index_of("sky")) == 1);
  try {
    LabelMapping::from_names(LabelSet::four_class(), LabelSet::binary(), {{"ground", "ground"}});
    FAIL("expected rejection");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::mapping_not_total);
  }
}

TEST_CASE("build_graph accepts a minimal graph") {
  const auto labels = LabelSet::binary();
  auto g = build_graph(labels, {{kA, payload({0.3, 0.7}, image_mask(labels))}, {kB, payload({0.5, 0.5}, image_mask(labels))}},
                       {{EdgeKind::spatial2d, kA, kB, 0.5}});
  CHECK(g.node_count() == 2);
  CHECK(g.edge_count() == 1);
  CHECK(g.incident(0).size() == 1);
  CHECK(g.edge(0).kernel == doctest::Approx(0.5));
}

TEST_CASE("build_graph rejections are distinct") {
  const auto labels = LabelSet::four_class();
  auto p2 = payload({0.25, 0.25, 0.25, 0.25}, image_mask(labels));
  auto p3 = payload({0.4, 0.0, 0.3, 0.3}, lidar_mask(labels));
  CHECK(build_error(labels, {{kA, p2}}, {{EdgeKind::spatial2d, kA, kB, 0.5}}) == Errc::dangling_endpoint);
  CHECK(build_error(labels, {{kA, p2}, {kB, p2}}, {{EdgeKind::cross_modal, kA, kB, 0.5}}) == Errc::kind_mismatch);
  CHECK(build_error(labels, {{kA, p2}, {kA, p2}}, {}) == Errc::duplicate_node);
  CHECK(build_error(labels, {{kA, p2}, {kB, p2}}, {{EdgeKind::spatial2d, kA, kB, 1.5}}) == Errc::kernel_out_of_range);
  CHECK(build_error(labels, {{kA, p2}, {kB, p2}},
                    {{EdgeKind::spatial2d, kA, kB, 0.5}, {EdgeKind::spatial2d, kB, kA, 0.1}}) == Errc::duplicate_edge);
  CHECK(build_error(labels, {{kA, p2}}, {}, {kB}) == Errc::unknown_node);
  // sky admissible on a 3D node
  CHECK(build_error(labels, {{kV, p2}}, {}) == Errc::invalid_payload);
  // temporal edges must cross frames
  const NodeRef v1{0, Modality::lidar3d, 1};
  CHECK(build_error(labels, {{kV, p3}, {v1, p3}}, {{EdgeKind::temporal, kV, v1, 0.5}}) == Errc::kind_mismatch);
}

TEST_CASE("cross-modal edges are stored 2D first") {
  const auto labels = LabelSet::four_class();
  auto g = build_graph(labels,
                       {{kA, payload({0.25, 0.25, 0.25, 0.25}, image_mask(labels))},
                        {kV, payload({0.4, 0.0, 0.3, 0.3}, lidar_mask(labels))}},
                       {{EdgeKind::cross_modal, kV, kA, 0.5}});
  CHECK(g.edge(0).a == kA);
  CHECK(g.edge(0).b == kV);
}

TEST_CASE("payload invariants") {
  const auto labels = LabelSet::four_class();
  auto p = payload({0.4, 0.9, 0.3, 0.3}, lidar_mask(labels));
  CHECK(std::isinf(p.unary_log_prob(1)));
  CHECK(p.unary_log_prob(1) < 0);
  double s = 0;
  for (int l = 0; l < 4; ++l) {
    if (p.admissible(l)) s += std::exp(p.unary_log_prob(l));
  }
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  // exact zeros are clamped, never -inf on admissible labels
  auto z = payload({1.0, 0.0}, image_mask(LabelSet::binary()));
  CHECK(std::isfinite(z.unary_log_prob(1)));
}

TEST_CASE("restrict_labels") {
  const auto labels = LabelSet::four_class();
  const NodeRef v{0, Modality::lidar3d, 0};
  auto g = build_graph(labels,
                       {{kA, payload({0.1, 0.2, 0.3, 0.4}, image_mask(labels))},
                        {v, payload({0.2, 0.0, 0.3, 0.5}, lidar_mask(labels))}},
                       {{EdgeKind::cross_modal, kA, v, 0.5}});

  SUBCASE("ground | rest sums probabilities") {
    auto r = restrict_labels(g, LabelMapping::four_to_binary());
    const auto p = r.payload(r.index_of(kA)).probabilities();
    CHECK(p(0) == doctest::Approx(0.1).epsilon(1e-9));
    CHECK(p(1) == doctest::Approx(0.9).epsilon(1e-9));
    // sky inadmissible on the 3D node, but non-ground is admissible through OR
    CHECK(r.payload(r.index_of(v)).admissible(1));
    CHECK(r.label_count() == 2);
  }
  SUBCASE("identity leaves the graph unchanged") {
    auto r = restrict_labels(g, LabelMapping::identity(labels));
    for (int i = 0; i < g.node_count(); ++i) {
      for (int l = 0; l < 4; ++l) {
        const double x = g.payload(i).unary_log_prob(l);
        const double y = r.payload(i).unary_log_prob(l);
        if (std::isinf(x)) {
          CHECK(x == y);
        } else {
          CHECK(y == doctest::Approx(x).epsilon(1e-12));
        }
      }
    }
  }
  SUBCASE("composition") {
    const LabelSet three({"ground", "sky", "other"});
    const auto first = LabelMapping::from_names(
        labels, three, {{"ground", "ground"}, {"sky", "sky"}, {"vegetation", "other"}, {"object", "other"}});
    const auto second = LabelMapping::from_names(three, LabelSet::binary(),
                                                 {{"ground", "ground"}, {"sky", "non-ground"}, {"other", "non-ground"}});
    auto two_step = restrict_labels(restrict_labels(g, first), second);
    auto one_step = restrict_labels(g, first.then(second));
    for (int i = 0; i < g.node_count(); ++i) {
      CHECK((two_step.payload(i).admissible == one_step.payload(i).admissible).all());
      CHECK(two_step.payload(i).unary_log_prob.isApprox(one_step.payload(i).unary_log_prob, 1e-12));
    }
  }
}

TEST_CASE("weight set structure") {
  WeightSet w(4);
  w.set_weight(EdgeKind::spatial2d, 0, 2, 2.037);
  CHECK(w.weights(EdgeKind::spatial2d)(2, 0) == 2.037);
  w.set_weight(EdgeKind::cross_modal, 0, 2, 1.0);
  CHECK(w.weights(EdgeKind::cross_modal)(2, 0) == 0.0);
  CHECK_THROWS_AS(w.set_weight(EdgeKind::spatial3d, 1, 1, 1.0), Error);
  CHECK(w.has_valid_structure());
  w.weights(EdgeKind::temporal)(0, 1) = 1.0;
  CHECK_FALSE(w.has_valid_structure());
  w.enforce_structure();
  CHECK(w.has_valid_structure());
  CHECK(w.weights(EdgeKind::temporal)(1, 0) == 0.5);
}

TEST_CASE("canonical order is independent of construction order") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto g = testing::random_graph(rng, {.nodes = 8, .labels = 3, .extra_edges = 3});
    std::vector<std::pair<NodeRef, NodePayload>> nodes;
    for (int i = g.node_count() - 1; i >= 0; --i) nodes.emplace_back(g.ref(i), g.payload(i));
    std::vector<Edge> edges(g.edges().rbegin(), g.edges().rend());
    auto h = build_graph(g.labels(), nodes, edges, g.hidden());
    REQUIRE(h.edge_count() == g.edge_count());
    for (int e = 0; e < g.edge_count(); ++e) {
      CHECK(h.edge(e).a == g.edge(e).a);
      CHECK(h.edge(e).b == g.edge(e).b);
    }
  }
}
