#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <random>

#include "fusioncrf/error.hpp"
#include "fusioncrf/optimize.hpp"
#include "fusioncrf/potentials.hpp"
#include "fusioncrf/training.hpp"
#include "support/random_graph.hpp"
#include "support/sampling.hpp"

using namespace fusioncrf;
using doctest::Approx;

namespace {

BPConfig tight() {
  BPConfig cfg;
  cfg.tolerance = 1e-12;
  cfg.max_iterations = 3000;
  return cfg;
}

TrainingExample observe_all_but_hidden(const FusionGraph& g, const Labeling& truth) {
  Labeling obs = truth;
  for (int i = 0; i < g.node_count(); ++i) {
    if (g.is_hidden(i)) obs[static_cast<std::size_t>(i)] = -1;
  }
  return TrainingExample::make(g, obs);
}

}  // namespace

TEST_CASE("optimizer minimizes a quadratic") {
  Eigen::MatrixXd A(3, 3);
  A << 4, 1, 0, 1, 3, 0.5, 0, 0.5, 2;
  const Eigen::Vector3d b(1, -2, 0.5);
  Objective f = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g = A * x - b;
    return 0.5 * x.dot(A * x) - b.dot(x);
  };
  auto r = minimize_lbfgs(f, Eigen::VectorXd::Zero(3), {.max_iterations = 100, .gradient_tolerance = 1e-10});
  CHECK(r.converged);
  CHECK((r.x - A.ldlt().solve(b)).norm() < 1e-8);
  auto d = minimize_gradient_descent(f, Eigen::VectorXd::Zero(3),
                                     {.max_iterations = 5000, .gradient_tolerance = 1e-8, .fixed_step = 0.2});
  CHECK(d.converged);
  CHECK((d.x - A.ldlt().solve(b)).norm() < 1e-6);
}

TEST_CASE("example validation") {
  const auto labels = LabelSet::binary();
  NodeRef a{0, Modality::image2d, 0}, b{1, Modality::lidar3d, 0};
  auto g = build_graph(labels,
                       {{a, NodePayload::from_probabilities(Eigen::Vector2d(0.3, 0.7), image_mask(labels))},
                        {b, NodePayload::from_probabilities(Eigen::Vector2d(0.3, 0.7), lidar_mask(labels))}},
                       {}, {b});
  CHECK_NOTHROW(TrainingExample::make(g, std::map<NodeRef, int>{{a, 1}}));
  CHECK_THROWS_AS(TrainingExample::make(g, std::map<NodeRef, int>{}), Error);
  CHECK_THROWS_AS(TrainingExample::make(g, std::map<NodeRef, int>{{a, 1}, {b, 0}}), Error);
}

TEST_CASE("log-likelihood closed forms") {
  const auto labels = LabelSet::binary();
  NodeRef a{0, Modality::image2d, 0};
  auto g = build_graph(labels, {{a, NodePayload::from_probabilities(Eigen::Vector2d(0.3, 0.7), image_mask(labels))}}, {});
  auto ex = TrainingExample::make(g, std::map<NodeRef, int>{{a, 1}});
  for (auto method : {InferenceMethod::exact, InferenceMethod::bethe}) {
    CHECK(log_likelihood(ex, WeightSet(2), BPConfig{}, method) == Approx(-0.3567).epsilon(1e-4));
  }

  std::mt19937_64 rng(4);
  for (int t = 0; t < 10; ++t) {
    auto r = testing::random_graph(rng, {.nodes = 6, .labels = 3, .extra_edges = 2});
    Labeling obs(6);
    double expected = 0;
    for (int i = 0; i < 6; ++i) {
      int l = 0;
      while (!r.payload(i).admissible(l)) ++l;
      obs[static_cast<std::size_t>(i)] = l;
      expected += r.payload(i).unary_log_prob(l);
    }
    auto e = TrainingExample::make(r, obs);
    CHECK(log_likelihood(e, WeightSet(3), BPConfig{}, InferenceMethod::exact) == Approx(expected).epsilon(1e-12));
    CHECK(log_likelihood(e, WeightSet(3), BPConfig{}, InferenceMethod::bethe) == Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("hidden nodes are marginalized") {
  const auto labels = LabelSet::binary();
  NodeRef cur{1, Modality::lidar3d, 0}, prev{0, Modality::lidar3d, 0};
  auto g = build_graph(labels,
                       {{cur, NodePayload::from_probabilities(Eigen::Vector2d(0.6, 0.4), lidar_mask(labels))},
                        {prev, NodePayload::from_probabilities(Eigen::Vector2d(0.2, 0.8), lidar_mask(labels))}},
                       {{EdgeKind::temporal, cur, prev, 0.8}}, {prev});
  WeightSet w(2);
  w.set_weight(EdgeKind::temporal, 0, 1, 1.3);
  w.set_bias(EdgeKind::temporal, 0, 1, 0.2);
  auto ex = TrainingExample::make(g, std::map<NodeRef, int>{{cur, 0}});
  // by hand: p(cur = 0) = sum_prev p(cur=0, prev) / Z
  const double c = 1.3 * 0.8 + 0.2;
  const double num = 0.6 * (0.2 + 0.8 * std::exp(-c));
  const double z = num + 0.4 * (0.8 + 0.2 * std::exp(-c));
  const double expected = std::log(num / z);
  CHECK(log_likelihood(ex, w, tight(), InferenceMethod::exact) == Approx(expected).epsilon(1e-12));
  CHECK(std::abs(log_likelihood(ex, w, tight(), InferenceMethod::bethe) - expected) < 1e-9);
}

TEST_CASE("gradient edge cases") {
  std::mt19937_64 rng(10);
  SUBCASE("no edges, no pairwise gradient") {
    auto g = testing::random_graph(rng, {.nodes = 1, .labels = 3});
    auto ex = TrainingExample::make(g, Labeling{g.payload(0).admissible(0) ? 0 : (g.payload(0).admissible(1) ? 1 : 2)});
    auto w = testing::random_weights(rng, 3, 1.0, 1.0);
    w.l2_lambda = 0.0;
    auto grad = gradient(ex, w, BPConfig{});
    CHECK(grad.is_zero());
  }
  SUBCASE("strong unaries at their argmax give a small gradient") {
    const auto labels = LabelSet::four_class();
    std::vector<std::pair<NodeRef, NodePayload>> nodes;
    std::vector<Edge> edges;
    Labeling obs;
    for (int i = 0; i < 6; ++i) {
      Eigen::Vector4d p = Eigen::Vector4d::Constant(0.01 / 3);
      const int l = i % 3 == 0 ? 0 : 2;
      p(l) = 0.99;
      nodes.emplace_back(NodeRef{0, Modality::image2d, i}, NodePayload::from_probabilities(p, image_mask(labels)));
      obs.push_back(l);
      if (i > 0) edges.push_back({EdgeKind::spatial2d, {0, Modality::image2d, i - 1}, {0, Modality::image2d, i}, 0.6});
    }
    auto ex = TrainingExample::make(build_graph(labels, nodes, edges), obs);
    auto grad = gradient(ex, WeightSet(4), BPConfig{});
    for (auto kind : kAllEdgeKinds) {
      CHECK(grad.weights(kind).cwiseAbs().maxCoeff() < 0.1);
      CHECK(grad.biases(kind).cwiseAbs().maxCoeff() < 0.1);
    }
  }
  SUBCASE("tied gradient is symmetric and twice the one-sided part on average") {
    auto g = testing::random_graph(rng, {.nodes = 6, .labels = 3, .extra_edges = 1, .inadmissible_rate = 0.0});
    auto w = testing::random_weights(rng, 3, 0.7, 0.3);
    w.l2_lambda = 0.0;
    Labeling obs(6, 1);
    auto ex = TrainingExample::make(g, obs);
    auto tied = gradient(ex, w, BPConfig{}, InferenceMethod::exact, true);
    auto untied = gradient(ex, w, BPConfig{}, InferenceMethod::exact, false);
    CHECK(tied.has_valid_structure());
    for (auto kind : {EdgeKind::spatial2d, EdgeKind::spatial3d, EdgeKind::temporal}) {
      CHECK(tied.weights(kind).isApprox(untied.weights(kind) + untied.weights(kind).transpose(), 1e-12));
    }
  }
}

TEST_CASE("analytic gradient matches finite differences") {
  std::mt19937_64 rng(2024);
  SUBCASE("exact inference, including hidden nodes") {
    for (int t = 0; t < 8; ++t) {
      auto g = testing::random_graph(rng, {.nodes = 6, .labels = 3, .extra_edges = 2, .hidden_rate = 0.3});
      auto w = testing::random_weights(rng, 3, 1.0, 0.4);
      w.l2_lambda = 0.3;
      auto ex = observe_all_but_hidden(g, testing::sample_labeling(g, w, rng));
      CHECK(finite_diff_check(ex, w, 1e-5, tight(), InferenceMethod::exact) < 1e-6);
    }
  }
  SUBCASE("zero weights") {
    auto g = testing::random_graph(rng, {.nodes = 5, .labels = 3, .extra_edges = 1});
    auto ex = observe_all_but_hidden(g, testing::sample_labeling(g, WeightSet(3), rng));
    CHECK(finite_diff_check(ex, WeightSet(3), 1e-5, tight(), InferenceMethod::exact) < 1e-6);
  }
  SUBCASE("Bethe on loopy graphs is self-consistent") {
    for (int t = 0; t < 4; ++t) {
      auto g = testing::random_graph(rng, {.nodes = 7, .labels = 3, .extra_edges = 3, .hidden_rate = 0.3});
      auto w = testing::random_weights(rng, 3, 0.5, 0.2);
      auto ex = observe_all_but_hidden(g, testing::sample_labeling(g, w, rng));
      CHECK(finite_diff_check(ex, w, 1e-5, tight(), InferenceMethod::bethe) < 1e-3);
    }
  }
}

TEST_CASE("fit") {
  std::mt19937_64 rng(31);
  std::vector<TrainingExample> data;
  WeightSet truth(3);
  truth.set_weight(EdgeKind::spatial2d, 0, 1, 1.5);
  truth.set_weight(EdgeKind::spatial2d, 1, 2, 0.8);
  truth.set_weight(EdgeKind::cross_modal, 0, 2, 1.2);
  for (int t = 0; t < 30; ++t) {
    auto g = testing::random_graph(rng, {.nodes = 6, .labels = 3, .extra_edges = 1, .hidden_rate = 0.15});
    data.push_back(observe_all_but_hidden(g, testing::sample_labeling(g, truth, rng)));
  }

  SUBCASE("output keeps structure and improves the objective") {
    TrainConfig cfg;
    cfg.l2_lambda = 0.1;
    auto r = fit(data, cfg, BPConfig{}, WeightSet(3));
    CHECK(r.weights.has_valid_structure());
    CHECK(r.weights.l2_lambda == 0.1);
    double ll0 = 0, ll1 = 0;
    for (const auto& ex : data) {
      ll0 += log_likelihood(ex, WeightSet(3), BPConfig{});
      ll1 += log_likelihood(ex, r.weights, BPConfig{});
    }
    CHECK(ll1 > ll0);
  }
  SUBCASE("huge L2 pins the weights") {
    TrainConfig cfg;
    cfg.l2_lambda = 1e6;
    auto r = fit(data, cfg, BPConfig{}, WeightSet(3));
    for (auto kind : kAllEdgeKinds) CHECK(r.weights.weights(kind).cwiseAbs().maxCoeff() < 1e-3);
  }
  SUBCASE("moment matching at the unregularized optimum") {
    TrainConfig cfg;
    cfg.l2_lambda = 0.0;
    cfg.gradient_tolerance = 1e-7;
    cfg.max_outer_iterations = 1000;
    cfg.method = InferenceMethod::exact;
    auto r = fit(data, cfg, BPConfig{}, WeightSet(3));
    CHECK(r.converged);
    WeightSet total(3);
    for (const auto& ex : data) {
      auto g = gradient(ex, r.weights, BPConfig{}, InferenceMethod::exact);
      for (auto kind : kAllEdgeKinds) {
        total.weights(kind) += g.weights(kind);
        total.biases(kind) += g.biases(kind);
      }
    }
    for (auto kind : kAllEdgeKinds) {
      CHECK(total.weights(kind).cwiseAbs().maxCoeff() < 1e-7);
      CHECK(total.biases(kind).cwiseAbs().maxCoeff() < 1e-7);
    }
  }
  SUBCASE("doubling the data and lambda keeps the fixed point") {
    TrainConfig cfg;
    cfg.l2_lambda = 0.5;
    cfg.gradient_tolerance = 1e-7;
    cfg.max_outer_iterations = 300;
    auto single = fit(data, cfg, BPConfig{}, WeightSet(3));
    auto doubled_data = data;
    doubled_data.insert(doubled_data.end(), data.begin(), data.end());
    cfg.l2_lambda = 1.0;
    auto doubled = fit(doubled_data, cfg, BPConfig{}, WeightSet(3));
    const ParameterLayout layout(3);
    CHECK((layout.flatten(single.weights) - layout.flatten(doubled.weights)).cwiseAbs().maxCoeff() < 1e-5);
  }
  SUBCASE("fixed-step rule also ascends") {
    TrainConfig cfg;
    cfg.step_rule = StepRule::fixed_step;
    cfg.max_outer_iterations = 30;
    cfg.fixed_step = 0.01;
    auto r = fit(data, cfg, BPConfig{}, WeightSet(3));
    CHECK(r.weights.has_valid_structure());
    CHECK(r.objective > fit(data, {.max_outer_iterations = 1, .step_rule = StepRule::fixed_step, .fixed_step = 0.0},
                            BPConfig{}, WeightSet(3)).objective - 1e-12);
  }
}

TEST_CASE("labels that never disagree across edges push weights up") {
  const auto labels = LabelSet::binary();
  std::vector<TrainingExample> data;
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.2, 0.8);
  std::uniform_real_distribution<double> kernel(0.1, 1.0);
  for (int t = 0; t < 20; ++t) {
    std::vector<std::pair<NodeRef, NodePayload>> nodes;
    std::vector<Edge> edges;
    const int label = t % 2;
    for (int i = 0; i < 4; ++i) {
      const double p = u(rng);
      nodes.emplace_back(NodeRef{0, Modality::image2d, i},
                         NodePayload::from_probabilities(Eigen::Vector2d(p, 1 - p), image_mask(labels)));
      if (i > 0) edges.push_back({EdgeKind::spatial2d, {0, Modality::image2d, i - 1}, {0, Modality::image2d, i}, kernel(rng)});
    }
    data.push_back(TrainingExample::make(build_graph(labels, nodes, edges), Labeling(4, label)));
  }
  TrainConfig cfg;
  cfg.l2_lambda = 0.0;
  cfg.max_outer_iterations = 20;
  auto r = fit(data, cfg, BPConfig{}, WeightSet(2));
  CHECK(r.weights.weights(EdgeKind::spatial2d)(0, 1) > 0.0);
  CHECK(r.weights.weights(EdgeKind::spatial2d)(0, 1) + r.weights.biases(EdgeKind::spatial2d)(0, 1) > 1.0);
}

TEST_CASE("errors") {
  CHECK_THROWS_AS(fit({}, TrainConfig{}, BPConfig{}, WeightSet(2)), Error);
  std::mt19937_64 rng(1);
  auto g = testing::random_graph(rng, {.nodes = 2, .labels = 2, .inadmissible_rate = 0.0});
  auto ex = TrainingExample::make(g, Labeling{0, 0});
  CHECK_THROWS_AS(finite_diff_check(ex, WeightSet(2), 0.0, BPConfig{}), Error);
  CHECK_THROWS_AS(log_likelihood(ex, WeightSet(3), BPConfig{}), Error);
}
