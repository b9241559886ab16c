#include "fusioncrf/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

#include <spdlog/spdlog.h>

#include "fusioncrf/error.hpp"
#include "fusioncrf/optimize.hpp"

namespace fusioncrf {

namespace {

struct PartitionStats {
  double log_partition = 0.0;
  std::vector<Eigen::MatrixXd> edge_marginals;
  bool converged = true;
};

PartitionStats partition(const FusionGraph& graph, const WeightSet& weights, const BPConfig& cfg,
                         InferenceMethod method, std::size_t exact_limit, const Labeling& clamp,
                         MessageState* warm = nullptr) {
  bool exact = method == InferenceMethod::exact;
  if (method == InferenceMethod::automatic) {
    exact = admissible_state_count(graph, clamp) <= static_cast<double>(exact_limit);
  }
  if (exact) {
    auto r = exact_enumerate(graph, weights, clamp, std::max<std::size_t>(exact_limit, kDefaultStateLimit));
    return {r.log_partition, std::move(r.edge_marginals), true};
  }
  auto r = sum_product(graph, weights, cfg, clamp, warm);
  return {r.log_partition, std::move(r.edge_marginals), r.converged};
}

struct Evaluation {
  double log_likelihood = 0.0;
  // per kind: sum over edges of kernel * (clamped - free) joint, and the same without kernel
  std::array<Eigen::MatrixXd, kEdgeKindCount> weighted;
  std::array<Eigen::MatrixXd, kEdgeKindCount> unweighted;
  int nonconverged = 0;
};

// Free and clamped messages of one example, reused across objective evaluations.
using WarmStart = std::array<MessageState, 2>;

Evaluation evaluate(const TrainingExample& ex, const WeightSet& weights, const BPConfig& cfg, InferenceMethod method,
                    std::size_t exact_limit, WarmStart* warm = nullptr) {
  const int L = ex.graph.label_count();
  const PartitionStats free = partition(ex.graph, weights, cfg, method, exact_limit, {}, warm ? &(*warm)[0] : nullptr);
  const PartitionStats clamped =
      partition(ex.graph, weights, cfg, method, exact_limit, ex.observed, warm ? &(*warm)[1] : nullptr);
  Evaluation out;
  out.log_likelihood = clamped.log_partition - free.log_partition;
  out.nonconverged = (free.converged ? 0 : 1) + (clamped.converged ? 0 : 1);
  for (auto& m : out.weighted) m = Eigen::MatrixXd::Zero(L, L);
  for (auto& m : out.unweighted) m = Eigen::MatrixXd::Zero(L, L);
  for (int e = 0; e < ex.graph.edge_count(); ++e) {
    const Edge& edge = ex.graph.edge(e);
    const Eigen::MatrixXd diff = clamped.edge_marginals[static_cast<std::size_t>(e)] -
                                 free.edge_marginals[static_cast<std::size_t>(e)];
    out.weighted[static_cast<std::size_t>(to_index(edge.kind))] += edge.kernel * diff;
    out.unweighted[static_cast<std::size_t>(to_index(edge.kind))] += diff;
  }
  return out;
}

// d logL / d theta for the tied parameters, without regularization.
Eigen::VectorXd data_gradient(const Evaluation& ev, const ParameterLayout& layout) {
  Eigen::VectorXd g(layout.size());
  for (int p = 0; p < layout.size(); ++p) {
    const auto& entry = layout.entries()[static_cast<std::size_t>(p)];
    const auto& m = (entry.bias ? ev.unweighted : ev.weighted)[static_cast<std::size_t>(to_index(entry.kind))];
    double v = m(entry.a, entry.b);
    if (is_symmetric(entry.kind)) v += m(entry.b, entry.a);
    g(p) = -v;
  }
  return g;
}

void check_label_space(const TrainingExample& ex, const WeightSet& weights) {
  require(weights.label_count() == ex.graph.label_count(), Errc::label_space_mismatch,
          "weight set label count differs from example graph");
}

}  // namespace

TrainingExample TrainingExample::make(FusionGraph graph, const std::map<NodeRef, int>& observed) {
  Labeling dense = graph.labeling_from(observed);
  return make(std::move(graph), std::move(dense));
}

TrainingExample TrainingExample::make(FusionGraph graph, Labeling observed) {
  require(static_cast<int>(observed.size()) == graph.node_count(), Errc::incomplete_labeling,
          "observation size differs from node count");
  for (int i = 0; i < graph.node_count(); ++i) {
    const int l = observed[static_cast<std::size_t>(i)];
    if (graph.is_hidden(i)) {
      require(l < 0, Errc::invalid_argument, "hidden nodes carry no observation");
    } else {
      require(l >= 0, Errc::incomplete_labeling, "observation misses a non-hidden node");
      require(l < graph.label_count() && graph.payload(i).admissible(l), Errc::inadmissible_label,
              "observed label is inadmissible");
    }
  }
  return TrainingExample{std::move(graph), std::move(observed)};
}

void TrainConfig::validate() const {
  require(l2_lambda >= 0.0, Errc::invalid_argument, "l2_lambda must be nonnegative");
  require(max_outer_iterations > 0, Errc::invalid_argument, "max_outer_iterations must be positive");
  require(gradient_tolerance > 0.0, Errc::invalid_argument, "gradient_tolerance must be positive");
  require(threads >= 1, Errc::invalid_argument, "threads must be positive");
}

ParameterLayout::ParameterLayout(int label_count) : labels_(label_count) {
  for (bool bias : {false, true}) {
    for (auto kind : kAllEdgeKinds) {
      for (int a = 0; a < label_count; ++a) {
        for (int b = 0; b < label_count; ++b) {
          if (a == b || (is_symmetric(kind) && b < a)) continue;
          entries_.push_back({kind, bias, a, b});
        }
      }
    }
  }
}

Eigen::VectorXd ParameterLayout::flatten(const WeightSet& weights) const {
  require(weights.label_count() == labels_, Errc::label_space_mismatch, "weight set label count differs from layout");
  Eigen::VectorXd v(size());
  for (int p = 0; p < size(); ++p) {
    const auto& e = entries_[static_cast<std::size_t>(p)];
    v(p) = (e.bias ? weights.biases(e.kind) : weights.weights(e.kind))(e.a, e.b);
  }
  return v;
}

WeightSet ParameterLayout::unflatten(const Eigen::VectorXd& params, double l2_lambda) const {
  WeightSet w(labels_);
  w.l2_lambda = l2_lambda;
  for (int p = 0; p < size(); ++p) {
    const auto& e = entries_[static_cast<std::size_t>(p)];
    if (e.bias) {
      w.set_bias(e.kind, e.a, e.b, params(p));
    } else {
      w.set_weight(e.kind, e.a, e.b, params(p));
    }
  }
  return w;
}

Eigen::VectorXd ParameterLayout::regularization_mask() const {
  Eigen::VectorXd m(size());
  for (int p = 0; p < size(); ++p) m(p) = entries_[static_cast<std::size_t>(p)].bias ? 0.0 : 1.0;
  return m;
}

double log_likelihood(const TrainingExample& example, const WeightSet& weights, const BPConfig& cfg,
                      InferenceMethod method, std::size_t exact_limit) {
  check_label_space(example, weights);
  const PartitionStats free = partition(example.graph, weights, cfg, method, exact_limit, {});
  const PartitionStats clamped = partition(example.graph, weights, cfg, method, exact_limit, example.observed);
  return clamped.log_partition - free.log_partition;
}

WeightSet gradient(const TrainingExample& example, const WeightSet& weights, const BPConfig& cfg,
                   InferenceMethod method, bool tie_symmetric, std::size_t exact_limit) {
  check_label_space(example, weights);
  const Evaluation ev = evaluate(example, weights, cfg, method, exact_limit);
  const int L = weights.label_count();
  WeightSet g(L);
  g.l2_lambda = weights.l2_lambda;
  for (auto kind : kAllEdgeKinds) {
    const auto k = static_cast<std::size_t>(to_index(kind));
    for (int a = 0; a < L; ++a) {
      for (int b = 0; b < L; ++b) {
        if (a == b) continue;
        double gw = -ev.weighted[k](a, b);
        double gb = -ev.unweighted[k](a, b);
        if (tie_symmetric && is_symmetric(kind)) {
          gw -= ev.weighted[k](b, a);
          gb -= ev.unweighted[k](b, a);
        }
        g.weights(kind)(a, b) = gw - weights.l2_lambda * weights.weights(kind)(a, b);
        g.biases(kind)(a, b) = gb;
      }
    }
  }
  return g;
}

FitResult fit(const std::vector<TrainingExample>& dataset, const TrainConfig& cfg, const BPConfig& bpcfg,
              const WeightSet& init) {
  cfg.validate();
  bpcfg.validate();
  require(!dataset.empty(), Errc::invalid_argument, "training dataset is empty");
  for (const auto& ex : dataset) check_label_space(ex, init);

  const ParameterLayout layout(init.label_count());
  const Eigen::VectorXd reg = layout.regularization_mask();
  WeightSet start = init;
  start.enforce_structure();
  int nonconverged = 0;
  // messages at the current iterate seed every evaluation; trial points
  // that are rejected leave them untouched
  std::vector<WarmStart> base(dataset.size()), last(dataset.size());

  // negative regularized log-likelihood
  Objective objective = [&](const Eigen::VectorXd& theta, Eigen::VectorXd& grad) {
    const WeightSet w = layout.unflatten(theta);
    std::vector<Evaluation> evals(dataset.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next++; i < dataset.size(); i = next++) {
        last[i] = base[i];
        evals[i] = evaluate(dataset[i], w, bpcfg, cfg.method, cfg.exact_limit, &last[i]);
      }
    };
    if (cfg.threads <= 1) {
      worker();
    } else {
      std::vector<std::jthread> pool;
      for (int t = 0; t < cfg.threads; ++t) pool.emplace_back(worker);
    }
    double value = 0.0;
    grad = Eigen::VectorXd::Zero(layout.size());
    int failed = 0;
    for (std::size_t i = 0; i < evals.size(); ++i) {
      require(std::isfinite(evals[i].log_likelihood), Errc::non_finite_objective,
              "non-finite log-likelihood for training example " + std::to_string(i));
      value += evals[i].log_likelihood;
      grad += data_gradient(evals[i], layout);
      failed += evals[i].nonconverged;
    }
    nonconverged += failed;
    value -= 0.5 * cfg.l2_lambda * (reg.array() * theta.array().square()).sum();
    grad -= cfg.l2_lambda * (reg.array() * theta.array()).matrix();
    grad = -grad;
    spdlog::debug("objective {:.6g} |grad| {:.3g} nonconverged {}", -value, grad.norm(), failed);
    // the Bethe estimate away from a fixed point is meaningless; the line
    // search backs off instead
    if (failed > 0 && cfg.step_rule == StepRule::line_search_quasi_newton && theta.norm() > 0.0)
      return std::numeric_limits<double>::infinity();
    return -value;
  };

  MinimizeOptions opt;
  opt.max_iterations = cfg.max_outer_iterations;
  opt.gradient_tolerance = cfg.gradient_tolerance;
  opt.fixed_step = cfg.fixed_step;
  opt.on_accept = [&] { base.swap(last); };
  const MinimizeResult m = cfg.step_rule == StepRule::line_search_quasi_newton
                               ? minimize_lbfgs(objective, layout.flatten(start), opt)
                               : minimize_gradient_descent(objective, layout.flatten(start), opt);

  FitResult r;
  r.weights = layout.unflatten(m.x, cfg.l2_lambda);
  r.objective = -m.value;
  r.gradient_norm = m.gradient_norm;
  r.iterations = m.iterations;
  r.converged = m.converged;
  r.nonconverged_inference = nonconverged;
  return r;
}

double finite_diff_check(const TrainingExample& example, const WeightSet& weights, double step, const BPConfig& cfg,
                         InferenceMethod method) {
  require(step > 0.0, Errc::invalid_argument, "finite-difference step must be positive");
  check_label_space(example, weights);
  const ParameterLayout layout(weights.label_count());
  const Eigen::VectorXd reg = layout.regularization_mask();
  const double lambda = weights.l2_lambda;
  const std::size_t limit = kDefaultStateLimit;

  const Eigen::VectorXd theta = layout.flatten(weights);
  const Evaluation ev = evaluate(example, layout.unflatten(theta, lambda), cfg, method, limit);
  const Eigen::VectorXd analytic = data_gradient(ev, layout) - lambda * (reg.array() * theta.array()).matrix();

  auto objective = [&](const Eigen::VectorXd& t) {
    const double penalty = 0.5 * lambda * (reg.array() * t.array().square()).sum();
    return log_likelihood(example, layout.unflatten(t, lambda), cfg, method, limit) - penalty;
  };
  double worst = 0.0;
  for (int p = 0; p < layout.size(); ++p) {
    Eigen::VectorXd up = theta, down = theta;
    up(p) += step;
    down(p) -= step;
    const double numeric = (objective(up) - objective(down)) / (2.0 * step);
    worst = std::max(worst, std::abs(analytic(p) - numeric) / std::max(std::abs(analytic(p)), 1e-8));
  }
  return worst;
}

}  // namespace fusioncrf
