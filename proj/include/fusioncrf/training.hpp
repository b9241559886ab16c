#pragma once

#include <Eigen/Core>
#include <map>
#include <vector>

#include "fusioncrf/graph.hpp"
#include "fusioncrf/inference.hpp"

namespace fusioncrf {

/// A graph plus ground truth for every non-hidden node. Hidden nodes are
/// summed over when evaluating the likelihood.
struct TrainingExample {
  FusionGraph graph;
  Labeling observed;  // dense; -1 exactly on hidden nodes

  static TrainingExample make(FusionGraph graph, const std::map<NodeRef, int>& observed);
  static TrainingExample make(FusionGraph graph, Labeling observed);
};

enum class InferenceMethod { automatic, exact, bethe };

enum class StepRule { fixed_step, line_search_quasi_newton };

struct TrainConfig {
  double l2_lambda = 1e-2;
  int max_outer_iterations = 100;
  double gradient_tolerance = 1e-4;
  StepRule step_rule = StepRule::line_search_quasi_newton;
  double fixed_step = 0.05;
  bool tie_symmetric = true;
  InferenceMethod method = InferenceMethod::automatic;
  /// `automatic` enumerates exactly when the free labeling space is at most this large.
  std::size_t exact_limit = 20'000;
  int threads = 1;

  void validate() const;
};

/// Free parameters of a WeightSet: every off-diagonal weight and bias entry,
/// with mirrored entries of symmetric kinds sharing one parameter.
class ParameterLayout {
 public:
  struct Entry {
    EdgeKind kind;
    bool bias;
    int a;
    int b;
  };

  explicit ParameterLayout(int label_count);

  int size() const noexcept { return static_cast<int>(entries_.size()); }
  const std::vector<Entry>& entries() const noexcept { return entries_; }

  Eigen::VectorXd flatten(const WeightSet& weights) const;
  WeightSet unflatten(const Eigen::VectorXd& params, double l2_lambda = 0.0) const;
  /// 1 for weight entries, 0 for biases.
  Eigen::VectorXd regularization_mask() const;

 private:
  int labels_;
  std::vector<Entry> entries_;
};

/// log p(observed | z) = logZ(observed nodes clamped) - logZ(free).
double log_likelihood(const TrainingExample& example, const WeightSet& weights, const BPConfig& cfg,
                      InferenceMethod method = InferenceMethod::automatic, std::size_t exact_limit = 20'000);

/// Gradient of the log-likelihood minus weights.l2_lambda * w (non-bias
/// entries only), shaped like a WeightSet. With `tie_symmetric`, a mirrored
/// pair of a symmetric kind holds the derivative with respect to the shared
/// parameter in both entries; otherwise each entry holds the derivative with
/// respect to its own orientation.
WeightSet gradient(const TrainingExample& example, const WeightSet& weights, const BPConfig& cfg,
                   InferenceMethod method = InferenceMethod::automatic, bool tie_symmetric = true,
                   std::size_t exact_limit = 20'000);

struct FitResult {
  WeightSet weights;
  double objective = 0.0;  // regularized log-likelihood summed over the dataset
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  int nonconverged_inference = 0;  // BP runs that hit max_iterations
};

/// Maximizes sum of log-likelihoods minus (l2_lambda/2)*|w|^2 over the tied
/// parameters. Rejects a non-finite objective with the offending example index.
FitResult fit(const std::vector<TrainingExample>& dataset, const TrainConfig& cfg, const BPConfig& bpcfg,
              const WeightSet& init);

/// Max over parameters of |analytic - central difference| / max(|analytic|, 1e-8),
/// where the differenced function is the log-likelihood minus the L2 term.
double finite_diff_check(const TrainingExample& example, const WeightSet& weights, double step, const BPConfig& cfg,
                         InferenceMethod method = InferenceMethod::automatic);

}  // namespace fusioncrf
