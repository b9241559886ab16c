#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <map>
#include <vector>

#include "fusioncrf/graph.hpp"

namespace fusioncrf {

enum class Schedule { sequential, parallel };

struct BPConfig {
  int max_iterations = 200;
  double tolerance = 1e-6;  // max absolute change of a log-message entry
  double damping = 0.5;
  Schedule schedule = Schedule::sequential;
  int threads = 1;  // parallel schedule only

  void validate() const;
};

struct InferenceResult {
  std::vector<Eigen::VectorXd> node_marginals;
  /// Rows index the label of the edge's first endpoint, columns the second.
  std::vector<Eigen::MatrixXd> edge_marginals;
  double log_partition = 0.0;
  bool converged = false;
  int iterations_used = 0;
};

/// Loopy sum-product in the log domain. `clamp` (dense, -1 = free) pins
/// nodes to a label; the clamped node keeps its own unary value at that
/// label so clamped and free partition functions share one scale. The
/// log-partition is the Bethe estimate (exact on forests).
InferenceResult sum_product(const FusionGraph& graph, const WeightSet& weights, const BPConfig& cfg,
                            const Labeling& clamp = {});
InferenceResult sum_product(const FusionGraph& graph, const WeightSet& weights, const BPConfig& cfg,
                            const std::map<NodeRef, int>& clamp);

/// Messages kept between runs on one graph and clamp. A state of the wrong
/// size (an empty one included) is ignored; the final messages are stored back.
struct MessageState {
  std::vector<double> messages;
};

InferenceResult sum_product(const FusionGraph& graph, const WeightSet& weights, const BPConfig& cfg,
                            const Labeling& clamp, MessageState* warm);

/// Max-product messages followed by a breadth-first decode that conditions
/// each node on its already-decoded neighbours. Exact on forests. Labels
/// every node, hidden ones included; ties go to the lowest label index.
Labeling max_product_decode(const FusionGraph& graph, const WeightSet& weights, const BPConfig& cfg);

/// Per-node argmax of sum-product marginals (lowest index on ties).
Labeling marginal_argmax(const FusionGraph& graph, const InferenceResult& result);

struct ExactResult {
  std::vector<Eigen::VectorXd> node_marginals;
  std::vector<Eigen::MatrixXd> edge_marginals;
  double log_partition = 0.0;
  Labeling map_labeling;
  double map_energy = 0.0;
};

inline constexpr std::size_t kDefaultStateLimit = 10'000'000;

/// Number of admissible joint labelings (saturating), honouring `clamp`.
double admissible_state_count(const FusionGraph& graph, const Labeling& clamp = {});

/// Brute-force marginals, log-partition and MAP over every admissible
/// labeling. The MAP is the lexicographically first minimum-energy labeling.
ExactResult exact_enumerate(const FusionGraph& graph, const WeightSet& weights, const Labeling& clamp = {},
                            std::size_t state_limit = kDefaultStateLimit);

}  // namespace fusioncrf
