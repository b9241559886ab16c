#include "fusioncrf/potentials.hpp"

namespace fusioncrf {

void KernelParams::validate() const {
  require(sigma_2d > 0 && sigma_3d > 0 && sigma_nav > 0 && sigma_time > 0, Errc::invalid_argument,
          "kernel widths must be positive");
  require(prob_floor > 0 && prob_floor <= 1e-3, Errc::invalid_argument, "prob_floor must lie in (0, 1e-3]");
}

double pairwise_cost(const FusionGraph& graph, int edge, int label_a, int label_b, const WeightSet& weights) {
  const auto [a, b] = graph.endpoints(edge);
  const int n = graph.label_count();
  require(label_a >= 0 && label_a < n && label_b >= 0 && label_b < n && graph.payload(a).admissible(label_a) &&
              graph.payload(b).admissible(label_b),
          Errc::inadmissible_label, "inadmissible label on edge endpoint");
  const Edge& e = graph.edge(edge);
  return weights.cost(e.kind, label_a, label_b, e.kernel);
}

double total_energy(const FusionGraph& graph, const Labeling& labeling, const WeightSet& weights) {
  require(static_cast<int>(labeling.size()) == graph.node_count(), Errc::incomplete_labeling,
          "labeling size differs from node count");
  require(weights.label_count() == graph.label_count(), Errc::label_space_mismatch,
          "weight set label count differs from graph");
  double energy = 0.0;
  for (int i = 0; i < graph.node_count(); ++i) {
    const int l = labeling[static_cast<std::size_t>(i)];
    if (l < 0) {
      require(graph.is_hidden(i), Errc::incomplete_labeling, "labeling misses a non-hidden node");
      continue;
    }
    require(l < graph.label_count() && graph.payload(i).admissible(l), Errc::inadmissible_label,
            "inadmissible assignment");
    energy -= graph.payload(i).unary_log_prob(l);
  }
  for (int e = 0; e < graph.edge_count(); ++e) {
    const auto [a, b] = graph.endpoints(e);
    const int la = labeling[static_cast<std::size_t>(a)];
    const int lb = labeling[static_cast<std::size_t>(b)];
    if (la < 0 || lb < 0) continue;
    energy += weights.cost(graph.edge(e).kind, la, lb, graph.edge(e).kernel);
  }
  return energy;
}

double total_energy(const FusionGraph& graph, const std::map<NodeRef, int>& labeling, const WeightSet& weights) {
  return total_energy(graph, graph.labeling_from(labeling), weights);
}

}  // namespace fusioncrf
