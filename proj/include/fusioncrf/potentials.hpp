#pragma once

#include <Eigen/Core>
#include <cmath>
#include <map>

#include "fusioncrf/error.hpp"
#include "fusioncrf/graph.hpp"

namespace fusioncrf {

/// Kernel widths and the unary clamp. Defaults are the published settings.
struct KernelParams {
  double sigma_2d = 0.5;
  double sigma_3d = 0.5;
  double sigma_nav = 1.0;
  double sigma_time = 0.35355339059327373;  // 1/sqrt(8)
  double prob_floor = 1e-9;

  void validate() const;
};

/// -ln(max(p, floor)).
template <typename Scalar>
Scalar unary_cost(Scalar p, Scalar prob_floor = Scalar(1e-9)) {
  require(p >= Scalar(0) && p <= Scalar(1), Errc::invalid_argument, "probability outside [0, 1]");
  using std::log;
  using std::max;
  return -log(max(p, prob_floor));
}

/// exp(-|rgb_i - rgb_j|^2 / (2 sigma^2)) on [0,1]-scaled RGB.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar rgb_kernel(const Eigen::MatrixBase<DerivedA>& rgb_i, const Eigen::MatrixBase<DerivedB>& rgb_j,
                                     typename DerivedA::Scalar sigma_2d) {
  using Scalar = typename DerivedA::Scalar;
  EIGEN_STATIC_ASSERT_VECTOR_SPECIFIC_SIZE(DerivedA, 3)
  EIGEN_STATIC_ASSERT_VECTOR_SPECIFIC_SIZE(DerivedB, 3)
  require((rgb_i.array() >= Scalar(0)).all() && (rgb_i.array() <= Scalar(1)).all() &&
              (rgb_j.array() >= Scalar(0)).all() && (rgb_j.array() <= Scalar(1)).all(),
          Errc::invalid_argument, "rgb components must lie in [0, 1]");
  using std::exp;
  return exp(-(rgb_i - rgb_j).squaredNorm() / (Scalar(2) * sigma_2d * sigma_2d));
}

/// exp(-|theta_i - theta_j|^2 / (2 sigma^2)); angles between surface normal and vertical.
template <typename Scalar>
Scalar normal_kernel(Scalar theta_i, Scalar theta_j, Scalar sigma_3d) {
  constexpr Scalar kHalfPi = Scalar(1.57079632679489661923);
  require(theta_i >= Scalar(0) && theta_i <= kHalfPi + Scalar(1e-12) && theta_j >= Scalar(0) &&
              theta_j <= kHalfPi + Scalar(1e-12),
          Errc::invalid_argument, "normal angle outside [0, pi/2]");
  using std::exp;
  const Scalar d = theta_i - theta_j;
  return exp(-d * d / (Scalar(2) * sigma_3d * sigma_3d));
}

/// Localization-trust factor times spatial proximity factor.
template <typename Scalar>
Scalar temporal_kernel(Scalar mean_nav_var, Scalar dist_m, Scalar sigma_nav, Scalar sigma_time) {
  require(mean_nav_var >= Scalar(0) && dist_m >= Scalar(0), Errc::invalid_argument,
          "temporal kernel inputs must be nonnegative");
  using std::exp;
  return exp(-mean_nav_var / (Scalar(2) * sigma_nav * sigma_nav)) *
         exp(-dist_m * dist_m / (Scalar(2) * sigma_time * sigma_time));
}

/// Cost of an edge under labels (label_a, label_b), which are given in the
/// edge's stored endpoint order (2D first for cross-modal edges). Rejects
/// labels inadmissible at either endpoint.
double pairwise_cost(const FusionGraph& graph, int edge, int label_a, int label_b, const WeightSet& weights);

/// Sum of unary costs and all pairwise costs. Hidden nodes may be left
/// unassigned (-1); their unaries and incident edges are then skipped.
double total_energy(const FusionGraph& graph, const Labeling& labeling, const WeightSet& weights);
double total_energy(const FusionGraph& graph, const std::map<NodeRef, int>& labeling, const WeightSet& weights);

}  // namespace fusioncrf
