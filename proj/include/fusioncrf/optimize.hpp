#pragma once

#include <Eigen/Core>
#include <functional>

namespace fusioncrf {

/// Objective returning f(x) and writing its gradient. Line-search trials may
/// return +infinity to refuse a point.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& gradient)>;

struct MinimizeOptions {
  int max_iterations = 200;
  double gradient_tolerance = 1e-6;  // infinity norm
  int history = 10;
  double fixed_step = 0.1;  // gradient descent only
  /// Called whenever the most recently evaluated point becomes the iterate.
  std::function<void()> on_accept;
};

struct MinimizeResult {
  Eigen::VectorXd x;
  double value = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Limited-memory BFGS with a backtracking Armijo line search.
MinimizeResult minimize_lbfgs(const Objective& f, Eigen::VectorXd x0, const MinimizeOptions& opt = {});

/// Plain gradient descent with a fixed step.
MinimizeResult minimize_gradient_descent(const Objective& f, Eigen::VectorXd x0, const MinimizeOptions& opt = {});

}  // namespace fusioncrf
