#include "fusioncrf/optimize.hpp"

#include <cmath>
#include <deque>
#include <limits>

#include "fusioncrf/error.hpp"

namespace fusioncrf {

namespace {

double inf_norm(const Eigen::VectorXd& g) { return g.size() == 0 ? 0.0 : g.cwiseAbs().maxCoeff(); }

double evaluate(const Objective& f, const Eigen::VectorXd& x, Eigen::VectorXd& g) {
  g.resize(x.size());
  const double v = f(x, g);
  require(std::isfinite(v) && g.allFinite(), Errc::non_finite_objective, "objective is not finite");
  return v;
}

// +infinity marks a point the objective refuses; anything else must be finite.
double evaluate_trial(const Objective& f, const Eigen::VectorXd& x, Eigen::VectorXd& g) {
  g.resize(x.size());
  const double v = f(x, g);
  if (v == std::numeric_limits<double>::infinity()) return v;
  require(std::isfinite(v) && g.allFinite(), Errc::non_finite_objective, "objective is not finite");
  return v;
}

}  // namespace

MinimizeResult minimize_lbfgs(const Objective& f, Eigen::VectorXd x0, const MinimizeOptions& opt) {
  MinimizeResult r;
  r.x = std::move(x0);
  Eigen::VectorXd g;
  r.value = evaluate(f, r.x, g);
  if (opt.on_accept) opt.on_accept();
  r.gradient_norm = inf_norm(g);

  std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> memory;  // (s, y)
  int stalled = 0;
  for (r.iterations = 0; r.iterations < opt.max_iterations; ++r.iterations) {
    if (r.gradient_norm < opt.gradient_tolerance) {
      r.converged = true;
      return r;
    }
    // two-loop recursion
    Eigen::VectorXd q = g;
    std::vector<double> alpha(memory.size());
    for (std::size_t k = memory.size(); k-- > 0;) {
      const auto& [s, y] = memory[k];
      alpha[k] = s.dot(q) / y.dot(s);
      q -= alpha[k] * y;
    }
    if (!memory.empty()) {
      const auto& [s, y] = memory.back();
      q *= s.dot(y) / y.squaredNorm();
    } else {
      q /= std::max(1.0, g.norm());
    }
    for (std::size_t k = 0; k < memory.size(); ++k) {
      const auto& [s, y] = memory[k];
      const double beta = y.dot(q) / y.dot(s);
      q += (alpha[k] - beta) * s;
    }
    Eigen::VectorXd dir = -q;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      memory.clear();
      dir = -g / std::max(1.0, g.norm());
      slope = g.dot(dir);
    }

    double step = 1.0;
    Eigen::VectorXd x_new, g_new;
    double v_new = 0.0;
    bool accepted = false;
    for (int ls = 0; ls < 50; ++ls) {
      x_new = r.x + step * dir;
      v_new = evaluate_trial(f, x_new, g_new);
      if (v_new <= r.value + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    if (opt.on_accept) opt.on_accept();
    // no progress possible at this precision
    stalled = v_new < r.value ? 0 : stalled + 1;
    if (stalled >= 3) break;

    Eigen::VectorXd s = x_new - r.x;
    Eigen::VectorXd y = g_new - g;
    if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
      memory.emplace_back(std::move(s), std::move(y));
      if (static_cast<int>(memory.size()) > opt.history) memory.pop_front();
    }
    r.x = std::move(x_new);
    g = std::move(g_new);
    r.value = v_new;
    r.gradient_norm = inf_norm(g);
  }
  r.converged = r.gradient_norm < opt.gradient_tolerance;
  return r;
}

MinimizeResult minimize_gradient_descent(const Objective& f, Eigen::VectorXd x0, const MinimizeOptions& opt) {
  MinimizeResult r;
  r.x = std::move(x0);
  Eigen::VectorXd g;
  r.value = evaluate(f, r.x, g);
  if (opt.on_accept) opt.on_accept();
  r.gradient_norm = inf_norm(g);
  for (r.iterations = 0; r.iterations < opt.max_iterations; ++r.iterations) {
    if (r.gradient_norm < opt.gradient_tolerance) {
      r.converged = true;
      return r;
    }
    r.x -= opt.fixed_step * g;
    r.value = evaluate(f, r.x, g);
    if (opt.on_accept) opt.on_accept();
    r.gradient_norm = inf_norm(g);
  }
  r.converged = r.gradient_norm < opt.gradient_tolerance;
  return r;
}

}  // namespace fusioncrf
