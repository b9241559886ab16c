#include "fusioncrf/inference.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <thread>

#include "fusioncrf/error.hpp"

namespace fusioncrf {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

enum class Semiring { sum, max };

template <typename Derived>
double log_sum_exp(const Eigen::DenseBase<Derived>& v) {
  const double m = v.maxCoeff();
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      if (v(i, j) != kNegInf) s += std::exp(v(i, j) - m);
    }
  }
  return m + std::log(s);
}

// Index of the largest entry; entries within a relative 1e-12 of the maximum
// count as tied and the lowest index wins.
int argmax_lowest(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double m = v.maxCoeff();
  const double slack = 1e-12 * std::max(1.0, std::abs(m));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (v(i) != kNegInf && v(i) >= m - slack) return static_cast<int>(i);
  }
  return 0;
}

Labeling dense_clamp(const FusionGraph& graph, const Labeling& clamp) {
  if (clamp.empty()) return Labeling(static_cast<std::size_t>(graph.node_count()), -1);
  require(static_cast<int>(clamp.size()) == graph.node_count(), Errc::unknown_node, "clamp size differs from node count");
  for (int i = 0; i < graph.node_count(); ++i) {
    const int l = clamp[static_cast<std::size_t>(i)];
    if (l < 0) continue;
    require(l < graph.label_count() && graph.payload(i).admissible(l), Errc::inadmissible_label,
            "clamped label is inadmissible");
  }
  return clamp;
}

// Log-domain factors of one graph under one weight set.
struct LogModel {
  const FusionGraph& graph;
  std::vector<Eigen::VectorXd> phi;
  std::vector<Eigen::MatrixXd> psi;
  // exp(psi) shifted per destination label, for messages into b (column max)
  // and into a (row max); the shifts are kept to undo them.
  std::vector<Eigen::MatrixXd> into_b, into_a;
  std::vector<Eigen::VectorXd> shift_b, shift_a;

  LogModel(const FusionGraph& g, const WeightSet& weights, const Labeling& clamp) : graph(g) {
    require(g.node_count() > 0, Errc::empty_graph, "inference on an empty graph");
    require(weights.label_count() == g.label_count(), Errc::label_space_mismatch,
            "weight set label count differs from graph");
    const int L = g.label_count();
    phi.reserve(static_cast<std::size_t>(g.node_count()));
    for (int i = 0; i < g.node_count(); ++i) {
      Eigen::VectorXd p = g.payload(i).unary_log_prob;
      const int c = clamp[static_cast<std::size_t>(i)];
      if (c >= 0) {
        for (int l = 0; l < L; ++l) {
          if (l != c) p(l) = kNegInf;
        }
      }
      phi.push_back(std::move(p));
    }
    psi.reserve(static_cast<std::size_t>(g.edge_count()));
    for (int e = 0; e < g.edge_count(); ++e) {
      const Edge& edge = g.edge(e);
      const auto [a, b] = g.endpoints(e);
      const Eigen::VectorXd& pa = phi[static_cast<std::size_t>(a)];
      const Eigen::VectorXd& pb = phi[static_cast<std::size_t>(b)];
      // Pairs with an impossible endpoint label carry probability zero anyway;
      // pinning them to 0 keeps the weights they touch out of the arithmetic.
      Eigen::MatrixXd m(L, L);
      for (int xb = 0; xb < L; ++xb) {
        for (int xa = 0; xa < L; ++xa) {
          const bool possible = pa(xa) > kNegInf && pb(xb) > kNegInf;
          m(xa, xb) = possible ? -weights.cost(edge.kind, xa, xb, edge.kernel) : 0.0;
        }
      }
      const Eigen::VectorXd cb = m.colwise().maxCoeff().transpose();
      const Eigen::VectorXd ca = m.rowwise().maxCoeff();
      into_b.push_back((m.rowwise() - cb.transpose()).array().exp().matrix());
      into_a.push_back((m.colwise() - ca).array().exp().matrix());
      shift_b.push_back(cb);
      shift_a.push_back(ca);
      psi.push_back(std::move(m));
    }
  }
};

class MessagePasser {
 public:
  using Message = Eigen::Map<const Eigen::VectorXd>;

  MessagePasser(const LogModel& model, Semiring semiring)
      : model_(model), g_(model.graph), semiring_(semiring), L_(g_.label_count()) {
    const double init = semiring_ == Semiring::sum ? -std::log(static_cast<double>(L_)) : 0.0;
    msgs_.assign(2 * static_cast<std::size_t>(g_.edge_count()) * static_cast<std::size_t>(L_), init);
  }

  const std::vector<double>& messages() const noexcept { return msgs_; }
  void load(const std::vector<double>& messages) {
    if (messages.size() == msgs_.size()) msgs_ = messages;
  }

  // Message on edge e flowing into `node`.
  Message incoming(int e, int node) const { return Message(msgs_.data() + offset(e, node), L_); }

  Eigen::VectorXd belief(int node) const {
    Eigen::VectorXd b(L_);
    belief_into(node, msgs_, b.data());
    return b;
  }

  std::pair<bool, int> run(const BPConfig& cfg) {
    for (int it = 1; it <= cfg.max_iterations; ++it) {
      const double change = cfg.schedule == Schedule::sequential ? sweep_sequential(cfg) : sweep_parallel(cfg);
      if (change < cfg.tolerance) return {true, it};
    }
    return {false, cfg.max_iterations};
  }

 private:
  // Per-node working buffers.
  struct Scratch {
    std::vector<double> bel, cavity, v, out, terms;
    explicit Scratch(int L)
        : bel(static_cast<std::size_t>(L)), cavity(bel), v(bel), out(bel), terms(bel) {}
  };

  std::size_t offset(int e, int into) const {
    // slot 2e carries a->b (into b), 2e+1 carries b->a (into a)
    const std::size_t slot = 2 * static_cast<std::size_t>(e) + (g_.endpoints(e).b == into ? 0 : 1);
    return slot * static_cast<std::size_t>(L_);
  }

  void belief_into(int node, const std::vector<double>& msgs, double* b) const {
    const Eigen::VectorXd& phi = model_.phi[static_cast<std::size_t>(node)];
    for (int l = 0; l < L_; ++l) b[l] = phi(l);
    for (int e : g_.incident(node)) {
      const double* m = msgs.data() + offset(e, node);
      for (int l = 0; l < L_; ++l) b[l] += m[l];
    }
  }

  double lse(const double* x) const {
    double m = kNegInf;
    for (int l = 0; l < L_; ++l) m = std::max(m, x[l]);
    if (m == kNegInf) return kNegInf;
    double s = 0.0;
    for (int l = 0; l < L_; ++l) {
      if (x[l] != kNegInf) s += std::exp(x[l] - m);
    }
    return m + std::log(s);
  }

  void normalize(double* x) const {
    double z;
    if (semiring_ == Semiring::sum) {
      z = lse(x);
    } else {
      z = kNegInf;
      for (int l = 0; l < L_; ++l) z = std::max(z, x[l]);
    }
    for (int l = 0; l < L_; ++l) x[l] -= z;
  }

  // Fresh message from src across e into s.out, normalized.
  void compute(int e, int src, const std::vector<double>& msgs, Scratch& s) const {
    const int a = g_.endpoints(e).a;
    const double* back = msgs.data() + offset(e, src);
    for (int l = 0; l < L_; ++l) s.cavity[static_cast<std::size_t>(l)] = s.bel[static_cast<std::size_t>(l)] - back[l];
    const auto ei = static_cast<std::size_t>(e);
    const Eigen::MatrixXd& psi = model_.psi[ei];
    const double* cav = s.cavity.data();
    const auto log_domain = [&](int xd) {
      double* t = s.terms.data();
      for (int xs = 0; xs < L_; ++xs) t[xs] = cav[xs] == kNegInf ? kNegInf : cav[xs] + (src == a ? psi(xs, xd) : psi(xd, xs));
      if (semiring_ == Semiring::sum) return lse(t);
      double m = kNegInf;
      for (int xs = 0; xs < L_; ++xs) m = std::max(m, t[xs]);
      return m;
    };
    double* out = s.out.data();
    if (semiring_ == Semiring::max) {
      for (int xd = 0; xd < L_; ++xd) out[xd] = log_domain(xd);
    } else {
      double cmax = kNegInf;
      for (int xs = 0; xs < L_; ++xs) cmax = std::max(cmax, cav[xs]);
      double* v = s.v.data();
      for (int xs = 0; xs < L_; ++xs) v[xs] = cav[xs] == kNegInf ? 0.0 : std::exp(cav[xs] - cmax);
      const Eigen::MatrixXd& ex = src == a ? model_.into_b[ei] : model_.into_a[ei];
      const Eigen::VectorXd& shift = src == a ? model_.shift_b[ei] : model_.shift_a[ei];
      for (int xd = 0; xd < L_; ++xd) {
        double sum = 0.0;
        if (src == a) {
          for (int xs = 0; xs < L_; ++xs) sum += ex(xs, xd) * v[xs];
        } else {
          for (int xs = 0; xs < L_; ++xs) sum += ex(xd, xs) * v[xs];
        }
        // an underflowed sum is recomputed in the log domain
        out[xd] = sum > 1e-250 ? std::log(sum) + shift(xd) + cmax : log_domain(xd);
      }
    }
    normalize(out);
  }

  double blend(double* target, double* fresh, double damping) const {
    if (damping > 0.0) {
      for (int l = 0; l < L_; ++l) fresh[l] = (1.0 - damping) * fresh[l] + damping * target[l];
      normalize(fresh);
    }
    double change = 0.0;
    for (int l = 0; l < L_; ++l) {
      const double d = fresh[l] - target[l];
      // equal infinities count as no change
      if (!(fresh[l] == target[l])) change = std::max(change, std::abs(d));
      target[l] = fresh[l];
    }
    return change;
  }

  double sweep_sequential(const BPConfig& cfg) {
    double change = 0.0;
    Scratch s(L_);
    for (int i = 0; i < g_.node_count(); ++i) {
      belief_into(i, msgs_, s.bel.data());
      for (int e : g_.incident(i)) {
        const auto [a, b] = g_.endpoints(e);
        const int dst = a == i ? b : a;
        compute(e, i, msgs_, s);
        change = std::max(change, blend(msgs_.data() + offset(e, dst), s.out.data(), cfg.damping));
      }
    }
    return change;
  }

  double sweep_parallel(const BPConfig& cfg) {
    std::vector<double> next = msgs_;
    const int n = g_.node_count();
    std::vector<double> changes(static_cast<std::size_t>(n), 0.0);
    auto work = [&](int begin, int end) {
      Scratch s(L_);
      for (int i = begin; i < end; ++i) {
        belief_into(i, msgs_, s.bel.data());
        double c = 0.0;
        for (int e : g_.incident(i)) {
          const auto [a, b] = g_.endpoints(e);
          const int dst = a == i ? b : a;
          compute(e, i, msgs_, s);
          c = std::max(c, blend(next.data() + offset(e, dst), s.out.data(), cfg.damping));
        }
        changes[static_cast<std::size_t>(i)] = c;
      }
    };
    const int threads = std::clamp(cfg.threads, 1, std::max(1, n));
    if (threads == 1) {
      work(0, n);
    } else {
      std::vector<std::jthread> pool;
      const int chunk = (n + threads - 1) / threads;
      for (int t = 0; t < threads; ++t) pool.emplace_back(work, t * chunk, std::min(n, (t + 1) * chunk));
    }
    msgs_ = std::move(next);
    return changes.empty() ? 0.0 : *std::max_element(changes.begin(), changes.end());
  }

  const LogModel& model_;
  const FusionGraph& g_;
  Semiring semiring_;
  int L_;
  std::vector<double> msgs_;  // 2 * edges * L, see offset()
};

}  // namespace

void BPConfig::validate() const {
  require(max_iterations > 0, Errc::invalid_argument, "max_iterations must be positive");
  require(tolerance > 0.0, Errc::invalid_argument, "tolerance must be positive");
  require(damping >= 0.0 && damping < 1.0, Errc::invalid_argument, "damping must lie in [0, 1)");
  require(threads >= 1, Errc::invalid_argument, "threads must be positive");
}

InferenceResult sum_product(const FusionGraph& graph, const WeightSet& weights, const BPConfig& cfg,
                            const Labeling& clamp) {
  return sum_product(graph, weights, cfg, clamp, nullptr);
}

InferenceResult sum_product(const FusionGraph& graph, const WeightSet& weights, const BPConfig& cfg,
                            const Labeling& clamp, MessageState* warm) {
  cfg.validate();
  const Labeling c = dense_clamp(graph, clamp);
  const LogModel model(graph, weights, c);
  MessagePasser bp(model, Semiring::sum);
  if (warm) bp.load(warm->messages);
  const auto [converged, iterations] = bp.run(cfg);
  if (warm) warm->messages = bp.messages();

  const int n = graph.node_count();
  const int L = graph.label_count();
  InferenceResult r;
  r.converged = converged;
  r.iterations_used = iterations;

  std::vector<Eigen::VectorXd> log_beliefs(static_cast<std::size_t>(n));
  double free_energy = 0.0;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd lb = bp.belief(i);
    lb.array() -= log_sum_exp(lb);
    const Eigen::VectorXd& phi = model.phi[static_cast<std::size_t>(i)];
    const double degree = static_cast<double>(graph.incident(i).size());
    Eigen::VectorXd marg = Eigen::VectorXd::Zero(L);
    double node_term = 0.0;
    for (int l = 0; l < L; ++l) {
      if (lb(l) == kNegInf) continue;
      marg(l) = std::exp(lb(l));
      node_term += marg(l) * (lb(l) - phi(l));
    }
    free_energy -= (degree - 1.0) * node_term;
    r.node_marginals.push_back(std::move(marg));
    log_beliefs[static_cast<std::size_t>(i)] = std::move(lb);
  }

  for (int e = 0; e < graph.edge_count(); ++e) {
    const auto [a, b] = graph.endpoints(e);
    const Eigen::VectorXd cav_a = bp.belief(a) - bp.incoming(e, a);
    const Eigen::VectorXd cav_b = bp.belief(b) - bp.incoming(e, b);
    const Eigen::MatrixXd& psi = model.psi[static_cast<std::size_t>(e)];
    Eigen::MatrixXd lj(L, L);
    for (int xb = 0; xb < L; ++xb) {
      for (int xa = 0; xa < L; ++xa) {
        lj(xa, xb) = (cav_a(xa) == kNegInf || cav_b(xb) == kNegInf) ? kNegInf : cav_a(xa) + cav_b(xb) + psi(xa, xb);
      }
    }
    lj.array() -= log_sum_exp(lj);
    Eigen::MatrixXd joint = Eigen::MatrixXd::Zero(L, L);
    const Eigen::VectorXd& pa = model.phi[static_cast<std::size_t>(a)];
    const Eigen::VectorXd& pb = model.phi[static_cast<std::size_t>(b)];
    for (int xb = 0; xb < L; ++xb) {
      for (int xa = 0; xa < L; ++xa) {
        if (lj(xa, xb) == kNegInf) continue;
        joint(xa, xb) = std::exp(lj(xa, xb));
        free_energy += joint(xa, xb) * (lj(xa, xb) - psi(xa, xb) - pa(xa) - pb(xb));
      }
    }
    r.edge_marginals.push_back(std::move(joint));
  }
  r.log_partition = -free_energy;
  return r;
}

InferenceResult sum_product(const FusionGraph& graph, const WeightSet& weights, const BPConfig& cfg,
                            const std::map<NodeRef, int>& clamp) {
  return sum_product(graph, weights, cfg, clamp.empty() ? Labeling{} : graph.labeling_from(clamp));
}

Labeling max_product_decode(const FusionGraph& graph, const WeightSet& weights, const BPConfig& cfg) {
  cfg.validate();
  const Labeling free = dense_clamp(graph, {});
  const LogModel model(graph, weights, free);
  MessagePasser bp(model, Semiring::max);
  bp.run(cfg);

  const int n = graph.node_count();
  Labeling labels(static_cast<std::size_t>(n), -1);
  std::vector<bool> queued(static_cast<std::size_t>(n), false);
  for (int root = 0; root < n; ++root) {
    if (queued[static_cast<std::size_t>(root)]) continue;
    std::deque<int> frontier{root};
    queued[static_cast<std::size_t>(root)] = true;
    while (!frontier.empty()) {
      const int i = frontier.front();
      frontier.pop_front();
      Eigen::VectorXd score = model.phi[static_cast<std::size_t>(i)];
      for (int e : graph.incident(i)) {
        const auto [a, b] = graph.endpoints(e);
        const int other = a == i ? b : a;
        const int lo = labels[static_cast<std::size_t>(other)];
        if (lo >= 0) {
          const Eigen::MatrixXd& psi = model.psi[static_cast<std::size_t>(e)];
          score += (a == i) ? Eigen::VectorXd(psi.col(lo)) : Eigen::VectorXd(psi.row(lo).transpose());
        } else {
          score += bp.incoming(e, i);
          if (!queued[static_cast<std::size_t>(other)]) {
            queued[static_cast<std::size_t>(other)] = true;
            frontier.push_back(other);
          }
        }
      }
      labels[static_cast<std::size_t>(i)] = argmax_lowest(score);
    }
  }
  return labels;
}

Labeling marginal_argmax(const FusionGraph& graph, const InferenceResult& result) {
  Labeling out(static_cast<std::size_t>(graph.node_count()));
  for (int i = 0; i < graph.node_count(); ++i) {
    Eigen::VectorXd v = result.node_marginals[static_cast<std::size_t>(i)];
    for (int l = 0; l < graph.label_count(); ++l) {
      if (!graph.payload(i).admissible(l)) v(l) = kNegInf;
    }
    out[static_cast<std::size_t>(i)] = argmax_lowest(v);
  }
  return out;
}

double admissible_state_count(const FusionGraph& graph, const Labeling& clamp) {
  const Labeling c = dense_clamp(graph, clamp);
  double states = 1.0;
  for (int i = 0; i < graph.node_count(); ++i) {
    states *= c[static_cast<std::size_t>(i)] >= 0 ? 1.0 : static_cast<double>(graph.payload(i).admissible.count());
  }
  return states;
}

ExactResult exact_enumerate(const FusionGraph& graph, const WeightSet& weights, const Labeling& clamp,
                            std::size_t state_limit) {
  require(graph.node_count() > 0, Errc::empty_graph, "enumeration of an empty graph");
  require(weights.label_count() == graph.label_count(), Errc::label_space_mismatch,
          "weight set label count differs from graph");
  const Labeling c = dense_clamp(graph, clamp);
  const double states = admissible_state_count(graph, c);
  require(states <= static_cast<double>(state_limit), Errc::state_space_too_large,
          "labeling space exceeds the enumeration limit");

  const int n = graph.node_count();
  const int L = graph.label_count();
  std::vector<std::vector<int>> choices(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int ci = c[static_cast<std::size_t>(i)];
    for (int l = 0; l < L; ++l) {
      if (graph.payload(i).admissible(l) && (ci < 0 || ci == l)) choices[static_cast<std::size_t>(i)].push_back(l);
    }
  }
  // edges whose later endpoint is node k
  std::vector<std::vector<int>> closing(static_cast<std::size_t>(n));
  for (int e = 0; e < graph.edge_count(); ++e) {
    const auto [a, b] = graph.endpoints(e);
    closing[static_cast<std::size_t>(std::max(a, b))].push_back(e);
  }

  Labeling x(static_cast<std::size_t>(n), 0);
  std::vector<double> partial(static_cast<std::size_t>(n) + 1, 0.0);

  auto extend = [&](int k) {
    const int l = x[static_cast<std::size_t>(k)];
    double v = partial[static_cast<std::size_t>(k)] - graph.payload(k).unary_log_prob(l);
    for (int e : closing[static_cast<std::size_t>(k)]) {
      const auto [a, b] = graph.endpoints(e);
      v += weights.cost(graph.edge(e).kind, x[static_cast<std::size_t>(a)], x[static_cast<std::size_t>(b)],
                        graph.edge(e).kernel);
    }
    partial[static_cast<std::size_t>(k) + 1] = v;
  };

  // Depth-first over labelings in lexicographic order; `leaf` sees the full energy.
  auto enumerate = [&](auto&& leaf) {
    auto rec = [&](auto&& self, int k) -> void {
      if (k == n) {
        leaf(partial[static_cast<std::size_t>(n)]);
        return;
      }
      for (int l : choices[static_cast<std::size_t>(k)]) {
        x[static_cast<std::size_t>(k)] = l;
        extend(k);
        self(self, k + 1);
      }
    };
    rec(rec, 0);
  };

  ExactResult r;
  r.map_energy = std::numeric_limits<double>::infinity();
  enumerate([&](double energy) {
    if (energy < r.map_energy) {
      r.map_energy = energy;
      r.map_labeling = x;
    }
  });

  const double shift = r.map_energy;
  double z = 0.0;
  r.node_marginals.assign(static_cast<std::size_t>(n), Eigen::VectorXd::Zero(L));
  r.edge_marginals.assign(static_cast<std::size_t>(graph.edge_count()), Eigen::MatrixXd::Zero(L, L));
  enumerate([&](double energy) {
    const double w = std::exp(shift - energy);
    z += w;
    for (int i = 0; i < n; ++i) r.node_marginals[static_cast<std::size_t>(i)](x[static_cast<std::size_t>(i)]) += w;
    for (int e = 0; e < graph.edge_count(); ++e) {
      const auto [a, b] = graph.endpoints(e);
      r.edge_marginals[static_cast<std::size_t>(e)](x[static_cast<std::size_t>(a)], x[static_cast<std::size_t>(b)]) += w;
    }
  });
  for (auto& m : r.node_marginals) m /= z;
  for (auto& m : r.edge_marginals) m /= z;
  r.log_partition = std::log(z) - shift;
  return r;
}

}  // namespace fusioncrf
