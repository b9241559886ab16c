#include "fusioncrf/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <tuple>

#include "fusioncrf/error.hpp"

namespace fusioncrf {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::string describe(const NodeRef& ref) {
  std::ostringstream os;
  os << "(frame " << ref.frame << ", " << (ref.modality == Modality::image2d ? "2d" : "3d") << ", " << ref.index
     << ")";
  return os.str();
}

void validate_payload(const LabelSet& labels, const NodeRef& ref, const NodePayload& p) {
  const int n = labels.count();
  const std::string who = "node " + describe(ref);
  require(p.unary_log_prob.size() == n && p.admissible.size() == n, Errc::invalid_payload,
          who + ": payload length differs from label count");
  require(p.admissible.any(), Errc::invalid_payload, who + ": no admissible label");
  double total = 0.0;
  for (int l = 0; l < n; ++l) {
    const double v = p.unary_log_prob(l);
    if (p.admissible(l)) {
      require(std::isfinite(v), Errc::invalid_payload, who + ": admissible label with non-finite log-probability");
      total += std::exp(v);
    } else {
      require(v == kNegInf, Errc::invalid_payload, who + ": inadmissible label must carry -inf");
    }
  }
  require(std::abs(total - 1.0) <= 1e-6, Errc::invalid_payload, who + ": unary probabilities do not sum to 1");
  if (ref.modality == Modality::lidar3d) {
    if (auto sky = labels.find("sky")) {
      require(!p.admissible(*sky), Errc::invalid_payload, who + ": sky must be inadmissible on 3D nodes");
    }
  }
}

void check_kind(const Edge& e) {
  const bool same_frame = e.a.frame == e.b.frame;
  const auto ma = e.a.modality;
  const auto mb = e.b.modality;
  bool ok = false;
  switch (e.kind) {
    case EdgeKind::spatial2d: ok = same_frame && ma == Modality::image2d && mb == Modality::image2d; break;
    case EdgeKind::spatial3d: ok = same_frame && ma == Modality::lidar3d && mb == Modality::lidar3d; break;
    case EdgeKind::cross_modal: ok = same_frame && ma != mb; break;
    case EdgeKind::temporal: ok = !same_frame && ma == Modality::lidar3d && mb == Modality::lidar3d; break;
  }
  ok = ok && e.a != e.b;
  require(ok, Errc::kind_mismatch,
          std::string("kind/modality mismatch for ") + to_string(e.kind) + " edge " + describe(e.a) + " - " +
              describe(e.b));
}

}  // namespace

const char* to_string(EdgeKind kind) noexcept {
  switch (kind) {
    case EdgeKind::spatial2d: return "spatial2d";
    case EdgeKind::spatial3d: return "spatial3d";
    case EdgeKind::cross_modal: return "cross_modal";
    case EdgeKind::temporal: return "temporal";
  }
  return "?";
}

std::optional<EdgeKind> edge_kind_from_string(std::string_view name) noexcept {
  for (auto k : kAllEdgeKinds) {
    if (name == to_string(k)) return k;
  }
  return std::nullopt;
}

NodePayload NodePayload::from_probabilities(const Eigen::Ref<const Eigen::VectorXd>& probs,
                                            const AdmissibleMask& admissible, double prob_floor) {
  require(probs.size() == admissible.size(), Errc::dimension_mismatch, "probability/mask length mismatch");
  require(admissible.any(), Errc::invalid_payload, "no admissible label");
  require(prob_floor > 0.0, Errc::invalid_argument, "prob_floor must be positive");
  Eigen::VectorXd clamped = Eigen::VectorXd::Zero(probs.size());
  for (Eigen::Index l = 0; l < probs.size(); ++l) {
    require(std::isfinite(probs(l)) && probs(l) >= 0.0, Errc::invalid_payload, "probabilities must be finite and >= 0");
    if (admissible(l)) clamped(l) = std::max(probs(l), prob_floor);
  }
  clamped /= clamped.sum();
  NodePayload p;
  p.admissible = admissible;
  p.unary_log_prob.resize(probs.size());
  for (Eigen::Index l = 0; l < probs.size(); ++l) p.unary_log_prob(l) = admissible(l) ? std::log(clamped(l)) : kNegInf;
  return p;
}

AdmissibleMask image_mask(const LabelSet& labels) { return AdmissibleMask::Constant(labels.count(), true); }

AdmissibleMask lidar_mask(const LabelSet& labels) {
  AdmissibleMask m = AdmissibleMask::Constant(labels.count(), true);
  if (auto sky = labels.find("sky")) m(*sky) = false;
  return m;
}

// --- WeightSet -------------------------------------------------------------

WeightSet::WeightSet(int label_count) {
  require(label_count >= 2, Errc::invalid_argument, "weight set needs at least two labels");
  for (auto& m : w_) m = Eigen::MatrixXd::Zero(label_count, label_count);
  for (auto& m : b_) m = Eigen::MatrixXd::Zero(label_count, label_count);
}

void WeightSet::set_weight(EdgeKind kind, int a, int b, double value) {
  require(a != b, Errc::invalid_argument, "weight diagonal is structurally zero");
  weights(kind)(a, b) = value;
  if (is_symmetric(kind)) weights(kind)(b, a) = value;
}

void WeightSet::set_bias(EdgeKind kind, int a, int b, double value) {
  require(a != b, Errc::invalid_argument, "bias diagonal is structurally zero");
  biases(kind)(a, b) = value;
  if (is_symmetric(kind)) biases(kind)(b, a) = value;
}

void WeightSet::enforce_structure() {
  for (auto kind : kAllEdgeKinds) {
    for (Eigen::MatrixXd* m : {&weights(kind), &biases(kind)}) {
      if (is_symmetric(kind)) *m = (0.5 * (*m + m->transpose())).eval();
      m->diagonal().setZero();
    }
  }
}

bool WeightSet::has_valid_structure() const {
  for (auto kind : kAllEdgeKinds) {
    for (const Eigen::MatrixXd* m : {&weights(kind), &biases(kind)}) {
      if (m->rows() != label_count() || m->cols() != label_count()) return false;
      if (!m->diagonal().isZero(0.0)) return false;
      if (is_symmetric(kind) && *m != m->transpose()) return false;
    }
  }
  return true;
}

bool WeightSet::is_zero() const {
  for (auto kind : kAllEdgeKinds) {
    if (!weights(kind).isZero(0.0) || !biases(kind).isZero(0.0)) return false;
  }
  return true;
}

// --- FusionGraph -----------------------------------------------------------

std::optional<int> FusionGraph::find(const NodeRef& ref) const {
  auto it = index_.find(ref);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int FusionGraph::index_of(const NodeRef& ref) const {
  auto idx = find(ref);
  if (!idx) fail(Errc::unknown_node, "unknown node " + describe(ref));
  return *idx;
}

Labeling FusionGraph::labeling_from(const std::map<NodeRef, int>& labels) const {
  Labeling out(static_cast<std::size_t>(node_count()), -1);
  for (const auto& [ref, label] : labels) out[static_cast<std::size_t>(index_of(ref))] = label;
  return out;
}

std::map<NodeRef, int> FusionGraph::labeling_to_map(const Labeling& labeling) const {
  std::map<NodeRef, int> out;
  for (int i = 0; i < node_count(); ++i) {
    if (labeling[static_cast<std::size_t>(i)] >= 0) out.emplace(ref(i), labeling[static_cast<std::size_t>(i)]);
  }
  return out;
}

FusionGraph build_graph(LabelSet labels, std::vector<std::pair<NodeRef, NodePayload>> nodes, std::vector<Edge> edges,
                        std::set<NodeRef> hidden) {
  FusionGraph g;
  g.labels_ = std::move(labels);

  std::sort(nodes.begin(), nodes.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
    require(nodes[i].first != nodes[i + 1].first, Errc::duplicate_node, "duplicate node " + describe(nodes[i].first));
  }
  g.refs_.reserve(nodes.size());
  g.payloads_.reserve(nodes.size());
  for (auto& [ref, payload] : nodes) {
    validate_payload(g.labels_, ref, payload);
    g.index_.emplace(ref, static_cast<int>(g.refs_.size()));
    g.refs_.push_back(ref);
    g.payloads_.push_back(std::move(payload));
  }

  for (auto& e : edges) {
    require(g.index_.contains(e.a) && g.index_.contains(e.b), Errc::dangling_endpoint,
            std::string("dangling endpoint on ") + to_string(e.kind) + " edge " + describe(e.a) + " - " + describe(e.b));
    check_kind(e);
    require(std::isfinite(e.kernel) && e.kernel >= 0.0 && e.kernel <= 1.0, Errc::kernel_out_of_range,
            "edge kernel outside [0, 1]");
    if (e.kind == EdgeKind::cross_modal) {
      if (e.a.modality == Modality::lidar3d) std::swap(e.a, e.b);
    } else if (e.b < e.a) {
      std::swap(e.a, e.b);
    }
  }
  auto key = [&g](const Edge& e) {
    const int ia = g.index_.at(e.a);
    const int ib = g.index_.at(e.b);
    return std::make_tuple(std::min(ia, ib), std::max(ia, ib), to_index(e.kind));
  };
  std::stable_sort(edges.begin(), edges.end(), [&](const Edge& x, const Edge& y) { return key(x) < key(y); });
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    require(key(edges[i]) != key(edges[i + 1]), Errc::duplicate_edge,
            std::string("duplicate ") + to_string(edges[i].kind) + " edge " + describe(edges[i].a) + " - " +
                describe(edges[i].b));
  }

  g.incident_.assign(g.refs_.size(), {});
  g.ends_.reserve(edges.size());
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const int ia = g.index_.at(edges[e].a);
    const int ib = g.index_.at(edges[e].b);
    g.ends_.push_back({ia, ib});
    g.incident_[static_cast<std::size_t>(ia)].push_back(static_cast<int>(e));
    g.incident_[static_cast<std::size_t>(ib)].push_back(static_cast<int>(e));
  }
  g.edges_ = std::move(edges);

  g.hidden_flags_.assign(g.refs_.size(), false);
  for (const auto& h : hidden) g.hidden_flags_[static_cast<std::size_t>(g.index_of(h))] = true;
  g.hidden_ = std::move(hidden);
  return g;
}

FusionGraph restrict_labels(const FusionGraph& graph, const LabelMapping& mapping) {
  require(mapping.source == graph.labels(), Errc::label_space_mismatch, "mapping source differs from graph labels");
  require(static_cast<int>(mapping.index.size()) == graph.label_count(), Errc::mapping_not_total,
          "label mapping is not total");
  const int n_new = mapping.target.count();
  FusionGraph g = graph;
  g.labels_ = mapping.target;
  for (auto& p : g.payloads_) {
    Eigen::VectorXd probs = Eigen::VectorXd::Zero(n_new);
    AdmissibleMask mask = AdmissibleMask::Constant(n_new, false);
    for (int l = 0; l < graph.label_count(); ++l) {
      const int t = mapping(l);
      if (p.admissible(l)) {
        probs(t) += std::exp(p.unary_log_prob(l));
        mask(t) = true;
      }
    }
    const double total = probs.sum();
    NodePayload q = p;
    q.admissible = mask;
    q.unary_log_prob.resize(n_new);
    for (int t = 0; t < n_new; ++t) q.unary_log_prob(t) = mask(t) ? std::log(probs(t) / total) : kNegInf;
    p = std::move(q);
  }
  return g;
}

}  // namespace fusioncrf
