#pragma once

#include <Eigen/Core>
#include <array>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "fusioncrf/labels.hpp"

namespace fusioncrf {

enum class Modality : std::uint8_t { image2d = 0, lidar3d = 1 };

/// Identifies a segment node: (frame, modality, segment index). Ordering is
/// lexicographic in that order and defines the canonical node order.
struct NodeRef {
  int frame = 0;
  Modality modality = Modality::image2d;
  int index = 0;

  auto operator<=>(const NodeRef&) const = default;
};

enum class EdgeKind : std::uint8_t { spatial2d = 0, spatial3d = 1, cross_modal = 2, temporal = 3 };
inline constexpr int kEdgeKindCount = 4;
inline constexpr std::array<EdgeKind, kEdgeKindCount> kAllEdgeKinds{EdgeKind::spatial2d, EdgeKind::spatial3d,
                                                                    EdgeKind::cross_modal, EdgeKind::temporal};

constexpr bool is_symmetric(EdgeKind kind) noexcept { return kind != EdgeKind::cross_modal; }
constexpr int to_index(EdgeKind kind) noexcept { return static_cast<int>(kind); }
const char* to_string(EdgeKind kind) noexcept;
std::optional<EdgeKind> edge_kind_from_string(std::string_view name) noexcept;

using AdmissibleMask = Eigen::Array<bool, Eigen::Dynamic, 1>;

/// Per-node observation-derived data. Log-probabilities are natural log; an
/// inadmissible label carries -inf and a false mask entry.
struct NodePayload {
  Eigen::VectorXd unary_log_prob;
  AdmissibleMask admissible;
  std::optional<Eigen::Vector3d> centroid3d;
  std::optional<Eigen::Vector3d> mean_rgb;
  std::optional<double> normal_angle;

  /// Clamps admissible entries at `prob_floor`, renormalizes over the
  /// admissible labels and stores the logarithm.
  static NodePayload from_probabilities(const Eigen::Ref<const Eigen::VectorXd>& probs, const AdmissibleMask& admissible,
                                        double prob_floor = 1e-9);

  Eigen::VectorXd probabilities() const { return unary_log_prob.array().exp().matrix(); }
};

/// All labels admissible.
AdmissibleMask image_mask(const LabelSet& labels);
/// All labels except "sky" (if present) admissible.
AdmissibleMask lidar_mask(const LabelSet& labels);

struct Edge {
  EdgeKind kind = EdgeKind::spatial2d;
  NodeRef a;
  NodeRef b;
  double kernel = 1.0;
};

/// Learnable pairwise parameters: one weight and one bias matrix per edge
/// kind. Spatial and temporal matrices are symmetric; cross-modal matrices are
/// indexed [2D label][3D label]. Diagonals are always zero.
class WeightSet {
 public:
  WeightSet() = default;
  explicit WeightSet(int label_count);

  int label_count() const noexcept { return static_cast<int>(w_[0].rows()); }

  const Eigen::MatrixXd& weights(EdgeKind kind) const { return w_[static_cast<std::size_t>(to_index(kind))]; }
  const Eigen::MatrixXd& biases(EdgeKind kind) const { return b_[static_cast<std::size_t>(to_index(kind))]; }
  Eigen::MatrixXd& weights(EdgeKind kind) { return w_[static_cast<std::size_t>(to_index(kind))]; }
  Eigen::MatrixXd& biases(EdgeKind kind) { return b_[static_cast<std::size_t>(to_index(kind))]; }

  /// Sets one entry (and its mirror for symmetric kinds). Diagonal entries are rejected.
  void set_weight(EdgeKind kind, int a, int b, double value);
  void set_bias(EdgeKind kind, int a, int b, double value);

  /// Cost of labels (la, lb) across an edge of `kind` with precomputed kernel.
  double cost(EdgeKind kind, int la, int lb, double kernel) const {
    if (la == lb) return 0.0;
    return weights(kind)(la, lb) * kernel + biases(kind)(la, lb);
  }

  /// Averages symmetric matrices with their transpose and zeroes diagonals.
  void enforce_structure();
  bool has_valid_structure() const;
  bool is_zero() const;

  double l2_lambda = 0.0;

 private:
  std::array<Eigen::MatrixXd, kEdgeKindCount> w_;
  std::array<Eigen::MatrixXd, kEdgeKindCount> b_;
};

/// Dense node index -> label; -1 marks an unassigned (hidden) node.
using Labeling = std::vector<int>;

/// Immutable validated CRF graph. Nodes are stored in NodeRef order and edges
/// in canonical (endpoint, kind) order, so construction order never leaks into
/// inference schedules.
class FusionGraph {
 public:
  struct Endpoints {
    int a;
    int b;
  };

  const LabelSet& labels() const noexcept { return labels_; }
  int label_count() const noexcept { return labels_.count(); }

  int node_count() const noexcept { return static_cast<int>(refs_.size()); }
  const NodeRef& ref(int node) const { return refs_[static_cast<std::size_t>(node)]; }
  const NodePayload& payload(int node) const { return payloads_[static_cast<std::size_t>(node)]; }
  std::optional<int> find(const NodeRef& ref) const;
  int index_of(const NodeRef& ref) const;
  bool is_hidden(int node) const { return hidden_flags_[static_cast<std::size_t>(node)]; }
  const std::set<NodeRef>& hidden() const noexcept { return hidden_; }

  int edge_count() const noexcept { return static_cast<int>(edges_.size()); }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  const Edge& edge(int e) const { return edges_[static_cast<std::size_t>(e)]; }
  Endpoints endpoints(int e) const { return ends_[static_cast<std::size_t>(e)]; }
  /// Indices of edges touching `node`, ascending.
  std::span<const int> incident(int node) const {
    const auto& v = incident_[static_cast<std::size_t>(node)];
    return {v.data(), v.size()};
  }

  Labeling labeling_from(const std::map<NodeRef, int>& labels) const;
  std::map<NodeRef, int> labeling_to_map(const Labeling& labeling) const;

 private:
  friend FusionGraph build_graph(LabelSet, std::vector<std::pair<NodeRef, NodePayload>>, std::vector<Edge>,
                                 std::set<NodeRef>);
  friend FusionGraph restrict_labels(const FusionGraph&, const LabelMapping&);

  LabelSet labels_;
  std::vector<NodeRef> refs_;
  std::vector<NodePayload> payloads_;
  std::map<NodeRef, int> index_;
  std::vector<Edge> edges_;
  std::vector<Endpoints> ends_;
  std::vector<std::vector<int>> incident_;
  std::set<NodeRef> hidden_;
  std::vector<bool> hidden_flags_;
};

/// Validates and indexes a graph. Each malformation is a distinct Errc:
/// duplicate_node, invalid_payload, dangling_endpoint, kind_mismatch,
/// kernel_out_of_range, duplicate_edge, unknown_node (hidden set).
FusionGraph build_graph(LabelSet labels, std::vector<std::pair<NodeRef, NodePayload>> nodes, std::vector<Edge> edges,
                        std::set<NodeRef> hidden = {});

/// Merges labels: unary probabilities are summed per target label and
/// renormalized, admissibility masks are OR-ed.
FusionGraph restrict_labels(const FusionGraph& graph, const LabelMapping& mapping);

}  // namespace fusioncrf
