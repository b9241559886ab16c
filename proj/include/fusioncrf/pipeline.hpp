#pragma once

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fusioncrf/classifier.hpp"
#include "fusioncrf/config.hpp"
#include "fusioncrf/dataset.hpp"
#include "fusioncrf/graph.hpp"
#include "fusioncrf/inference.hpp"
#include "fusioncrf/training.hpp"

namespace fusioncrf {

/// Presets between the nine-, four- and two-label sets (identity included).
/// Throws label_space_mismatch when no preset leads from `source` to `target`.
LabelMapping label_mapping(const LabelSet& source, const LabelSet& target);

/// Ground alignment and point features, independent of any classifier.
struct FrameGeometry {
  PointCloud cloud;  // ground-aligned
  Eigen::Isometry3d alignment = Eigen::Isometry3d::Identity();  // sensor -> aligned
  FeatureMatrix features;                                        // 9 x points
};

FrameGeometry frame_geometry(const FrameBundle& frame, const PipelineConfig& cfg);

/// Everything graph construction needs from one frame, in the configured label set.
struct PreparedFrame {
  std::string id;
  LabelSet labels;
  PointCloud cloud;
  CameraModel camera;  // extrinsics act on the aligned cloud
  NavSample nav;       // pose acts on the aligned cloud
  FeatureMatrix features;

  LabelImage superpixels;
  std::vector<int> superpixel_ids;  // ids owning at least one pixel, ascending
  ProbabilityTable superpixel_probs;
  Eigen::MatrixX3d superpixel_rgb;
  std::vector<std::pair<int, int>> superpixel_adjacency;

  ProbabilityTable point_probs;
  Eigen::VectorXd normal_angles;
  Segmentation segmentation;
  std::vector<OverlapEdge> overlaps;

  std::optional<LabelImage> gt2d;               // -1 = unlabeled
  std::optional<std::vector<int>> gt3d;         // -1 = unlabeled
  std::vector<int> superpixel_truth;            // per superpixel id; -1 none
  std::vector<int> supervoxel_truth;            // per segment; -1 none or inadmissible

  bool annotated() const noexcept { return gt2d.has_value() && gt3d.has_value(); }
};

/// `classifier` is consulted when the configured point source asks for it (or
/// the frame carries no probability file). Errors are rethrown with the frame id.
PreparedFrame prepare_frame(const FrameBundle& frame, const CameraModel& camera, const LabelSet& domain_labels,
                            const PointClassifier* classifier, const PipelineConfig& cfg,
                            const FrameGeometry* geometry = nullptr);

/// Which nodes and edge kinds enter a graph.
struct GraphSpec {
  bool image = true;
  bool lidar = true;
  bool spatial = true;
  bool cross_modal = true;
  bool temporal = false;
};

inline constexpr int kPreviousFrame = 0;
inline constexpr int kCurrentFrame = 1;

/// Current-frame nodes live in frame slot 1, the previous frame in slot 0.
/// With a previous frame (and spec.temporal) its nodes are added as hidden,
/// linked to the current 3D nodes by temporal edges. `training` additionally
/// hides current nodes without usable ground truth and returns their labels.
FusionGraph build_frame_graph(const PreparedFrame& current, const PreparedFrame* previous, const GraphSpec& spec,
                              const PipelineConfig& cfg);
TrainingExample make_training_example(const PreparedFrame& current, const PreparedFrame* previous,
                                      const GraphSpec& spec, const PipelineConfig& cfg);

enum class DecodeMethod { max_product, marginal_argmax };

struct FrameLabels {
  LabelImage image;          // per pixel; -1 where no 2D node covers the pixel
  std::vector<int> points;   // per point; -1 where no 3D node covers the point
};

/// Broadcasts node labels of the current frame onto pixels and points.
FrameLabels broadcast_labels(const FusionGraph& graph, const Labeling& labeling, const PreparedFrame& current);

struct FrameResult {
  FrameLabels labels;
  Labeling node_labels;
  InferenceResult inference;
};

FrameResult decode_frame(const FusionGraph& graph, const PreparedFrame& current, const WeightSet& weights,
                         const PipelineConfig& cfg, DecodeMethod method = DecodeMethod::max_product);

/// The full chain for one frame with the fused+temporal graph.
FrameResult process_frame(const FrameBundle& current, const FrameBundle* previous, const CameraModel& camera,
                          const LabelSet& domain_labels, const WeightSet& weights, const PointClassifier* classifier,
                          const PipelineConfig& cfg, DecodeMethod method = DecodeMethod::max_product);

/// Confusion counts; column `labels` collects predictions of -1.
struct Confusion {
  Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic> counts;  // truth x (prediction | none)

  explicit Confusion(int labels = 0) : counts(Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic>::Zero(labels, labels + 1)) {}
  void add(int truth, int prediction);
  Confusion& operator+=(const Confusion& other);
};

struct ModalityMetrics {
  Confusion confusion;
  Eigen::VectorXd iou;                // NaN where truth and prediction both lack the label
  std::vector<bool> present;          // label occurs in the ground truth
  double mean_iou = 0.0;              // over present labels
  double accuracy = 0.0;
  long long evaluated = 0;

  static ModalityMetrics from(const Confusion& confusion);
};

struct MetricsReport {
  LabelSet labels;
  ModalityMetrics image;
  ModalityMetrics lidar;
};

Confusion confusion_2d(const LabelImage& prediction, const LabelImage& truth, int labels);
Confusion confusion_3d(const std::vector<int>& prediction, const std::vector<int>& truth, int labels);
/// Unlabeled truth (-1) is skipped; shapes must agree.
MetricsReport evaluate(const LabelImage& prediction2d, const LabelImage& truth2d, const std::vector<int>& prediction3d,
                       const std::vector<int>& truth3d, const LabelSet& labels);

enum class Variant { initial, single_modality, fused, fused_temporal };
inline constexpr std::array<Variant, 4> kAllVariants{Variant::initial, Variant::single_modality, Variant::fused,
                                                     Variant::fused_temporal};
const char* to_string(Variant v) noexcept;
std::optional<Variant> variant_from_string(std::string_view name) noexcept;
/// Graphs decoded for a variant: none for `initial` (unaries only), an image
/// graph and a lidar graph for `single_modality`, one graph otherwise.
std::vector<GraphSpec> graph_specs(Variant v);

enum class SplitKind { leave_one_domain_out, domain_training, adaptation_training };
const char* to_string(SplitKind s) noexcept;
std::optional<SplitKind> split_from_string(std::string_view name) noexcept;

struct FrameRef {
  int domain = 0;
  int frame = 0;
  auto operator<=>(const FrameRef&) const = default;
};

/// leave_one_domain_out: test on one domain, train on all others.
/// domain_training: the target domain's frames are halved in temporal order;
/// each half is tested with the other half as training data.
/// adaptation_training: as domain_training with every other domain added to training.
struct Fold {
  std::string name;
  int test_domain = 0;
  std::vector<FrameRef> test;
  std::vector<FrameRef> train;
};

std::vector<Fold> make_folds(const std::vector<Domain>& domains, SplitKind split);

struct VariantResult {
  std::map<DecodeMethod, MetricsReport> metrics;
  std::optional<FitResult> fit;
};

struct FoldReport {
  Fold fold;
  std::vector<std::string> training_frames;  // "<domain>/<frame>", as used by the fit
  std::map<Variant, VariantResult> variants;
};

struct CrossValidationReport {
  SplitKind split = SplitKind::leave_one_domain_out;
  LabelSet labels;
  std::vector<FoldReport> folds;

  /// Deterministic `key=value` lines.
  std::string metrics_text() const;
  /// Human-readable summary.
  std::string table() const;
};

/// Trains the point classifier (when needed) and one WeightSet per variant on
/// each fold's training frames, then evaluates on its test frames.
CrossValidationReport cross_validate(const std::vector<Domain>& domains, SplitKind split, const PipelineConfig& cfg,
                                     const std::vector<Variant>& variants = {kAllVariants.begin(), kAllVariants.end()});

/// Logistic point classifier over the 3D-admissible labels of cfg.labels.
/// `labels` are per-point annotations already in cfg.labels; -1 is skipped.
std::unique_ptr<PointClassifier> train_point_classifier(const std::vector<const FeatureMatrix*>& features,
                                                        const std::vector<std::vector<int>>& labels,
                                                        const PipelineConfig& cfg);

/// Fits one WeightSet for `variant` on prepared (current, previous) pairs.
FitResult train_weights(const std::vector<std::pair<const PreparedFrame*, const PreparedFrame*>>& frames, Variant variant,
                        const PipelineConfig& cfg);

}  // namespace fusioncrf
