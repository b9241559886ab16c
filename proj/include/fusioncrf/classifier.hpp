#pragma once

#include <Eigen/Core>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "fusioncrf/graph.hpp"
#include "fusioncrf/labels.hpp"
#include "fusioncrf/table.hpp"

namespace fusioncrf {

/// Initial per-point classifier. Features arrive one column per point;
/// output rows are probability vectors over `labels()`, zero on labels the
/// model cannot emit.
class PointClassifier {
 public:
  virtual ~PointClassifier() = default;

  virtual std::string kind() const = 0;
  virtual const LabelSet& labels() const = 0;
  virtual const AdmissibleMask& admissible() const = 0;
  virtual int feature_count() const = 0;
  virtual Eigen::MatrixXd predict(const Eigen::MatrixXd& features) const = 0;
  virtual void save(std::ostream& out) const = 0;
};

/// Uniform over the admissible labels regardless of input.
class ConstantClassifier final : public PointClassifier {
 public:
  ConstantClassifier(LabelSet labels, AdmissibleMask admissible, int feature_count = 9);

  std::string kind() const override { return "constant"; }
  const LabelSet& labels() const override { return labels_; }
  const AdmissibleMask& admissible() const override { return admissible_; }
  int feature_count() const override { return feature_count_; }
  Eigen::MatrixXd predict(const Eigen::MatrixXd& features) const override;
  void save(std::ostream& out) const override;

 private:
  LabelSet labels_;
  AdmissibleMask admissible_;
  int feature_count_;
};

struct LogisticOptions {
  double l2_lambda = 1e-3;
  int max_iterations = 300;
  double gradient_tolerance = 1e-6;
};

/// Multinomial logistic regression on standardized features.
class LogisticClassifier final : public PointClassifier {
 public:
  LogisticClassifier(LabelSet labels, AdmissibleMask admissible, Eigen::VectorXd mean, Eigen::VectorXd scale,
                     Eigen::MatrixXd coefficients);

  /// `targets` holds one label per feature column; negative entries are skipped.
  static LogisticClassifier train(const Eigen::MatrixXd& features, const std::vector<int>& targets,
                                  const LabelSet& labels, const AdmissibleMask& admissible,
                                  const LogisticOptions& opt = {});

  std::string kind() const override { return "logistic"; }
  const LabelSet& labels() const override { return labels_; }
  const AdmissibleMask& admissible() const override { return admissible_; }
  int feature_count() const override { return static_cast<int>(mean_.size()); }
  Eigen::MatrixXd predict(const Eigen::MatrixXd& features) const override;
  void save(std::ostream& out) const override;

  const Eigen::VectorXd& mean() const noexcept { return mean_; }
  const Eigen::VectorXd& scale() const noexcept { return scale_; }
  /// One row per admissible label: bias followed by feature weights.
  const Eigen::MatrixXd& coefficients() const noexcept { return coef_; }

 private:
  LabelSet labels_;
  AdmissibleMask admissible_;
  std::vector<int> active_;
  Eigen::VectorXd mean_;
  Eigen::VectorXd scale_;
  Eigen::MatrixXd coef_;
};

std::unique_ptr<PointClassifier> load_classifier(std::istream& in);
void save_classifier(const PointClassifier& model, const std::string& path);
std::unique_ptr<PointClassifier> load_classifier(const std::string& path);

/// Runs the model and wraps the result with its label set.
ProbabilityTable classify_points(const Eigen::MatrixXd& features, const PointClassifier& model);

}  // namespace fusioncrf
