#include "fusioncrf/classifier.hpp"

#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "fusioncrf/error.hpp"
#include "fusioncrf/optimize.hpp"

namespace fusioncrf {

namespace {

constexpr const char* kMagic = "fusioncrf-point-classifier";

void check_mask(const LabelSet& labels, const AdmissibleMask& admissible) {
  require(admissible.size() == labels.count(), Errc::dimension_mismatch, "admissible mask differs from label count");
  require(admissible.any(), Errc::invalid_argument, "classifier needs at least one admissible label");
}

void write_header(std::ostream& out, const PointClassifier& m) {
  out << kMagic << " 1\n" << "kind " << m.kind() << "\n" << "features " << m.feature_count() << "\n" << "labels";
  for (const auto& name : m.labels().names()) {
    require(name.find_first_of(" \t\n") == std::string::npos, Errc::format, "label names must not contain whitespace");
    out << ' ' << name;
  }
  out << "\nadmissible";
  for (Eigen::Index i = 0; i < m.admissible().size(); ++i) out << ' ' << (m.admissible()[i] ? 1 : 0);
  out << '\n';
}

std::istringstream keyed_line(std::istream& in, const std::string& key) {
  std::string line;
  if (!std::getline(in, line)) fail(Errc::format, "classifier checkpoint truncated before '" + key + "'");
  std::istringstream ss(line);
  std::string word;
  ss >> word;
  if (word != key) fail(Errc::format, "classifier checkpoint expected '" + key + "', found '" + word + "'");
  return ss;
}

Eigen::VectorXd read_vector(std::istream& in, const std::string& key, Eigen::Index n) {
  auto ss = keyed_line(in, key);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(ss >> v[i])) fail(Errc::format, "classifier checkpoint: short '" + key + "' row");
  return v;
}

void write_vector(std::ostream& out, const std::string& key, const Eigen::VectorXd& v) {
  out << key;
  for (Eigen::Index i = 0; i < v.size(); ++i) out << ' ' << v[i];
  out << '\n';
}

}  // namespace

ConstantClassifier::ConstantClassifier(LabelSet labels, AdmissibleMask admissible, int feature_count)
    : labels_(std::move(labels)), admissible_(std::move(admissible)), feature_count_(feature_count) {
  check_mask(labels_, admissible_);
  require(feature_count_ >= 1, Errc::invalid_argument, "feature count must be positive");
}

Eigen::MatrixXd ConstantClassifier::predict(const Eigen::MatrixXd& features) const {
  require(features.rows() == feature_count_, Errc::dimension_mismatch, "feature dimension differs from the model");
  Eigen::RowVectorXd row = admissible_.cast<double>().transpose();
  row /= row.sum();
  return row.replicate(features.cols(), 1);
}

void ConstantClassifier::save(std::ostream& out) const { write_header(out, *this); }

LogisticClassifier::LogisticClassifier(LabelSet labels, AdmissibleMask admissible, Eigen::VectorXd mean,
                                       Eigen::VectorXd scale, Eigen::MatrixXd coefficients)
    : labels_(std::move(labels)),
      admissible_(std::move(admissible)),
      mean_(std::move(mean)),
      scale_(std::move(scale)),
      coef_(std::move(coefficients)) {
  check_mask(labels_, admissible_);
  for (Eigen::Index i = 0; i < admissible_.size(); ++i)
    if (admissible_[i]) active_.push_back(static_cast<int>(i));
  require(mean_.size() >= 1 && scale_.size() == mean_.size(), Errc::dimension_mismatch,
          "standardization vectors disagree");
  require((scale_.array() > 0.0).all(), Errc::invalid_argument, "standardization scale must be positive");
  require(coef_.rows() == static_cast<Eigen::Index>(active_.size()) && coef_.cols() == mean_.size() + 1,
          Errc::dimension_mismatch, "coefficient matrix shape disagrees with labels and features");
  require(mean_.allFinite() && coef_.allFinite(), Errc::invalid_argument, "classifier parameters must be finite");
}

LogisticClassifier LogisticClassifier::train(const Eigen::MatrixXd& features, const std::vector<int>& targets,
                                             const LabelSet& labels, const AdmissibleMask& admissible,
                                             const LogisticOptions& opt) {
  check_mask(labels, admissible);
  require(static_cast<Eigen::Index>(targets.size()) == features.cols(), Errc::dimension_mismatch,
          "one target per feature column expected");
  require(features.rows() >= 1 && features.allFinite(), Errc::invalid_argument, "features must be finite");

  std::vector<int> column_of(static_cast<std::size_t>(labels.count()), -1);
  int k = 0;
  for (int l = 0; l < labels.count(); ++l)
    if (admissible[l]) column_of[static_cast<std::size_t>(l)] = k++;

  std::vector<Eigen::Index> used;
  std::vector<int> cls;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0) continue;
    require(targets[i] < labels.count() && admissible[targets[i]], Errc::inadmissible_label,
            "training target outside the admissible labels");
    used.push_back(static_cast<Eigen::Index>(i));
    cls.push_back(column_of[static_cast<std::size_t>(targets[i])]);
  }
  require(!used.empty(), Errc::missing_annotations, "no labeled points to train on");

  const Eigen::Index d = features.rows();
  const Eigen::Index n = static_cast<Eigen::Index>(used.size());
  Eigen::MatrixXd x(d + 1, n);
  for (Eigen::Index j = 0; j < n; ++j) x.col(j) << 1.0, features.col(used[static_cast<std::size_t>(j)]);
  const Eigen::VectorXd mean = x.bottomRows(d).rowwise().mean();
  x.bottomRows(d).colwise() -= mean;
  Eigen::VectorXd scale = (x.bottomRows(d).array().square().rowwise().sum() / static_cast<double>(n)).sqrt();
  for (Eigen::Index i = 0; i < d; ++i)
    if (!(scale[i] > 1e-12)) scale[i] = 1.0;
  x.bottomRows(d).array().colwise() /= scale.array();

  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(k, n);
  for (Eigen::Index j = 0; j < n; ++j) onehot(cls[static_cast<std::size_t>(j)], j) = 1.0;

  const double lambda = opt.l2_lambda;
  Objective objective = [&](const Eigen::VectorXd& theta, Eigen::VectorXd& grad) {
    const Eigen::Map<const Eigen::MatrixXd> w(theta.data(), k, d + 1);
    Eigen::MatrixXd z = w * x;
    const Eigen::RowVectorXd zmax = z.colwise().maxCoeff();
    z.rowwise() -= zmax;
    Eigen::MatrixXd p = z.array().exp().matrix();
    const Eigen::RowVectorXd norm = p.colwise().sum();
    p.array().rowwise() /= norm.array();
    const double nll = -((z.array() * onehot.array()).sum() - norm.array().log().sum());
    grad.resize(theta.size());
    Eigen::Map<Eigen::MatrixXd> g(grad.data(), k, d + 1);
    g = (p - onehot) * x.transpose() / static_cast<double>(n);
    g.rightCols(d) += lambda * w.rightCols(d);
    return nll / static_cast<double>(n) + 0.5 * lambda * w.rightCols(d).squaredNorm();
  };
  MinimizeOptions mo;
  mo.max_iterations = opt.max_iterations;
  mo.gradient_tolerance = opt.gradient_tolerance;
  const auto res = minimize_lbfgs(objective, Eigen::VectorXd::Zero(k * (d + 1)), mo);
  Eigen::MatrixXd coef = Eigen::Map<const Eigen::MatrixXd>(res.x.data(), k, d + 1);
  return LogisticClassifier(labels, admissible, mean, scale, std::move(coef));
}

Eigen::MatrixXd LogisticClassifier::predict(const Eigen::MatrixXd& features) const {
  require(features.rows() == mean_.size(), Errc::dimension_mismatch, "feature dimension differs from the model");
  const Eigen::Index n = features.cols();
  Eigen::MatrixXd x(mean_.size() + 1, n);
  x.row(0).setOnes();
  x.bottomRows(mean_.size()) = ((features.colwise() - mean_).array().colwise() / scale_.array()).matrix();
  Eigen::MatrixXd z = coef_ * x;
  z.rowwise() -= z.colwise().maxCoeff();
  z = z.array().exp().matrix();
  z.array().rowwise() /= z.colwise().sum().array();

  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, labels_.count());
  for (std::size_t c = 0; c < active_.size(); ++c) out.col(active_[c]) = z.row(static_cast<Eigen::Index>(c)).transpose();
  return out;
}

void LogisticClassifier::save(std::ostream& out) const {
  write_header(out, *this);
  out << std::setprecision(17);
  write_vector(out, "mean", mean_);
  write_vector(out, "scale", scale_);
  for (Eigen::Index r = 0; r < coef_.rows(); ++r) write_vector(out, "coef", coef_.row(r).transpose());
}

std::unique_ptr<PointClassifier> load_classifier(std::istream& in) {
  std::string magic;
  int version = 0;
  {
    std::string line;
    if (!std::getline(in, line)) fail(Errc::format, "empty classifier checkpoint");
    std::istringstream ss(line);
    ss >> magic >> version;
  }
  require(magic == kMagic && version == 1, Errc::format, "not a version 1 point-classifier checkpoint");
  std::string kind;
  keyed_line(in, "kind") >> kind;
  int features = 0;
  keyed_line(in, "features") >> features;
  require(features >= 1, Errc::format, "classifier checkpoint: bad feature count");
  std::vector<std::string> names;
  {
    auto ss = keyed_line(in, "labels");
    for (std::string w; ss >> w;) names.push_back(w);
  }
  LabelSet labels(names);
  AdmissibleMask mask(labels.count());
  {
    auto ss = keyed_line(in, "admissible");
    for (int i = 0; i < labels.count(); ++i) {
      int v = -1;
      if (!(ss >> v) || (v != 0 && v != 1)) fail(Errc::format, "classifier checkpoint: bad admissible row");
      mask[i] = v == 1;
    }
  }
  if (kind == "constant") return std::make_unique<ConstantClassifier>(labels, mask, features);
  require(kind == "logistic", Errc::format, "unknown classifier kind '" + kind + "'");
  Eigen::VectorXd mean = read_vector(in, "mean", features);
  Eigen::VectorXd scale = read_vector(in, "scale", features);
  Eigen::MatrixXd coef(mask.count(), features + 1);
  for (Eigen::Index r = 0; r < coef.rows(); ++r) coef.row(r) = read_vector(in, "coef", features + 1).transpose();
  return std::make_unique<LogisticClassifier>(labels, mask, mean, scale, coef);
}

void save_classifier(const PointClassifier& model, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), Errc::io, "cannot write '" + path + "'");
  model.save(out);
  require(out.good(), Errc::io, "write failed for '" + path + "'");
}

std::unique_ptr<PointClassifier> load_classifier(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), Errc::io, "cannot read '" + path + "'");
  return load_classifier(in);
}

ProbabilityTable classify_points(const Eigen::MatrixXd& features, const PointClassifier& model) {
  return {model.labels(), model.predict(features)};
}

}  // namespace fusioncrf
