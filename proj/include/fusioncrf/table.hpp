#pragma once

#include <Eigen/Core>
#include <cstdint>

#include "fusioncrf/labels.hpp"

namespace fusioncrf {

/// One probability vector per item (point, segment, superpixel), stored row-wise.
struct ProbabilityTable {
  LabelSet labels;
  Eigen::MatrixXd probs;  // items x labels

  Eigen::Index size() const noexcept { return probs.rows(); }
  /// Shape, finiteness, nonnegativity and row sums within `tolerance` of one.
  void validate(double tolerance = 1e-6) const;
};

/// Integer image indexed (row = y, col = x).
using LabelImage = Eigen::Array<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-pixel probabilities; row y * width + x of `probs` belongs to pixel (x, y).
struct ProbabilityImage {
  LabelSet labels;
  int width = 0;
  int height = 0;
  Eigen::MatrixXd probs;
};

}  // namespace fusioncrf
