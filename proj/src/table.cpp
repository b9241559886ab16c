#include "fusioncrf/table.hpp"

#include <cmath>

#include "fusioncrf/error.hpp"

namespace fusioncrf {

void ProbabilityTable::validate(double tolerance) const {
  require(probs.cols() == labels.count(), Errc::dimension_mismatch, "probability table width differs from label count");
  require(probs.allFinite() && (probs.array() >= 0.0).all(), Errc::invalid_payload,
          "probability table holds negative or non-finite entries");
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    if (std::abs(probs.row(i).sum() - 1.0) > tolerance)
      fail(Errc::invalid_payload, "probability row " + std::to_string(i) + " does not sum to one");
  }
}

}  // namespace fusioncrf
