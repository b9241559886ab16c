#pragma once

#include <stdexcept>
#include <string>

namespace fusioncrf {

/// Rejection categories. The CLI prints the category name on stderr so
/// scripts can branch on it.
enum class Errc {
  invalid_argument,
  dangling_endpoint,
  duplicate_node,
  duplicate_edge,
  kind_mismatch,
  kernel_out_of_range,
  invalid_payload,
  mapping_not_total,
  inadmissible_label,
  incomplete_labeling,
  empty_graph,
  unknown_node,
  state_space_too_large,
  degenerate_cloud,
  dimension_mismatch,
  empty_segment,
  non_finite_objective,
  io,
  format,
  label_space_mismatch,
  missing_annotations,
  config,
};

constexpr const char* to_string(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::dangling_endpoint: return "dangling_endpoint";
    case Errc::duplicate_node: return "duplicate_node";
    case Errc::duplicate_edge: return "duplicate_edge";
    case Errc::kind_mismatch: return "kind_mismatch";
    case Errc::kernel_out_of_range: return "kernel_out_of_range";
    case Errc::invalid_payload: return "invalid_payload";
    case Errc::mapping_not_total: return "mapping_not_total";
    case Errc::inadmissible_label: return "inadmissible_label";
    case Errc::incomplete_labeling: return "incomplete_labeling";
    case Errc::empty_graph: return "empty_graph";
    case Errc::unknown_node: return "unknown_node";
    case Errc::state_space_too_large: return "state_space_too_large";
    case Errc::degenerate_cloud: return "degenerate_cloud";
    case Errc::dimension_mismatch: return "dimension_mismatch";
    case Errc::empty_segment: return "empty_segment";
    case Errc::non_finite_objective: return "non_finite_objective";
    case Errc::io: return "io";
    case Errc::format: return "format";
    case Errc::label_space_mismatch: return "label_space_mismatch";
    case Errc::missing_annotations: return "missing_annotations";
    case Errc::config: return "config";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, Errc code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace fusioncrf
