#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fusioncrf {

/// Ordered, duplicate-free list of category names (at least two).
class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(std::vector<std::string> names);

  int count() const noexcept { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  const std::string& name(int label) const { return names_.at(static_cast<std::size_t>(label)); }

  std::optional<int> find(std::string_view name) const;
  /// Throws when the name is not part of the set.
  int index_of(std::string_view name) const;

  bool operator==(const LabelSet&) const = default;

  /// ground, sky, vegetation, object
  static LabelSet four_class();
  /// ground, non-ground
  static LabelSet binary();
  /// The nine annotated categories before merging.
  static LabelSet nine_class();

 private:
  std::vector<std::string> names_;
};

/// Total map from the labels of `source` onto the labels of `target`.
struct LabelMapping {
  LabelSet source;
  LabelSet target;
  std::vector<int> index;  // index[old] = new

  int operator()(int old_label) const { return index.at(static_cast<std::size_t>(old_label)); }

  /// Builds from name pairs; rejects with mapping_not_total if a source name is missing.
  static LabelMapping from_names(const LabelSet& source, const LabelSet& target,
                                 const std::map<std::string, std::string>& names);
  static LabelMapping identity(const LabelSet& labels);
  /// building, vehicle, human, animal, pole, other -> object
  static LabelMapping nine_to_four();
  /// everything except ground -> non-ground
  static LabelMapping four_to_binary();

  /// this followed by `next`
  LabelMapping then(const LabelMapping& next) const;
};

}  // namespace fusioncrf
