#include "fusioncrf/labels.hpp"

#include <algorithm>
#include <set>

#include "fusioncrf/error.hpp"

namespace fusioncrf {

LabelSet::LabelSet(std::vector<std::string> names) : names_(std::move(names)) {
  require(names_.size() >= 2, Errc::invalid_argument, "label set needs at least two labels");
  std::set<std::string> unique(names_.begin(), names_.end());
  require(unique.size() == names_.size(), Errc::invalid_argument, "label names must be unique");
}

std::optional<int> LabelSet::find(std::string_view name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<int>(it - names_.begin());
}

int LabelSet::index_of(std::string_view name) const {
  auto idx = find(name);
  if (!idx) fail(Errc::invalid_argument, "unknown label '" + std::string(name) + "'");
  return *idx;
}

LabelSet LabelSet::four_class() { return LabelSet({"ground", "sky", "vegetation", "object"}); }

LabelSet LabelSet::binary() { return LabelSet({"ground", "non-ground"}); }

LabelSet LabelSet::nine_class() {
  return LabelSet({"ground", "sky", "vegetation", "building", "vehicle", "human", "animal", "pole", "other"});
}

LabelMapping LabelMapping::from_names(const LabelSet& source, const LabelSet& target,
                                      const std::map<std::string, std::string>& names) {
  LabelMapping m{source, target, {}};
  m.index.reserve(static_cast<std::size_t>(source.count()));
  for (const auto& name : source.names()) {
    auto it = names.find(name);
    if (it == names.end()) fail(Errc::mapping_not_total, "label mapping has no entry for '" + name + "'");
    auto dst = target.find(it->second);
    if (!dst) fail(Errc::mapping_not_total, "label mapping target '" + it->second + "' not in target set");
    m.index.push_back(*dst);
  }
  return m;
}

LabelMapping LabelMapping::identity(const LabelSet& labels) {
  LabelMapping m{labels, labels, {}};
  for (int i = 0; i < labels.count(); ++i) m.index.push_back(i);
  return m;
}

LabelMapping LabelMapping::nine_to_four() {
  return from_names(LabelSet::nine_class(), LabelSet::four_class(),
                    {{"ground", "ground"},
                     {"sky", "sky"},
                     {"vegetation", "vegetation"},
                     {"building", "object"},
                     {"vehicle", "object"},
                     {"human", "object"},
                     {"animal", "object"},
                     {"pole", "object"},
                     {"other", "object"}});
}

LabelMapping LabelMapping::four_to_binary() {
  return from_names(LabelSet::four_class(), LabelSet::binary(),
                    {{"ground", "ground"}, {"sky", "non-ground"}, {"vegetation", "non-ground"}, {"object", "non-ground"}});
}

LabelMapping LabelMapping::then(const LabelMapping& next) const {
  require(target == next.source, Errc::label_space_mismatch, "cannot compose label mappings over different label sets");
  LabelMapping m{source, next.target, {}};
  for (int old : index) m.index.push_back(next(old));
  return m;
}

}  // namespace fusioncrf
