#include "ssa/types.hpp"

#include <stdexcept>

namespace ssa {

std::string to_string(const GroupId& g) {
  return std::to_string(g.y) + "," + std::to_string(g.a);
}

GroupId parse_group_id(const std::string& s) {
  auto comma = s.find(',');
  if (comma == std::string::npos) throw std::invalid_argument("group id must be 'y,a': " + s);
  return GroupId{std::stoi(s.substr(0, comma)), std::stoi(s.substr(comma + 1))};
}

std::vector<UnlabeledView> DatasetBundle::unlabeled_view(const std::vector<int>& indices) const {
  std::vector<UnlabeledView> views;
  views.reserve(indices.size());
  for (int i : indices) {
    const Sample& s = unlabeled.at(static_cast<std::size_t>(i));
    views.push_back(UnlabeledView{&s.x, unlabeled_target_visible ? std::optional<int>(s.y)
                                                                 : std::nullopt});
  }
  return views;
}

std::vector<UnlabeledView> DatasetBundle::unlabeled_view_all() const {
  std::vector<UnlabeledView> views;
  views.reserve(unlabeled.size());
  for (const Sample& s : unlabeled) {
    views.push_back(UnlabeledView{&s.x, unlabeled_target_visible ? std::optional<int>(s.y)
                                                                 : std::nullopt});
  }
  return views;
}

std::vector<Sample> gather(const std::vector<Sample>& samples, const std::vector<int>& indices) {
  std::vector<Sample> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(samples.at(static_cast<std::size_t>(i)));
  return out;
}

}  // namespace ssa
