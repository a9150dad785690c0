// Core domain types shared by every stage of the pipeline.
#pragma once

#include <Eigen/Core>

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ssa {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Group identity (target label, spurious attribute). Ordered lexicographically
// so that ties anywhere in the pipeline break deterministically.
struct GroupId {
  int y = 0;
  int a = 0;
  auto operator<=>(const GroupId&) const = default;
};

std::string to_string(const GroupId& g);  // "y,a"
GroupId parse_group_id(const std::string& s);

// One data point. `attr` is the spurious attribute; samples in a
// group-unlabeled set carry it only as hidden ground truth for evaluation.
struct Sample {
  Vector x;
  int y = 0;
  std::optional<int> attr;
};

// Training view of a group-unlabeled sample. The attribute is stripped by
// construction; the target label is hidden too in the class-imbalanced SSL
// mode, where nothing but the features is known.
struct UnlabeledView {
  const Vector* x = nullptr;
  std::optional<int> y;
};

// Accumulates non-fatal diagnostics (degenerate splits, skipped anchors,
// groups missing from a holdout set).
struct Warnings {
  std::vector<std::string> items;
  void add(std::string message) { items.push_back(std::move(message)); }
  std::size_t count() const { return items.size(); }
  void merge(const Warnings& other) {
    items.insert(items.end(), other.items.begin(), other.items.end());
  }
};

// The group-labeled set D_L, the group-unlabeled set D_U and their splits.
// `labeled_train`/`labeled_holdout` partition `labeled`; `unlabeled_folds`
// partition `unlabeled`. Splits are filled in by populate_splits (or by the
// split_* functions directly); generators return them empty.
struct DatasetBundle {
  std::vector<Sample> labeled;    // attr present on every sample
  std::vector<Sample> unlabeled;  // attr is hidden ground truth only
  bool unlabeled_target_visible = true;  // false in SSL-imbalance mode

  std::vector<int> labeled_train;
  std::vector<int> labeled_holdout;
  std::vector<std::vector<int>> unlabeled_folds;

  std::uint64_t rng_seed = 0;
  int dim = 0;
  int n_classes = 0;
  int n_attrs = 0;

  // Training views never expose the hidden attribute (nor the hidden target
  // in SSL mode); this is the only path training code may use.
  std::vector<UnlabeledView> unlabeled_view(const std::vector<int>& indices) const;
  std::vector<UnlabeledView> unlabeled_view_all() const;
};

std::vector<Sample> gather(const std::vector<Sample>& samples, const std::vector<int>& indices);

}  // namespace ssa
