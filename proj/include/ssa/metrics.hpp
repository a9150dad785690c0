// Evaluation quantities: worst-group / average accuracy, pseudo-group
// population reports, balanced accuracy, geometric-mean score.
#pragma once

#include <map>
#include <vector>

#include "ssa/pseudolabel.hpp"
#include "ssa/types.hpp"

namespace ssa {

struct GroupStats {
  long count = 0;
  long correct = 0;
  double recall = 0.0;
};

struct GroupReport {
  std::map<GroupId, GroupStats> per_group;
  double average_accuracy = 0.0;     // total correct / total count
  double worst_group_accuracy = 0.0; // min recall over groups
  GroupId worst_group;
};

struct LabeledPrediction {
  int true_y = 0;
  int pred_y = 0;
  GroupId group;
};

GroupReport group_report(const std::vector<LabeledPrediction>& predictions);

// Evaluation-only view of a finalized pseudo-labeling run against the hidden
// ground-truth attributes.
struct PseudoGroupReport {
  std::map<GroupId, GroupStats> recall_per_true_group;  // recall of the pseudo-attribute
  std::map<GroupId, double> pseudo_group_fraction;      // population assigned to each pseudo-group
  std::map<GroupId, double> true_group_fraction;
  double worst_group_recall = 0.0;
  GroupId worst_recall_group;
};

PseudoGroupReport pseudo_group_report(const PseudoLabeledSet& pseudo,
                                      const std::vector<Sample>& ground_truth);

struct ClassPrediction {
  int true_class = 0;
  int pred_class = 0;
};

// Arithmetic mean of class-wise recall; every class in [0, C) must appear
// among the true labels.
double balanced_accuracy(const std::vector<ClassPrediction>& predictions);
// Geometric mean of class-wise recall; any zero recall gives 0.
double geometric_mean_score(const std::vector<ClassPrediction>& predictions);

}  // namespace ssa
