// Phase 1: train the spurious-attribute predictor with the supervised +
// thresholded unsupervised loss, maintain group-wise adaptive confidence
// thresholds, and emit pseudo-labels for every unlabeled sample.
#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <vector>

#include "ssa/model.hpp"
#include "ssa/types.hpp"

namespace ssa {

// A blocked group admits no unlabeled sample; +inf makes the admission test
// `confidence >= tau` admit nothing.
inline constexpr double kBlockedThreshold = std::numeric_limits<double>::infinity();
inline bool is_blocked(double tau) { return tau == kBlockedThreshold; }

struct ThresholdTable {
  std::map<GroupId, double> tau;
  GroupId g_min;
  double tau_g_min = 0.95;
  long budget = 0;  // |D_L(g_min)| + admitted unlabeled count of g_min

  // Pseudo-groups without an entry are blocked.
  double threshold_for(const GroupId& g) const {
    auto it = tau.find(g);
    return it == tau.end() ? kBlockedThreshold : it->second;
  }
};

struct PseudoPrediction {
  int sample_idx = 0;
  int pseudo_attr = 0;     // argmax_a p(a|x), ties toward the lower index
  double confidence = 0.0; // max_a p(a|x)
  GroupId pseudo_group;    // (y, pseudo_attr); (pseudo_attr, pseudo_attr) when y is hidden
};

enum class ThresholdScope { kFullSet, kBatch };

struct PseudoLabelConfig {
  double tau_g_min = 0.95;
  int recompute_every = 1;
  long max_iters = 1000;
  bool adaptive = true;    // false: single fixed threshold tau_g_min
  bool use_unsup = true;   // false: supervised-only training (vanilla arm)
  // Thresholds are recomputed from predictions over the full unlabeled
  // training set by default; kBatch is the per-mini-batch ablation.
  ThresholdScope scope = ThresholdScope::kFullSet;
  Arch arch = Arch::kLinear;
  int hidden_dim = 16;
  SgdConfig sgd;
};

// Group with the minimal labeled count; ties break lexicographically.
GroupId compute_g_min(const std::map<GroupId, long>& labeled_counts);

std::vector<PseudoPrediction> predict_unlabeled(const SoftmaxClassifier& model,
                                                const std::vector<UnlabeledView>& unlabeled);

// Budget B = labeled_counts[g_min] + #{preds of g_min with confidence >=
// tau_g_min}. Every other group receives the smallest order-statistic
// threshold keeping labeled + admitted <= B, or kBlockedThreshold when none
// exists. Groups absent from labeled_counts count as zero labeled samples.
ThresholdTable compute_thresholds(const std::map<GroupId, long>& labeled_counts,
                                  const std::vector<PseudoPrediction>& preds,
                                  double tau_g_min);

// Global fixed threshold over every (y, a) combination.
ThresholdTable make_fixed_table(const std::map<GroupId, long>& labeled_counts,
                                const std::vector<PseudoPrediction>& preds,
                                double tau, int n_classes, int n_attrs);

std::map<GroupId, long> count_groups(const std::vector<Sample>& labeled);
std::map<GroupId, long> admitted_counts(const std::vector<PseudoPrediction>& preds,
                                        const ThresholdTable& table);

// Mean cross-entropy against the ground-truth attribute. Empty batch -> 0
// with a warning.
double sup_loss(const SoftmaxClassifier& model, const std::vector<Sample>& batch,
                Warnings* warnings = nullptr);

// Mean over the batch of 1{confidence >= tau[pseudo-group]} * CE against the
// pseudo-label; the indicator is per-group, never global.
double unsup_loss(const SoftmaxClassifier& model, const std::vector<UnlabeledView>& batch,
                  const ThresholdTable& table);

double total_loss(const SoftmaxClassifier& model, const std::vector<Sample>& labeled_batch,
                  const std::vector<UnlabeledView>& unlabeled_batch,
                  const ThresholdTable& table, Warnings* warnings = nullptr);

// One record per threshold recomputation. admitted_full counts over the full
// unlabeled training set (the sets the thresholds were computed from);
// admitted_batch counts over the mini-batch drawn that iteration;
// exceeding_fixed counts what a plain fixed threshold at tau_g_min would
// admit from the same predictions, for population comparisons.
struct TraceEntry {
  long iter = 0;
  std::map<GroupId, double> tau;
  std::map<GroupId, long> admitted_full;
  std::map<GroupId, long> admitted_batch;
  std::map<GroupId, long> exceeding_fixed;
  std::map<GroupId, long> pseudo_population;  // predictions per pseudo-group
  long budget = 0;
  double holdout_worst_acc = 0.0;
};

struct AttrTrainResult {
  SoftmaxClassifier model;  // checkpoint maximizing holdout worst-group accuracy
  std::vector<TraceEntry> trace;
  std::map<GroupId, long> labeled_counts;
  double best_holdout_worst_acc = 0.0;
  long best_iter = 0;
  Warnings warnings;
};

// Runs max_iters iterations; each draws one labeled and one unlabeled
// mini-batch, recomputes the threshold table every recompute_every
// iterations, and applies one SGD step on the total loss. Selection:
// worst-group attribute accuracy on the holdout (groups missing there are
// excluded with a warning).
AttrTrainResult train_attr_predictor(const std::vector<Sample>& labeled_train,
                                     const std::vector<UnlabeledView>& unlabeled_train,
                                     const std::vector<Sample>& labeled_holdout,
                                     int n_attrs, const PseudoLabelConfig& cfg);

struct PseudoLabeledSet {
  std::vector<Sample> samples;   // index-aligned with the bundle's unlabeled set
  std::vector<int> source_fold;  // which fold's model produced each label
};

// Final labels for all unlabeled samples, no confidence filtering; sample i
// in fold k is labeled by models[k] (the model that held fold k out).
PseudoLabeledSet finalize_labels(const std::vector<SoftmaxClassifier>& models,
                                 const DatasetBundle& bundle);

// Worst-group attribute classification accuracy of `model` on annotated
// samples, grouping by the true (y, a).
double holdout_worst_group_acc(const SoftmaxClassifier& model,
                               const std::vector<Sample>& holdout,
                               Warnings* warnings = nullptr);

}  // namespace ssa
