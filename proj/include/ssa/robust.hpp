// Phase 2: worst-group-robust training on the pseudo-labeled set. Group DRO
// by default, supervised-contrastive batches as an alternative, ERM as the
// baseline.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ssa/metrics.hpp"
#include "ssa/model.hpp"
#include "ssa/types.hpp"

namespace ssa {

enum class RobustMethod { kDro, kContrastive, kErm };

std::string to_string(RobustMethod m);
RobustMethod parse_robust_method(const std::string& s);

// Strategy for groups absent from a mini-batch: contribute zero loss to the
// q update (stateless default) or carry the previous per-group estimate.
enum class MissingGroupLoss { kZero, kCarry };

struct DroState {
  Vector q;  // adversarial weights on the simplex
  double eta_q = 0.01;
  std::map<GroupId, int> group_index;
  Vector last_loss;  // used by MissingGroupLoss::kCarry
  MissingGroupLoss missing = MissingGroupLoss::kZero;
};

DroState make_dro_state(const std::vector<GroupId>& groups, double eta_q,
                        MissingGroupLoss missing = MissingGroupLoss::kZero);

// Per-group mean loss over the batch; q_g <- q_g * exp(eta_q * l_g),
// renormalized; one SGD step on sum_g q_g * l_g.
void group_dro_step(SoftmaxClassifier& model, DroState& dro, const Matrix& X,
                    const std::vector<int>& labels, const std::vector<GroupId>& groups,
                    const SgdConfig& sgd, Vector& velocity);

// One SGD step on the unweighted mean cross-entropy.
void erm_step(SoftmaxClassifier& model, const Matrix& X, const std::vector<int>& labels,
              const SgdConfig& sgd, Vector& velocity);

struct ContrastiveConfig {
  int samples_per_group = 16;  // M
  double temperature = 0.1;
  double contrastive_weight = 0.75;  // w in (1-w)*CE + w*contrastive
};

struct ContrastiveBatch {
  std::vector<int> positives;  // same target, different attribute
  std::vector<int> negatives;  // different target, same attribute
  bool replacement_used = false;
};

// Groups the pseudo-labeled set by (y, attr); the index drives the batch
// sampler below.
std::map<GroupId, std::vector<int>> group_samples(const std::vector<Sample>& dataset);

// Up to M samples per eligible group, without replacement (with replacement,
// recorded, when the group is smaller than M). Returns nullopt and counts a
// warning when no eligible positives or negatives exist.
std::optional<ContrastiveBatch> sample_contrastive_batch(
    const Sample& anchor, const std::map<GroupId, std::vector<int>>& by_group,
    int samples_per_group, std::mt19937_64& rng, Warnings* warnings = nullptr);

// (1/|B+|) sum_{z+} -log(exp(zi.z+/t) / sum_{z in B+ u B-} exp(zi.z/t));
// representations are L2-normalized before the dot products.
double contrastive_loss(const Vector& anchor_repr, const std::vector<Vector>& positives,
                        const std::vector<Vector>& negatives, double temperature);

// Exact parameter gradient of contrastive_loss evaluated on the model's
// hidden representations of the given inputs (zero for the linear arch,
// whose representation is the raw input).
Vector contrastive_grad(const SoftmaxClassifier& model, const Vector& anchor_x,
                        const std::vector<Vector>& positive_xs,
                        const std::vector<Vector>& negative_xs, double temperature);

struct RobustConfig {
  RobustMethod method = RobustMethod::kDro;
  int epochs = 30;
  SgdConfig sgd;
  double eta_q = 0.01;
  MissingGroupLoss missing_group = MissingGroupLoss::kZero;
  ContrastiveConfig contrastive;
  Arch arch = Arch::kLinear;
  int hidden_dim = 16;
  std::uint64_t seed = 0;
};

struct EpochLogEntry {
  int epoch = 0;
  double average_accuracy = 0.0;
  std::map<GroupId, double> per_group_accuracy;
  double worst_group_accuracy = 0.0;
  GroupId worst_group;
  std::vector<double> q;  // empty for erm/contrastive
};

struct RobustResult {
  SoftmaxClassifier model;  // checkpoint maximizing worst-group accuracy on the validation set
  std::vector<EpochLogEntry> log;
  int best_epoch = 0;  // 0 = initial model (zero epochs)
  double best_val_worst_acc = 0.0;
  Warnings warnings;
};

// Trains on `train` (groups from its pseudo-attributes), selects by
// worst-group target accuracy on `val` (ground-truth attributes). Groups
// missing from `val` are excluded from the criterion with a warning.
RobustResult train_robust(const std::vector<Sample>& train, const std::vector<Sample>& val,
                          const RobustConfig& cfg);

// Target-classification report of `model` on annotated samples, grouped by
// the true (y, a).
GroupReport evaluate_groups(const SoftmaxClassifier& model, const std::vector<Sample>& samples);

}  // namespace ssa
