#include "ssa/pseudolabel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "ssa/util.hpp"

namespace ssa {

namespace {

// Deterministic cyclic mini-batch sampler: shuffles once per pass.
class BatchCycler {
 public:
  BatchCycler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    std::iota(order_.begin(), order_.end(), 0);
    reshuffle();
  }

  std::vector<int> next(std::size_t batch_size) {
    std::vector<int> batch;
    if (order_.empty()) return batch;
    batch.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
      if (pos_ == order_.size()) reshuffle();
      batch.push_back(order_[pos_++]);
    }
    return batch;
  }

 private:
  void reshuffle() {
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
  }
  std::vector<int> order_;
  std::mt19937_64 rng_;
  std::size_t pos_ = 0;
};

GroupId pseudo_group_of(const UnlabeledView& view, int pseudo_attr) {
  // With the target hidden (SSL mode) the prediction itself defines the group.
  return view.y ? GroupId{*view.y, pseudo_attr} : GroupId{pseudo_attr, pseudo_attr};
}

int argmax_lowest(const Vector& probs) {
  int best = 0;
  for (int j = 1; j < probs.size(); ++j)
    if (probs[j] > probs[best]) best = j;
  return best;
}

}  // namespace

GroupId compute_g_min(const std::map<GroupId, long>& labeled_counts) {
  if (labeled_counts.empty()) throw std::invalid_argument("compute_g_min: empty group counts");
  bool any_positive = false;
  GroupId best;
  long best_count = 0;
  bool first = true;
  for (const auto& [group, count] : labeled_counts) {
    if (count >= 1) any_positive = true;
    if (first || count < best_count) {  // map order breaks ties lexicographically
      best = group;
      best_count = count;
      first = false;
    }
  }
  if (!any_positive) throw std::invalid_argument("compute_g_min: all group counts are zero");
  return best;
}

std::vector<PseudoPrediction> predict_unlabeled(const SoftmaxClassifier& model,
                                                const std::vector<UnlabeledView>& unlabeled) {
  std::vector<PseudoPrediction> preds;
  preds.reserve(unlabeled.size());
  if (unlabeled.empty()) return preds;
  Matrix X(unlabeled.size(), model.in_dim);
  for (std::size_t i = 0; i < unlabeled.size(); ++i) X.row(static_cast<Eigen::Index>(i)) = *unlabeled[i].x;
  Matrix probs = forward_batch(model, X);
  for (std::size_t i = 0; i < unlabeled.size(); ++i) {
    const Vector row = probs.row(static_cast<Eigen::Index>(i)).transpose();
    const int attr = argmax_lowest(row);
    preds.push_back(PseudoPrediction{static_cast<int>(i), attr, row[attr],
                                     pseudo_group_of(unlabeled[i], attr)});
  }
  return preds;
}

ThresholdTable compute_thresholds(const std::map<GroupId, long>& labeled_counts,
                                  const std::vector<PseudoPrediction>& preds, double tau_g_min) {
  if (tau_g_min <= 0.0 || tau_g_min > 1.0)
    throw std::invalid_argument("compute_thresholds: tau_g_min must lie in (0,1]");
  ThresholdTable table;
  table.g_min = compute_g_min(labeled_counts);
  table.tau_g_min = tau_g_min;

  std::map<GroupId, std::vector<double>> confs;
  for (const auto& p : preds) confs[p.pseudo_group].push_back(p.confidence);

  long g_min_admitted = 0;
  if (auto it = confs.find(table.g_min); it != confs.end())
    for (double c : it->second)
      if (c >= tau_g_min) ++g_min_admitted;
  table.budget = labeled_counts.at(table.g_min) + g_min_admitted;
  table.tau[table.g_min] = tau_g_min;

  // Union of groups seen in the labeled counts and in the predictions;
  // groups absent from the labeled counts count as zero labeled samples.
  std::map<GroupId, long> all_groups;
  for (const auto& [g, c] : labeled_counts) all_groups[g] = c;
  for (const auto& [g, list] : confs) all_groups.emplace(g, 0);

  for (const auto& [group, labeled] : all_groups) {
    if (group == table.g_min) continue;
    const long allowed = table.budget - labeled;  // admitted unlabeled cap
    auto it = confs.find(group);
    if (allowed <= 0 || it == confs.end()) {
      table.tau[group] = kBlockedThreshold;
      continue;
    }
    // Smallest distinct confidence whose admission count (ties included)
    // stays within the cap; scanning descending keeps it O(n log n).
    std::vector<double>& sorted = it->second;
    std::sort(sorted.begin(), sorted.end(), std::greater<double>());
    double chosen = kBlockedThreshold;
    std::size_t i = 0;
    while (i < sorted.size()) {
      std::size_t j = i;
      while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
      if (static_cast<long>(j + 1) > allowed) break;  // this tie block overflows the cap
      chosen = sorted[i];
      i = j + 1;
    }
    table.tau[group] = chosen;
  }
  return table;
}

ThresholdTable make_fixed_table(const std::map<GroupId, long>& labeled_counts,
                                const std::vector<PseudoPrediction>& preds, double tau,
                                int n_classes, int n_attrs) {
  ThresholdTable table;
  table.g_min = compute_g_min(labeled_counts);
  table.tau_g_min = tau;
  long g_min_admitted = 0;
  for (const auto& p : preds)
    if (p.pseudo_group == table.g_min && p.confidence >= tau) ++g_min_admitted;
  table.budget = labeled_counts.at(table.g_min) + g_min_admitted;
  for (int y = 0; y < n_classes; ++y)
    for (int a = 0; a < n_attrs; ++a) table.tau[GroupId{y, a}] = tau;
  return table;
}

std::map<GroupId, long> count_groups(const std::vector<Sample>& labeled) {
  std::map<GroupId, long> counts;
  for (const Sample& s : labeled) {
    if (!s.attr) throw std::invalid_argument("count_groups: sample without attribute annotation");
    ++counts[GroupId{s.y, *s.attr}];
  }
  return counts;
}

std::map<GroupId, long> admitted_counts(const std::vector<PseudoPrediction>& preds,
                                        const ThresholdTable& table) {
  std::map<GroupId, long> counts;
  for (const auto& [group, tau] : table.tau) counts[group] = 0;
  for (const auto& p : preds)
    if (p.confidence >= table.threshold_for(p.pseudo_group)) ++counts[p.pseudo_group];
  return counts;
}

double sup_loss(const SoftmaxClassifier& model, const std::vector<Sample>& batch,
                Warnings* warnings) {
  if (batch.empty()) {
    if (warnings) warnings->add("sup_loss: empty labeled batch, contributing 0");
    return 0.0;
  }
  Matrix X(batch.size(), model.in_dim);
  for (std::size_t i = 0; i < batch.size(); ++i) X.row(static_cast<Eigen::Index>(i)) = batch[i].x;
  Matrix probs = forward_batch(model, X);
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!batch[i].attr) throw std::invalid_argument("sup_loss: sample without attribute");
    total += cross_entropy(probs.row(static_cast<Eigen::Index>(i)).transpose(), *batch[i].attr);
  }
  return total / static_cast<double>(batch.size());
}

double unsup_loss(const SoftmaxClassifier& model, const std::vector<UnlabeledView>& batch,
                  const ThresholdTable& table) {
  if (batch.empty()) return 0.0;
  const auto preds = predict_unlabeled(model, batch);
  Matrix X(batch.size(), model.in_dim);
  for (std::size_t i = 0; i < batch.size(); ++i) X.row(static_cast<Eigen::Index>(i)) = *batch[i].x;
  Matrix probs = forward_batch(model, X);
  double total = 0.0;
  for (const auto& p : preds) {
    if (p.confidence < table.threshold_for(p.pseudo_group)) continue;
    total += cross_entropy(probs.row(p.sample_idx).transpose(), p.pseudo_attr);
  }
  return total / static_cast<double>(batch.size());
}

double total_loss(const SoftmaxClassifier& model, const std::vector<Sample>& labeled_batch,
                  const std::vector<UnlabeledView>& unlabeled_batch, const ThresholdTable& table,
                  Warnings* warnings) {
  return sup_loss(model, labeled_batch, warnings) + unsup_loss(model, unlabeled_batch, table);
}

double holdout_worst_group_acc(const SoftmaxClassifier& model, const std::vector<Sample>& holdout,
                               Warnings* warnings) {
  if (holdout.empty()) {
    if (warnings) warnings->add("holdout evaluation: empty holdout set");
    return 0.0;
  }
  Matrix X(holdout.size(), model.in_dim);
  for (std::size_t i = 0; i < holdout.size(); ++i) X.row(static_cast<Eigen::Index>(i)) = holdout[i].x;
  Matrix probs = forward_batch(model, X);
  std::map<GroupId, std::pair<long, long>> stats;  // group -> (count, correct)
  for (std::size_t i = 0; i < holdout.size(); ++i) {
    if (!holdout[i].attr) throw std::invalid_argument("holdout sample without attribute");
    const Vector row = probs.row(static_cast<Eigen::Index>(i)).transpose();
    auto& [count, correct] = stats[GroupId{holdout[i].y, *holdout[i].attr}];
    ++count;
    if (argmax_lowest(row) == *holdout[i].attr) ++correct;
  }
  double worst = 1.0;
  for (const auto& [group, cc] : stats)
    worst = std::min(worst, static_cast<double>(cc.second) / static_cast<double>(cc.first));
  return worst;
}

AttrTrainResult train_attr_predictor(const std::vector<Sample>& labeled_train,
                                     const std::vector<UnlabeledView>& unlabeled_train,
                                     const std::vector<Sample>& labeled_holdout, int n_attrs,
                                     const PseudoLabelConfig& cfg) {
  if (labeled_train.empty()) throw std::invalid_argument("train_attr_predictor: empty labeled set");
  if (cfg.use_unsup && unlabeled_train.empty())
    throw std::invalid_argument("train_attr_predictor: empty unlabeled set");
  if (cfg.recompute_every < 1)
    throw std::invalid_argument("train_attr_predictor: recompute_every must be >= 1");
  if (n_attrs < 2) throw std::invalid_argument("train_attr_predictor: need >= 2 attributes");

  const int dim = static_cast<int>(labeled_train.front().x.size());
  AttrTrainResult result;
  result.labeled_counts = count_groups(labeled_train);
  result.model = cfg.arch == Arch::kLinear
                     ? make_linear(dim, n_attrs, derive_seed(cfg.sgd.seed, "attr-init"))
                     : make_mlp(dim, cfg.hidden_dim, n_attrs, derive_seed(cfg.sgd.seed, "attr-init"));

  // Which classes does the pseudo-group space span? With hidden targets the
  // group is (a_hat, a_hat), so the class axis is the attribute axis.
  const bool targets_visible = !unlabeled_train.empty() && unlabeled_train.front().y.has_value();
  int n_classes = n_attrs;
  if (targets_visible) {
    int max_y = 0;
    for (const auto& v : unlabeled_train) max_y = std::max(max_y, v.y.value_or(0));
    for (const auto& s : labeled_train) max_y = std::max(max_y, s.y);
    n_classes = max_y + 1;
  }

  // Groups never seen in the holdout are excluded from selection once.
  const bool have_holdout = !labeled_holdout.empty();
  if (!have_holdout) {
    result.warnings.add("empty holdout: selection falls back to the final iterate");
  } else {
    std::map<GroupId, long> holdout_counts;
    for (const Sample& s : labeled_holdout)
      if (s.attr) ++holdout_counts[GroupId{s.y, *s.attr}];
    for (const auto& [group, count] : result.labeled_counts)
      if (!holdout_counts.count(group))
        result.warnings.add("holdout lacks group " + to_string(group) +
                            "; excluded from the selection criterion");
  }

  SoftmaxClassifier best = result.model;
  double best_acc = -1.0;
  long best_iter = 0;
  Vector velocity;
  BatchCycler labeled_cycler(labeled_train.size(), derive_seed(cfg.sgd.seed, "labeled-batches"));
  BatchCycler unlabeled_cycler(unlabeled_train.size(), derive_seed(cfg.sgd.seed, "unlabeled-batches"));

  ThresholdTable table;
  bool have_table = false;
  const std::size_t batch_size = static_cast<std::size_t>(std::max(1, cfg.sgd.batch_size));

  for (long iter = 0; iter < cfg.max_iters; ++iter) {
    // Draw this iteration's mini-batches first so batch-scope thresholds can
    // be computed from the same unlabeled context.
    const auto lab_idx = labeled_cycler.next(batch_size);
    std::vector<Sample> lab_batch;
    lab_batch.reserve(lab_idx.size());
    for (int i : lab_idx) lab_batch.push_back(labeled_train[static_cast<std::size_t>(i)]);

    std::vector<UnlabeledView> unlab_batch;
    if (cfg.use_unsup) {
      const auto unlab_idx = unlabeled_cycler.next(batch_size);
      unlab_batch.reserve(unlab_idx.size());
      for (int i : unlab_idx) unlab_batch.push_back(unlabeled_train[static_cast<std::size_t>(i)]);
    }

    const bool recompute = cfg.use_unsup && (iter % cfg.recompute_every == 0);
    if (recompute) {
      const auto scope_preds = cfg.scope == ThresholdScope::kFullSet
                                   ? predict_unlabeled(result.model, unlabeled_train)
                                   : predict_unlabeled(result.model, unlab_batch);
      table = cfg.adaptive
                  ? compute_thresholds(result.labeled_counts, scope_preds, cfg.tau_g_min)
                  : make_fixed_table(result.labeled_counts, scope_preds, cfg.tau_g_min, n_classes,
                                     n_attrs);
      have_table = true;

      TraceEntry entry;
      entry.iter = iter;
      entry.tau = table.tau;
      entry.budget = table.budget;
      const auto full_preds = cfg.scope == ThresholdScope::kFullSet
                                  ? scope_preds
                                  : predict_unlabeled(result.model, unlabeled_train);
      entry.admitted_full = admitted_counts(full_preds, table);
      entry.admitted_batch = admitted_counts(predict_unlabeled(result.model, unlab_batch), table);
      for (const auto& p : full_preds) {
        ++entry.pseudo_population[p.pseudo_group];
        if (p.confidence >= cfg.tau_g_min) ++entry.exceeding_fixed[p.pseudo_group];
        else entry.exceeding_fixed.emplace(p.pseudo_group, 0);
      }
      entry.holdout_worst_acc = holdout_worst_group_acc(result.model, labeled_holdout, nullptr);
      result.trace.push_back(std::move(entry));

      // Ties keep the later iterate (coarse worst-group estimates on small
      // holdouts plateau early; extra training decides).
      if (have_holdout && result.trace.back().holdout_worst_acc >= best_acc) {
        best_acc = result.trace.back().holdout_worst_acc;
        best = result.model;
        best_iter = iter;
      }
    }

    // Gradient of sup mean + unsup thresholded mean in one weighted batch.
    const std::size_t n_lab = lab_batch.size();
    std::vector<PseudoPrediction> unlab_preds;
    if (cfg.use_unsup && !unlab_batch.empty()) unlab_preds = predict_unlabeled(result.model, unlab_batch);

    const std::size_t rows = n_lab + unlab_preds.size();
    Matrix X(rows, dim);
    std::vector<int> labels(rows);
    Vector weights(rows);
    for (std::size_t i = 0; i < n_lab; ++i) {
      X.row(static_cast<Eigen::Index>(i)) = lab_batch[i].x;
      labels[i] = *lab_batch[i].attr;
      weights[static_cast<Eigen::Index>(i)] = 1.0 / static_cast<double>(n_lab);
    }
    for (std::size_t i = 0; i < unlab_preds.size(); ++i) {
      const auto& p = unlab_preds[i];
      const std::size_t row = n_lab + i;
      X.row(static_cast<Eigen::Index>(row)) = *unlab_batch[static_cast<std::size_t>(p.sample_idx)].x;
      labels[row] = p.pseudo_attr;
      const bool admitted = have_table && p.confidence >= table.threshold_for(p.pseudo_group);
      weights[static_cast<Eigen::Index>(row)] =
          admitted ? 1.0 / static_cast<double>(unlab_batch.size()) : 0.0;
    }
    const Vector g = grad(result.model, X, labels, weights);
    sgd_step(result.model, g, cfg.sgd, velocity);
  }

  // The final state competes for selection too.
  const double final_acc =
      have_holdout ? holdout_worst_group_acc(result.model, labeled_holdout, nullptr) : 0.0;
  if (!have_holdout || final_acc >= best_acc) {
    best_acc = final_acc;
    best = result.model;
    best_iter = cfg.max_iters;
  }

  result.model = std::move(best);
  result.best_holdout_worst_acc = std::max(best_acc, 0.0);
  result.best_iter = best_iter;
  return result;
}

PseudoLabeledSet finalize_labels(const std::vector<SoftmaxClassifier>& models,
                                 const DatasetBundle& bundle) {
  if (models.size() != bundle.unlabeled_folds.size())
    throw std::invalid_argument("finalize_labels: fold/model count mismatch");
  if (bundle.unlabeled_folds.empty())
    throw std::invalid_argument("finalize_labels: bundle has no folds");

  PseudoLabeledSet out;
  out.samples.resize(bundle.unlabeled.size());
  out.source_fold.assign(bundle.unlabeled.size(), -1);
  for (std::size_t k = 0; k < models.size(); ++k) {
    const auto& fold = bundle.unlabeled_folds[k];
    const auto views = bundle.unlabeled_view(fold);
    const auto preds = predict_unlabeled(models[k], views);
    for (std::size_t i = 0; i < fold.size(); ++i) {
      const int idx = fold[i];
      const int attr = preds[i].pseudo_attr;
      Sample s;
      s.x = bundle.unlabeled[static_cast<std::size_t>(idx)].x;
      // With hidden targets (SSL mode) the pseudo-label stands in for the
      // class itself.
      s.y = views[i].y ? *views[i].y : attr;
      s.attr = attr;
      out.samples[static_cast<std::size_t>(idx)] = std::move(s);
      out.source_fold[static_cast<std::size_t>(idx)] = static_cast<int>(k);
    }
  }
  for (int fold : out.source_fold)
    if (fold < 0) throw std::invalid_argument("finalize_labels: folds do not cover the unlabeled set");
  return out;
}

}  // namespace ssa
