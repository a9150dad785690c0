#include "ssa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ssa {

GroupReport group_report(const std::vector<LabeledPrediction>& predictions) {
  if (predictions.empty()) throw std::invalid_argument("group_report: no predictions");
  GroupReport report;
  long total_correct = 0;
  for (const auto& p : predictions) {
    auto& stats = report.per_group[p.group];
    ++stats.count;
    if (p.true_y == p.pred_y) {
      ++stats.correct;
      ++total_correct;
    }
  }
  report.average_accuracy =
      static_cast<double>(total_correct) / static_cast<double>(predictions.size());
  bool first = true;
  for (auto& [group, stats] : report.per_group) {
    stats.recall = static_cast<double>(stats.correct) / static_cast<double>(stats.count);
    if (first || stats.recall < report.worst_group_accuracy) {
      report.worst_group_accuracy = stats.recall;
      report.worst_group = group;
      first = false;
    }
  }
  return report;
}

PseudoGroupReport pseudo_group_report(const PseudoLabeledSet& pseudo,
                                      const std::vector<Sample>& ground_truth) {
  if (pseudo.samples.size() != ground_truth.size())
    throw std::invalid_argument("pseudo_group_report: pseudo/ground-truth size mismatch");
  if (pseudo.samples.empty()) throw std::invalid_argument("pseudo_group_report: empty set");

  PseudoGroupReport report;
  std::map<GroupId, long> pseudo_counts, true_counts;
  for (std::size_t i = 0; i < pseudo.samples.size(); ++i) {
    const Sample& labeled = pseudo.samples[i];
    const Sample& truth = ground_truth[i];
    if (!labeled.attr) throw std::invalid_argument("pseudo_group_report: missing pseudo-attribute");
    if (!truth.attr) throw std::invalid_argument("pseudo_group_report: missing ground truth");
    const GroupId true_group{truth.y, *truth.attr};
    auto& stats = report.recall_per_true_group[true_group];
    ++stats.count;
    if (*labeled.attr == *truth.attr) ++stats.correct;
    ++pseudo_counts[GroupId{labeled.y, *labeled.attr}];
    ++true_counts[true_group];
  }
  const double n = static_cast<double>(pseudo.samples.size());
  for (const auto& [group, count] : pseudo_counts)
    report.pseudo_group_fraction[group] = static_cast<double>(count) / n;
  for (const auto& [group, count] : true_counts)
    report.true_group_fraction[group] = static_cast<double>(count) / n;
  bool first = true;
  for (auto& [group, stats] : report.recall_per_true_group) {
    stats.recall = static_cast<double>(stats.correct) / static_cast<double>(stats.count);
    if (first || stats.recall < report.worst_group_recall) {
      report.worst_group_recall = stats.recall;
      report.worst_recall_group = group;
      first = false;
    }
  }
  return report;
}

namespace {

std::vector<double> class_recalls(const std::vector<ClassPrediction>& predictions) {
  if (predictions.empty()) throw std::invalid_argument("class metrics: no predictions");
  int n_classes = 0;
  for (const auto& p : predictions)
    n_classes = std::max({n_classes, p.true_class + 1, p.pred_class + 1});
  std::vector<long> count(static_cast<std::size_t>(n_classes), 0);
  std::vector<long> correct(static_cast<std::size_t>(n_classes), 0);
  for (const auto& p : predictions) {
    ++count[static_cast<std::size_t>(p.true_class)];
    if (p.true_class == p.pred_class) ++correct[static_cast<std::size_t>(p.true_class)];
  }
  std::vector<double> recalls;
  recalls.reserve(static_cast<std::size_t>(n_classes));
  for (int k = 0; k < n_classes; ++k) {
    if (count[static_cast<std::size_t>(k)] == 0)
      throw std::invalid_argument("class metrics: class " + std::to_string(k) +
                                  " missing from the true labels");
    recalls.push_back(static_cast<double>(correct[static_cast<std::size_t>(k)]) /
                      static_cast<double>(count[static_cast<std::size_t>(k)]));
  }
  return recalls;
}

}  // namespace

double balanced_accuracy(const std::vector<ClassPrediction>& predictions) {
  const auto recalls = class_recalls(predictions);
  double sum = 0.0;
  for (double r : recalls) sum += r;
  return sum / static_cast<double>(recalls.size());
}

double geometric_mean_score(const std::vector<ClassPrediction>& predictions) {
  const auto recalls = class_recalls(predictions);
  double product = 1.0;
  for (double r : recalls) {
    if (r == 0.0) return 0.0;
    product *= r;
  }
  return std::pow(product, 1.0 / static_cast<double>(recalls.size()));
}

}  // namespace ssa
