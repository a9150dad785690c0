#include "ssa/robust.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ssa/util.hpp"

namespace ssa {

std::string to_string(RobustMethod m) {
  switch (m) {
    case RobustMethod::kDro: return "dro";
    case RobustMethod::kContrastive: return "contrastive";
    case RobustMethod::kErm: return "erm";
  }
  throw std::logic_error("unreachable robust method");
}

RobustMethod parse_robust_method(const std::string& s) {
  if (s == "dro") return RobustMethod::kDro;
  if (s == "contrastive") return RobustMethod::kContrastive;
  if (s == "erm") return RobustMethod::kErm;
  throw std::invalid_argument("unknown robust method: " + s);
}

DroState make_dro_state(const std::vector<GroupId>& groups, double eta_q,
                        MissingGroupLoss missing) {
  if (groups.empty()) throw std::invalid_argument("make_dro_state: no groups");
  DroState state;
  state.eta_q = eta_q;
  state.missing = missing;
  for (const GroupId& g : groups) state.group_index.emplace(g, 0);
  int next = 0;
  for (auto& [g, idx] : state.group_index) idx = next++;
  const auto n = static_cast<Eigen::Index>(state.group_index.size());
  state.q = Vector::Constant(n, 1.0 / static_cast<double>(n));
  state.last_loss = Vector::Zero(n);
  return state;
}

void group_dro_step(SoftmaxClassifier& model, DroState& dro, const Matrix& X,
                    const std::vector<int>& labels, const std::vector<GroupId>& groups,
                    const SgdConfig& sgd, Vector& velocity) {
  const auto n = X.rows();
  if (n == 0) throw std::invalid_argument("group_dro_step: empty batch");
  if (static_cast<Eigen::Index>(labels.size()) != n ||
      static_cast<Eigen::Index>(groups.size()) != n)
    throw std::invalid_argument("group_dro_step: batch size mismatch");

  const auto g_count = dro.q.size();
  Vector loss_sum = Vector::Zero(g_count);
  Vector counts = Vector::Zero(g_count);
  Matrix probs = forward_batch(model, X);
  std::vector<int> sample_group(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    auto it = dro.group_index.find(groups[static_cast<std::size_t>(i)]);
    if (it == dro.group_index.end())
      throw std::invalid_argument("group_dro_step: group " +
                                  to_string(groups[static_cast<std::size_t>(i)]) +
                                  " missing from the DRO state");
    sample_group[static_cast<std::size_t>(i)] = it->second;
    loss_sum[it->second] += cross_entropy(probs.row(i).transpose(), labels[static_cast<std::size_t>(i)]);
    counts[it->second] += 1.0;
  }
  Vector group_loss(g_count);
  for (Eigen::Index g = 0; g < g_count; ++g) {
    if (counts[g] > 0.0) {
      group_loss[g] = loss_sum[g] / counts[g];
      dro.last_loss[g] = group_loss[g];
    } else {
      group_loss[g] = dro.missing == MissingGroupLoss::kCarry ? dro.last_loss[g] : 0.0;
    }
  }

  // Exponentiated-gradient ascent on the simplex, then one descent step on
  // the q-weighted loss.
  dro.q = (dro.q.array() * (dro.eta_q * group_loss.array()).exp()).matrix();
  dro.q /= dro.q.sum();

  Vector weights(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int g = sample_group[static_cast<std::size_t>(i)];
    weights[i] = dro.q[g] / counts[g];
  }
  sgd_step(model, grad(model, X, labels, weights), sgd, velocity);
}

void erm_step(SoftmaxClassifier& model, const Matrix& X, const std::vector<int>& labels,
              const SgdConfig& sgd, Vector& velocity) {
  const auto n = X.rows();
  if (n == 0) throw std::invalid_argument("erm_step: empty batch");
  Vector weights = Vector::Constant(n, 1.0 / static_cast<double>(n));
  sgd_step(model, grad(model, X, labels, weights), sgd, velocity);
}

std::map<GroupId, std::vector<int>> group_samples(const std::vector<Sample>& dataset) {
  std::map<GroupId, std::vector<int>> by_group;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (!dataset[i].attr) throw std::invalid_argument("group_samples: sample without attribute");
    by_group[GroupId{dataset[i].y, *dataset[i].attr}].push_back(static_cast<int>(i));
  }
  return by_group;
}

std::optional<ContrastiveBatch> sample_contrastive_batch(
    const Sample& anchor, const std::map<GroupId, std::vector<int>>& by_group,
    int samples_per_group, std::mt19937_64& rng, Warnings* warnings) {
  if (!anchor.attr) throw std::invalid_argument("sample_contrastive_batch: anchor without attribute");
  if (samples_per_group < 2)
    throw std::invalid_argument("sample_contrastive_batch: M must be >= 2");

  ContrastiveBatch batch;
  auto draw_from = [&](const std::vector<int>& members, std::vector<int>& dest) {
    const auto m = static_cast<std::size_t>(samples_per_group);
    if (members.size() >= m) {
      // Partial Fisher-Yates: first M entries of a shuffled copy.
      std::vector<int> pool = members;
      for (std::size_t i = 0; i < m; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
        dest.push_back(pool[i]);
      }
    } else {
      batch.replacement_used = true;
      std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
      for (std::size_t i = 0; i < m; ++i) dest.push_back(members[pick(rng)]);
    }
  };

  for (const auto& [group, members] : by_group) {
    if (members.empty()) continue;
    if (group.y == anchor.y && group.a != *anchor.attr) draw_from(members, batch.positives);
    if (group.y != anchor.y && group.a == *anchor.attr) draw_from(members, batch.negatives);
  }
  if (batch.positives.empty() || batch.negatives.empty()) {
    if (warnings)
      warnings->add("anchor in group " + to_string(GroupId{anchor.y, *anchor.attr}) +
                    " skipped: no eligible positives or negatives");
    return std::nullopt;
  }
  return batch;
}

namespace {

Vector l2_normalized(const Vector& v) {
  const double norm = v.norm();
  return norm > 0.0 ? Vector(v / norm) : v;
}

}  // namespace

double contrastive_loss(const Vector& anchor_repr, const std::vector<Vector>& positives,
                        const std::vector<Vector>& negatives, double temperature) {
  if (positives.empty() || negatives.empty())
    throw std::invalid_argument("contrastive_loss: empty positives or negatives");
  if (temperature <= 0.0) throw std::invalid_argument("contrastive_loss: temperature must be > 0");

  const Vector zi = l2_normalized(anchor_repr);
  std::vector<double> scores;
  scores.reserve(positives.size() + negatives.size());
  for (const Vector& z : positives) scores.push_back(zi.dot(l2_normalized(z)) / temperature);
  for (const Vector& z : negatives) scores.push_back(zi.dot(l2_normalized(z)) / temperature);

  const double max_score = *std::max_element(scores.begin(), scores.end());
  double denom = 0.0;
  for (double s : scores) denom += std::exp(s - max_score);
  const double log_denom = std::log(denom) + max_score;

  double loss = 0.0;
  for (std::size_t i = 0; i < positives.size(); ++i) loss += log_denom - scores[i];
  return loss / static_cast<double>(positives.size());
}

Vector contrastive_grad(const SoftmaxClassifier& model, const Vector& anchor_x,
                        const std::vector<Vector>& positive_xs,
                        const std::vector<Vector>& negative_xs, double temperature) {
  if (positive_xs.empty() || negative_xs.empty())
    throw std::invalid_argument("contrastive_grad: empty positives or negatives");
  // The linear representation is the raw input: constant in the parameters.
  if (model.arch == Arch::kLinear) return Vector::Zero(model.params.size());

  const std::size_t n_pos = positive_xs.size();
  const std::size_t n_all = n_pos + negative_xs.size();
  std::vector<const Vector*> inputs;
  inputs.reserve(n_all + 1);
  for (const Vector& x : positive_xs) inputs.push_back(&x);
  for (const Vector& x : negative_xs) inputs.push_back(&x);
  inputs.push_back(&anchor_x);

  // Forward all representations with the hidden pre-activations kept for the
  // ReLU mask.
  const int h = model.hidden_dim;
  const int d = model.in_dim;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> W1(
      model.params.data(), h, d);
  Eigen::Map<const Vector> b1(model.params.data() + h * d, h);
  std::vector<Vector> pre(n_all + 1), repr(n_all + 1), unit(n_all + 1);
  std::vector<double> norms(n_all + 1);
  for (std::size_t i = 0; i <= n_all; ++i) {
    pre[i] = W1 * (*inputs[i]) + b1;
    repr[i] = pre[i].cwiseMax(0.0);
    norms[i] = repr[i].norm();
    unit[i] = norms[i] > 0.0 ? Vector(repr[i] / norms[i]) : repr[i];
  }
  const Vector& zi = unit[n_all];

  std::vector<double> scores(n_all);
  for (std::size_t j = 0; j < n_all; ++j) scores[j] = zi.dot(unit[j]) / temperature;
  const double max_score = *std::max_element(scores.begin(), scores.end());
  double denom = 0.0;
  for (double s : scores) denom += std::exp(s - max_score);

  // dLoss/dscore_j = softmax_j - 1{j positive}/|B+|.
  std::vector<double> dscore(n_all);
  for (std::size_t j = 0; j < n_all; ++j) {
    dscore[j] = std::exp(scores[j] - max_score) / denom;
    if (j < n_pos) dscore[j] -= 1.0 / static_cast<double>(n_pos);
  }

  // dLoss/dunit for every representation, then back through normalization,
  // ReLU, and the first layer.
  std::vector<Vector> dunit(n_all + 1, Vector::Zero(h));
  for (std::size_t j = 0; j < n_all; ++j) {
    dunit[j] += dscore[j] / temperature * zi;
    dunit[n_all] += dscore[j] / temperature * unit[j];
  }

  Vector grad_params = Vector::Zero(model.params.size());
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> dW1(
      grad_params.data(), h, d);
  Eigen::Map<Vector> db1(grad_params.data() + h * d, h);
  for (std::size_t i = 0; i <= n_all; ++i) {
    if (norms[i] == 0.0) continue;  // flat at the origin
    // z = r/|r|: dL/dr = (I - z z^T)/|r| dL/dz
    Vector drepr = (dunit[i] - unit[i] * unit[i].dot(dunit[i])) / norms[i];
    Vector dpre = (pre[i].array() > 0.0).select(drepr, 0.0);
    dW1 += dpre * inputs[i]->transpose();
    db1 += dpre;
  }
  return grad_params;
}

GroupReport evaluate_groups(const SoftmaxClassifier& model, const std::vector<Sample>& samples) {
  if (samples.empty()) throw std::invalid_argument("evaluate_groups: empty sample set");
  Matrix X(samples.size(), model.in_dim);
  for (std::size_t i = 0; i < samples.size(); ++i) X.row(static_cast<Eigen::Index>(i)) = samples[i].x;
  Matrix probs = forward_batch(model, X);
  std::vector<LabeledPrediction> preds;
  preds.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].attr) throw std::invalid_argument("evaluate_groups: sample without attribute");
    int best = 0;
    for (int j = 1; j < model.out_dim; ++j)
      if (probs(static_cast<Eigen::Index>(i), j) > probs(static_cast<Eigen::Index>(i), best)) best = j;
    preds.push_back(LabeledPrediction{samples[i].y, best, GroupId{samples[i].y, *samples[i].attr}});
  }
  return group_report(preds);
}

RobustResult train_robust(const std::vector<Sample>& train, const std::vector<Sample>& val,
                          const RobustConfig& cfg) {
  if (train.empty()) throw std::invalid_argument("train_robust: empty training set");
  if (val.empty()) throw std::invalid_argument("train_robust: empty validation set");
  const int dim = static_cast<int>(train.front().x.size());
  int n_classes = 0;
  for (const Sample& s : train) n_classes = std::max(n_classes, s.y + 1);
  for (const Sample& s : val) n_classes = std::max(n_classes, s.y + 1);

  RobustResult result;
  result.model = cfg.arch == Arch::kLinear
                     ? make_linear(dim, n_classes, derive_seed(cfg.seed, "robust-init"))
                     : make_mlp(dim, cfg.hidden_dim, n_classes, derive_seed(cfg.seed, "robust-init"));

  // Training groups come from the (pseudo-)attributes of the training set.
  const std::map<GroupId, std::vector<int>> by_group = group_samples(train);
  std::vector<GroupId> group_list;
  for (const auto& [g, members] : by_group) group_list.push_back(g);
  DroState dro = make_dro_state(group_list, cfg.eta_q, cfg.missing_group);

  {
    std::map<GroupId, bool> val_groups;
    for (const Sample& s : val)
      if (s.attr) val_groups[GroupId{s.y, *s.attr}] = true;
    for (const GroupId& g : group_list)
      if (!val_groups.count(g))
        result.warnings.add("validation set lacks group " + to_string(g) +
                            "; excluded from the selection criterion");
  }

  SoftmaxClassifier best = result.model;
  double best_acc = -1.0;
  int best_epoch = 0;
  Vector velocity;
  std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, "robust-shuffle"));
  std::mt19937_64 contrastive_rng(derive_seed(cfg.seed, "contrastive-sampling"));
  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch_size = static_cast<std::size_t>(std::max(1, cfg.sgd.batch_size));

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t end = std::min(order.size(), start + batch_size);
      const std::size_t n = end - start;
      Matrix X(n, dim);
      std::vector<int> labels(n);
      std::vector<GroupId> groups(n);
      for (std::size_t i = 0; i < n; ++i) {
        const Sample& s = train[static_cast<std::size_t>(order[start + i])];
        X.row(static_cast<Eigen::Index>(i)) = s.x;
        labels[i] = s.y;
        groups[i] = GroupId{s.y, *s.attr};
      }
      switch (cfg.method) {
        case RobustMethod::kDro:
          group_dro_step(result.model, dro, X, labels, groups, cfg.sgd, velocity);
          break;
        case RobustMethod::kErm:
          erm_step(result.model, X, labels, cfg.sgd, velocity);
          break;
        case RobustMethod::kContrastive: {
          // (1-w) * CE + w * mean over anchors of the contrastive loss.
          const double w = cfg.contrastive.contrastive_weight;
          Vector weights = Vector::Constant(static_cast<Eigen::Index>(n),
                                            (1.0 - w) / static_cast<double>(n));
          Vector g = grad(result.model, X, labels, weights);
          Vector contr = Vector::Zero(result.model.params.size());
          int anchors_used = 0;
          for (std::size_t i = 0; i < n; ++i) {
            const Sample& anchor = train[static_cast<std::size_t>(order[start + i])];
            auto batch = sample_contrastive_batch(anchor, by_group,
                                                  cfg.contrastive.samples_per_group,
                                                  contrastive_rng, &result.warnings);
            if (!batch) continue;
            std::vector<Vector> pos_x, neg_x;
            pos_x.reserve(batch->positives.size());
            neg_x.reserve(batch->negatives.size());
            for (int idx : batch->positives) pos_x.push_back(train[static_cast<std::size_t>(idx)].x);
            for (int idx : batch->negatives) neg_x.push_back(train[static_cast<std::size_t>(idx)].x);
            contr += contrastive_grad(result.model, anchor.x, pos_x, neg_x,
                                      cfg.contrastive.temperature);
            ++anchors_used;
          }
          if (anchors_used > 0) g += (w / static_cast<double>(anchors_used)) * contr;
          sgd_step(result.model, g, cfg.sgd, velocity);
          break;
        }
      }
    }

    EpochLogEntry entry;
    entry.epoch = epoch;
    const GroupReport report = evaluate_groups(result.model, val);
    entry.average_accuracy = report.average_accuracy;
    entry.worst_group_accuracy = report.worst_group_accuracy;
    entry.worst_group = report.worst_group;
    for (const auto& [g, stats] : report.per_group) entry.per_group_accuracy[g] = stats.recall;
    if (cfg.method == RobustMethod::kDro)
      entry.q.assign(dro.q.data(), dro.q.data() + dro.q.size());
    result.log.push_back(entry);

    // Ties keep the later epoch: with tiny validation sets the worst-group
    // estimate is coarse and additional training decides.
    if (report.worst_group_accuracy >= best_acc) {
      best_acc = report.worst_group_accuracy;
      best = result.model;
      best_epoch = epoch;
    }
  }

  if (cfg.epochs > 0) {
    result.model = std::move(best);
    result.best_val_worst_acc = best_acc;
    result.best_epoch = best_epoch;
  }
  return result;
}

}  // namespace ssa
