#include "ssa/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ssa/datagen.hpp"
#include "ssa/util.hpp"

namespace ssa {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

json group_map_to_json(const std::map<GroupId, double>& m) {
  json out = json::object();
  for (const auto& [g, v] : m) {
    if (is_blocked(v)) out[to_string(g)] = "BLOCKED";
    else out[to_string(g)] = v;
  }
  return out;
}

json group_counts_to_json(const std::map<GroupId, long>& m) {
  json out = json::object();
  for (const auto& [g, v] : m) out[to_string(g)] = v;
  return out;
}

json config_json(const ExperimentConfig& cfg) {
  json out = json::object();
  for (const auto& [k, v] : to_kv(cfg)) out[k] = v;
  return out;
}

void write_trace_file(const std::string& path, const ExperimentConfig& cfg,
                      const AttrTrainResult& result) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << json{{"stage", "config"}, {"config", config_json(cfg)}}.dump() << "\n";
  out << json{{"stage", "labeled_counts"},
              {"counts", group_counts_to_json(result.labeled_counts)}}
             .dump()
      << "\n";
  for (const TraceEntry& e : result.trace) {
    json rec{{"iter", e.iter},
             {"tau", group_map_to_json(e.tau)},
             {"admitted_full", group_counts_to_json(e.admitted_full)},
             {"admitted_batch", group_counts_to_json(e.admitted_batch)},
             {"exceeding_fixed", group_counts_to_json(e.exceeding_fixed)},
             {"pseudo_population", group_counts_to_json(e.pseudo_population)},
             {"budget", e.budget},
             {"holdout_worst_acc", e.holdout_worst_acc}};
    out << rec.dump() << "\n";
  }
}

void write_robust_log(const std::string& path, const ExperimentConfig& cfg,
                      const RobustResult& result) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << json{{"stage", "config"}, {"config", config_json(cfg)}}.dump() << "\n";
  for (const EpochLogEntry& e : result.log) {
    json per_group = json::object();
    for (const auto& [g, v] : e.per_group_accuracy) per_group[to_string(g)] = v;
    json rec{{"epoch", e.epoch},
             {"average_accuracy", e.average_accuracy},
             {"per_group_accuracy", per_group},
             {"worst_group_accuracy", e.worst_group_accuracy},
             {"worst_group", to_string(e.worst_group)},
             {"q", e.q}};
    out << rec.dump() << "\n";
  }
}

json report_json(const GroupReport& report) {
  json per_group = json::object();
  for (const auto& [g, stats] : report.per_group)
    per_group[to_string(g)] = {{"count", stats.count},
                               {"correct", stats.correct},
                               {"recall", stats.recall}};
  return json{{"average_accuracy", report.average_accuracy},
              {"worst_group_accuracy", report.worst_group_accuracy},
              {"worst_group", to_string(report.worst_group)},
              {"per_group", per_group}};
}

json pseudo_report_json(const PseudoGroupReport& report) {
  json recall = json::object();
  for (const auto& [g, stats] : report.recall_per_true_group)
    recall[to_string(g)] = {{"count", stats.count},
                            {"correct", stats.correct},
                            {"recall", stats.recall}};
  return json{{"recall_per_true_group", recall},
              {"pseudo_group_fraction", group_map_to_json(report.pseudo_group_fraction)},
              {"true_group_fraction", group_map_to_json(report.true_group_fraction)},
              {"worst_group_recall", report.worst_group_recall},
              {"worst_recall_group", to_string(report.worst_recall_group)}};
}

DatasetBundle load_or_generate(const ExperimentConfig& cfg, std::uint64_t seed) {
  switch (cfg.dataset_kind) {
    case DatasetKind::kSpurious: {
      SpuriousGenConfig gen = cfg.spurious;
      gen.seed = derive_seed(seed, "dataset");
      return make_spurious_dataset(gen);
    }
    case DatasetKind::kImbalanced: {
      ImbalancedSslConfig gen = cfg.imbalanced;
      gen.seed = derive_seed(seed, "dataset");
      return make_imbalanced_ssl(gen);
    }
    case DatasetKind::kFile: {
      const DatasetFile labeled = read_dataset_file(cfg.file_labeled);
      const DatasetFile unlabeled = read_dataset_file(cfg.file_unlabeled);
      if (labeled.role != DatasetRole::kLabeled)
        throw std::runtime_error("expected a labeled-role file: " + cfg.file_labeled);
      if (labeled.dim != unlabeled.dim)
        throw std::runtime_error("labeled/unlabeled dimension mismatch");
      DatasetBundle bundle;
      bundle.labeled = labeled.samples;
      bundle.unlabeled = unlabeled.samples;
      bundle.dim = labeled.dim;
      bundle.n_classes = labeled.n_classes;
      bundle.n_attrs = labeled.n_attrs;
      bundle.rng_seed = seed;
      // A file-loaded unlabeled set may carry hidden attributes (labeled
      // role) for evaluation, or none at all (unlabeled role).
      bundle.unlabeled_target_visible = true;
      return bundle;
    }
  }
  throw std::logic_error("unreachable dataset kind");
}

std::vector<UnlabeledView> training_views(const DatasetBundle& bundle, int skip_fold) {
  std::vector<int> indices;
  for (std::size_t j = 0; j < bundle.unlabeled_folds.size(); ++j) {
    if (bundle.unlabeled_folds.size() > 1 && static_cast<int>(j) == skip_fold) continue;
    indices.insert(indices.end(), bundle.unlabeled_folds[j].begin(),
                   bundle.unlabeled_folds[j].end());
  }
  std::sort(indices.begin(), indices.end());
  return bundle.unlabeled_view(indices);
}

}  // namespace

Aggregate aggregate(const std::vector<double>& values) {
  Aggregate agg;
  agg.n = static_cast<int>(values.size());
  if (values.empty()) return agg;
  double sum = 0.0;
  for (double v : values) sum += v;
  agg.mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - agg.mean) * (v - agg.mean);
  agg.stddev = std::sqrt(sq / static_cast<double>(values.size()));
  return agg;
}

PipelineResult run_ssa_pipeline(const ExperimentConfig& cfg, const std::string& out_dir,
                                std::ostream* progress) {
  PipelineResult result;
  const bool emit = !out_dir.empty();
  std::ofstream records;
  if (emit) {
    fs::create_directories(out_dir);
    records.open(out_dir + "/records.jsonl");
    if (!records) throw std::runtime_error("cannot open records file under " + out_dir);
    records << json{{"stage", "config"}, {"config", config_json(cfg)}}.dump() << "\n";
  }

  for (std::uint64_t seed : cfg.seeds) {
    SeedOutcome outcome;
    outcome.seed = seed;
    const std::string seed_dir = out_dir + "/seed" + std::to_string(seed);
    try {
      if (progress) *progress << "[seed " << seed << "] preparing data\n";
      DatasetBundle bundle = load_or_generate(cfg, seed);
      bundle.labeled = subsample_labeled(bundle.labeled, cfg.labeled_fraction,
                                         derive_seed(seed, "fraction"));
      if (cfg.k_folds == 1) {
        auto [train, holdout] = split_labeled(bundle.labeled, derive_seed(seed, "splits"),
                                              &outcome.warnings);
        bundle.labeled_train = std::move(train);
        bundle.labeled_holdout = std::move(holdout);
        std::vector<int> all(bundle.unlabeled.size());
        std::iota(all.begin(), all.end(), 0);
        bundle.unlabeled_folds = {all};
      } else {
        populate_splits(bundle, cfg.k_folds, derive_seed(seed, "splits"), &outcome.warnings);
      }

      const std::vector<Sample> labeled_train = gather(bundle.labeled, bundle.labeled_train);
      const std::vector<Sample> labeled_holdout = gather(bundle.labeled, bundle.labeled_holdout);

      std::vector<Sample> phase2_train;
      if (cfg.ground_truth_attrs) {
        // Supervised reference: phase 2 runs directly on the hidden
        // ground-truth attributes.
        phase2_train = bundle.unlabeled;
      } else {
        if (emit) fs::create_directories(seed_dir);
        std::vector<SoftmaxClassifier> fold_models;
        std::vector<double> fold_accs;
        for (int k = 0; k < static_cast<int>(bundle.unlabeled_folds.size()); ++k) {
          if (progress) *progress << "[seed " << seed << "] phase 1, fold " << k << "\n";
          PseudoLabelConfig fold_cfg = cfg.pseudo;
          fold_cfg.sgd.seed = derive_seed(seed, "phase1-fold-" + std::to_string(k));
          AttrTrainResult fold = train_attr_predictor(labeled_train, training_views(bundle, k),
                                                      labeled_holdout, bundle.n_attrs, fold_cfg);
          outcome.warnings.merge(fold.warnings);
          fold_accs.push_back(fold.best_holdout_worst_acc);
          if (emit)
            write_trace_file(seed_dir + "/fold" + std::to_string(k) + "_trace.jsonl", cfg, fold);
          if (records.is_open())
            records << json{{"stage", "phase1"},
                            {"seed", seed},
                            {"fold", k},
                            {"best_holdout_worst_acc", fold.best_holdout_worst_acc},
                            {"best_iter", fold.best_iter},
                            {"recomputations", fold.trace.size()},
                            {"warnings", fold.warnings.count()}}
                           .dump()
                    << "\n";
          fold_models.push_back(std::move(fold.model));
          outcome.fold_results.push_back(std::move(fold));
        }
        outcome.phase1_mean_holdout_worst = aggregate(fold_accs).mean;

        const PseudoLabeledSet pseudo = finalize_labels(fold_models, bundle);
        outcome.pseudo_report = pseudo_group_report(pseudo, bundle.unlabeled);
        if (records.is_open())
          records << json{{"stage", "pseudo_report"},
                          {"seed", seed},
                          {"report", pseudo_report_json(outcome.pseudo_report)}}
                         .dump()
                  << "\n";
        if (emit) {
          DatasetFile file;
          file.role = DatasetRole::kPseudoLabeled;
          file.dim = bundle.dim;
          file.n_classes = bundle.n_classes;
          file.n_attrs = bundle.n_attrs;
          file.samples = pseudo.samples;
          file.source_fold = pseudo.source_fold;
          write_dataset_file(seed_dir + "/pseudo_labeled.txt", file);
        }
        phase2_train = pseudo.samples;
      }

      if (progress) *progress << "[seed " << seed << "] phase 2 (" << to_string(cfg.robust.method)
                              << ")\n";
      RobustConfig robust_cfg = cfg.robust;
      robust_cfg.seed = derive_seed(seed, "phase2");
      outcome.robust_result = train_robust(phase2_train, bundle.labeled, robust_cfg);
      outcome.warnings.merge(outcome.robust_result.warnings);
      if (emit) {
        fs::create_directories(seed_dir);
        write_robust_log(seed_dir + "/robust_log.jsonl", cfg, outcome.robust_result);
        save_checkpoint_file(seed_dir + "/phase2_model.txt", outcome.robust_result.model, seed);
      }
      outcome.val_report = evaluate_groups(outcome.robust_result.model, bundle.labeled);

      SpuriousGenConfig test_gen = cfg.spurious;
      std::vector<Sample> test_set;
      if (cfg.dataset_kind == DatasetKind::kSpurious) {
        test_set = sample_spurious(test_gen, cfg.test_n, derive_seed(seed, "test"));
      } else if (cfg.dataset_kind == DatasetKind::kImbalanced) {
        test_set = sample_ssl_test(cfg.imbalanced, cfg.ssl_test_per_class,
                                   derive_seed(seed, "test"));
      } else {
        // File datasets have no generator; reuse the labeled set as the
        // held-out evaluation set.
        test_set = bundle.labeled;
      }
      outcome.test_report = evaluate_groups(outcome.robust_result.model, test_set);
      if (records.is_open()) {
        records << json{{"stage", "phase2"},
                        {"seed", seed},
                        {"best_epoch", outcome.robust_result.best_epoch},
                        {"best_val_worst_acc", outcome.robust_result.best_val_worst_acc},
                        {"val", report_json(outcome.val_report)}}
                       .dump()
                << "\n";
        records << json{{"stage", "test"},
                        {"seed", seed},
                        {"report", report_json(outcome.test_report)},
                        {"warnings", outcome.warnings.count()}}
                       .dump()
                << "\n";
      }
    } catch (const std::exception& e) {
      outcome.failed = true;
      outcome.error = e.what();
      if (records.is_open())
        records << json{{"stage", "error"}, {"seed", seed}, {"error", outcome.error}}.dump()
                << "\n";
      if (progress) *progress << "[seed " << seed << "] failed: " << outcome.error << "\n";
    }
    result.per_seed.push_back(std::move(outcome));
  }

  std::vector<double> worsts, avgs;
  for (const SeedOutcome& o : result.per_seed) {
    if (o.failed) continue;
    worsts.push_back(o.test_report.worst_group_accuracy);
    avgs.push_back(o.test_report.average_accuracy);
  }
  result.worst_group_acc = aggregate(worsts);
  result.average_acc = aggregate(avgs);

  if (records.is_open()) {
    records << json{{"stage", "summary"},
                    {"seeds_completed", result.worst_group_acc.n},
                    {"seeds_total", cfg.seeds.size()},
                    {"test_worst_group_acc",
                     {{"mean", result.worst_group_acc.mean}, {"std", result.worst_group_acc.stddev}}},
                    {"test_average_acc",
                     {{"mean", result.average_acc.mean}, {"std", result.average_acc.stddev}}}}
                   .dump()
            << "\n";
  }
  if (emit) {
    std::ofstream summary(out_dir + "/summary.txt");
    summary << "SSA pipeline summary\n";
    summary << "seeds completed: " << result.worst_group_acc.n << "/" << cfg.seeds.size() << "\n";
    char buf[160];
    std::snprintf(buf, sizeof(buf), "test worst-group acc: %.4f +/- %.4f\n",
                  result.worst_group_acc.mean, result.worst_group_acc.stddev);
    summary << buf;
    std::snprintf(buf, sizeof(buf), "test average acc:     %.4f +/- %.4f\n", result.average_acc.mean,
                  result.average_acc.stddev);
    summary << buf;
    for (const SeedOutcome& o : result.per_seed) {
      if (o.failed) {
        summary << "  seed " << o.seed << ": FAILED (" << o.error << ")\n";
      } else {
        std::snprintf(buf, sizeof(buf), "  seed %llu: worst %.4f avg %.4f (worst group %s)\n",
                      static_cast<unsigned long long>(o.seed), o.test_report.worst_group_accuracy,
                      o.test_report.average_accuracy, to_string(o.test_report.worst_group).c_str());
        summary << buf;
      }
    }
  }
  return result;
}

SslResult run_ssl_imbalance(const ExperimentConfig& cfg, const std::string& out_dir,
                            std::ostream* progress) {
  SslResult result;
  const bool emit = !out_dir.empty();
  std::ofstream records;
  if (emit) {
    fs::create_directories(out_dir);
    records.open(out_dir + "/records.jsonl");
    if (!records) throw std::runtime_error("cannot open records file under " + out_dir);
    records << json{{"stage", "config"}, {"config", config_json(cfg)}}.dump() << "\n";
  }

  std::map<std::string, std::vector<double>> bacc_values, gm_values;
  for (std::uint64_t seed : cfg.seeds) {
    SslSeedOutcome outcome;
    outcome.seed = seed;
    try {
      ImbalancedSslConfig gen = cfg.imbalanced;
      gen.seed = derive_seed(seed, "dataset");
      DatasetBundle bundle = make_imbalanced_ssl(gen);
      auto [train_idx, holdout_idx] =
          split_labeled(bundle.labeled, derive_seed(seed, "splits"), &outcome.warnings);
      const std::vector<Sample> labeled_train = gather(bundle.labeled, train_idx);
      const std::vector<Sample> labeled_holdout = gather(bundle.labeled, holdout_idx);
      const std::vector<UnlabeledView> unlabeled_views = bundle.unlabeled_view_all();
      const std::vector<Sample> test_set =
          sample_ssl_test(cfg.imbalanced, cfg.ssl_test_per_class, derive_seed(seed, "ssl-test"));

      auto evaluate_arm = [&](const SoftmaxClassifier& model) {
        std::vector<ClassPrediction> preds;
        preds.reserve(test_set.size());
        Matrix X(test_set.size(), model.in_dim);
        for (std::size_t i = 0; i < test_set.size(); ++i)
          X.row(static_cast<Eigen::Index>(i)) = test_set[i].x;
        Matrix probs = forward_batch(model, X);
        for (std::size_t i = 0; i < test_set.size(); ++i) {
          int best = 0;
          for (int j = 1; j < model.out_dim; ++j)
            if (probs(static_cast<Eigen::Index>(i), j) > probs(static_cast<Eigen::Index>(i), best))
              best = j;
          preds.push_back(ClassPrediction{test_set[i].y, best});
        }
        return std::pair<double, double>{balanced_accuracy(preds), geometric_mean_score(preds)};
      };

      auto run_arm = [&](const std::string& name, const std::vector<Sample>& lab,
                         const std::vector<UnlabeledView>& unlab, bool use_unsup, bool adaptive) {
        if (progress) *progress << "[seed " << seed << "] ssl arm " << name << "\n";
        PseudoLabelConfig arm_cfg = cfg.pseudo;
        arm_cfg.use_unsup = use_unsup;
        arm_cfg.adaptive = adaptive;
        arm_cfg.sgd.seed = derive_seed(seed, "ssl-arm");
        AttrTrainResult trained =
            train_attr_predictor(lab, unlab, labeled_holdout, bundle.n_attrs, arm_cfg);
        outcome.warnings.merge(trained.warnings);
        const auto [bacc, gm] = evaluate_arm(trained.model);
        outcome.arms.push_back(SslArmOutcome{name, bacc, gm});
        bacc_values[name].push_back(bacc);
        gm_values[name].push_back(gm);
        if (records.is_open())
          records << json{{"stage", "ssl_arm"},
                          {"seed", seed},
                          {"arm", name},
                          {"bacc", bacc},
                          {"gm", gm},
                          {"best_holdout_worst_acc", trained.best_holdout_worst_acc}}
                         .dump()
                  << "\n";
      };

      const std::vector<UnlabeledView> no_unlabeled;
      run_arm("vanilla", labeled_train, no_unlabeled, false, true);
      run_arm("fixed", labeled_train, unlabeled_views, true, false);
      run_arm("adaptive", labeled_train, unlabeled_views, true, true);
      // Oracle: all hidden labels revealed, purely supervised.
      std::vector<Sample> oracle_train = labeled_train;
      oracle_train.insert(oracle_train.end(), bundle.unlabeled.begin(), bundle.unlabeled.end());
      run_arm("oracle", oracle_train, no_unlabeled, false, true);
    } catch (const std::exception& e) {
      outcome.failed = true;
      outcome.error = e.what();
      if (records.is_open())
        records << json{{"stage", "error"}, {"seed", seed}, {"error", outcome.error}}.dump()
                << "\n";
      if (progress) *progress << "[seed " << seed << "] failed: " << outcome.error << "\n";
    }
    result.per_seed.push_back(std::move(outcome));
  }

  for (const auto& [arm, values] : bacc_values) result.bacc[arm] = aggregate(values);
  for (const auto& [arm, values] : gm_values) result.gm[arm] = aggregate(values);

  if (records.is_open()) {
    json arms = json::object();
    for (const auto& [arm, agg] : result.bacc)
      arms[arm] = {{"bacc_mean", agg.mean},
                   {"bacc_std", agg.stddev},
                   {"gm_mean", result.gm.at(arm).mean},
                   {"gm_std", result.gm.at(arm).stddev}};
    records << json{{"stage", "summary"}, {"arms", arms}}.dump() << "\n";
  }
  if (emit) {
    std::ofstream summary(out_dir + "/summary.txt");
    summary << "SSL class-imbalance summary (bACC / GM, mean +/- std over seeds)\n";
    for (const std::string arm : {"vanilla", "fixed", "adaptive", "oracle"}) {
      if (!result.bacc.count(arm)) continue;
      char buf[160];
      std::snprintf(buf, sizeof(buf), "  %-9s %.4f +/- %.4f / %.4f +/- %.4f\n", arm.c_str(),
                    result.bacc.at(arm).mean, result.bacc.at(arm).stddev, result.gm.at(arm).mean,
                    result.gm.at(arm).stddev);
      summary << buf;
    }
  }
  return result;
}

std::string summarize_records_file(const std::string& records_path) {
  std::ifstream in(records_path);
  if (!in) throw std::runtime_error("cannot open: " + records_path);
  std::ostringstream out;
  std::string line;
  out << "records: " << records_path << "\n";
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json rec = json::parse(line);
    const std::string stage = rec.value("stage", "");
    if (stage == "test") {
      const auto& report = rec.at("report");
      char buf[160];
      std::snprintf(buf, sizeof(buf), "  seed %-4llu test: worst %.4f avg %.4f (worst group %s)\n",
                    static_cast<unsigned long long>(rec.value("seed", 0ULL)),
                    report.value("worst_group_accuracy", 0.0),
                    report.value("average_accuracy", 0.0),
                    report.value("worst_group", std::string("?")).c_str());
      out << buf;
    } else if (stage == "ssl_arm") {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "  seed %-4llu arm %-9s bACC %.4f GM %.4f\n",
                    static_cast<unsigned long long>(rec.value("seed", 0ULL)),
                    rec.value("arm", std::string("?")).c_str(), rec.value("bacc", 0.0),
                    rec.value("gm", 0.0));
      out << buf;
    } else if (stage == "summary") {
      if (rec.contains("test_worst_group_acc")) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "summary: worst %.4f +/- %.4f, avg %.4f +/- %.4f\n",
                      rec.at("test_worst_group_acc").value("mean", 0.0),
                      rec.at("test_worst_group_acc").value("std", 0.0),
                      rec.at("test_average_acc").value("mean", 0.0),
                      rec.at("test_average_acc").value("std", 0.0));
        out << buf;
      }
      if (rec.contains("arms")) {
        for (const auto& [arm, agg] : rec.at("arms").items()) {
          char buf[160];
          std::snprintf(buf, sizeof(buf), "summary arm %-9s bACC %.4f +/- %.4f GM %.4f +/- %.4f\n",
                        arm.c_str(), agg.value("bacc_mean", 0.0), agg.value("bacc_std", 0.0),
                        agg.value("gm_mean", 0.0), agg.value("gm_std", 0.0));
          out << buf;
        }
      }
    } else if (stage == "error") {
      out << "  seed " << rec.value("seed", 0ULL) << " FAILED: "
          << rec.value("error", std::string("?")) << "\n";
    }
  }
  return out.str();
}

}  // namespace ssa
