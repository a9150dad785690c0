// Experiment CLI: dataset generation, the two training phases, the full
// pipeline, the class-imbalanced SSL comparison, and report rendering.
#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "ssa/config.hpp"
#include "ssa/datagen.hpp"
#include "ssa/pipeline.hpp"
#include "ssa/pseudolabel.hpp"
#include "ssa/robust.hpp"
#include "ssa/util.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  long seed = -1;  // -1: use the config's seed list
};

ssa::ExperimentConfig load_config(const CommonArgs& args) {
  ssa::KvConfig kv;
  if (!args.config_path.empty()) kv = ssa::KvConfig::parse_file(args.config_path);
  for (const std::string& o : args.overrides) kv.apply_override(o);
  if (args.seed >= 0) kv.set("seeds", std::to_string(args.seed));
  if (!args.out_dir.empty()) kv.set("output_dir", args.out_dir);
  return ssa::resolve_config(kv);
}

void add_common(CLI::App* cmd, CommonArgs* args) {
  cmd->add_option("--config", args->config_path, "flat key=value config file");
  cmd->add_option("--override", args->overrides, "config override key=value (repeatable)");
  cmd->add_option("--out", args->out_dir, "output directory");
  cmd->add_option("--seed", args->seed, "single seed overriding the config's seed list");
}

int cmd_generate(const CommonArgs& args) {
  const ssa::ExperimentConfig cfg = load_config(args);
  fs::create_directories(cfg.output_dir);
  ssa::DatasetBundle bundle;
  if (cfg.dataset_kind == ssa::DatasetKind::kSpurious) {
    ssa::SpuriousGenConfig gen = cfg.spurious;
    gen.seed = ssa::derive_seed(cfg.seeds.front(), "dataset");
    bundle = ssa::make_spurious_dataset(gen);
  } else if (cfg.dataset_kind == ssa::DatasetKind::kImbalanced) {
    ssa::ImbalancedSslConfig gen = cfg.imbalanced;
    gen.seed = ssa::derive_seed(cfg.seeds.front(), "dataset");
    bundle = ssa::make_imbalanced_ssl(gen);
  } else {
    throw std::invalid_argument("generate requires dataset.kind spurious or imbalanced");
  }

  ssa::DatasetFile labeled{ssa::DatasetRole::kLabeled, bundle.dim, bundle.n_classes,
                           bundle.n_attrs, bundle.labeled, {}};
  ssa::write_dataset_file(cfg.output_dir + "/labeled.txt", labeled);

  // Training view: the hidden attribute never reaches the unlabeled file.
  ssa::DatasetFile unlabeled{ssa::DatasetRole::kUnlabeled, bundle.dim, bundle.n_classes,
                             bundle.n_attrs, {}, {}};
  unlabeled.samples.reserve(bundle.unlabeled.size());
  for (const ssa::Sample& s : bundle.unlabeled)
    unlabeled.samples.push_back(ssa::Sample{s.x, s.y, std::nullopt});
  ssa::write_dataset_file(cfg.output_dir + "/unlabeled.txt", unlabeled);

  // Evaluation sidecar with the ground-truth attributes.
  ssa::DatasetFile truth{ssa::DatasetRole::kLabeled, bundle.dim, bundle.n_classes, bundle.n_attrs,
                         bundle.unlabeled, {}};
  ssa::write_dataset_file(cfg.output_dir + "/unlabeled_truth.txt", truth);

  std::cout << "wrote " << bundle.labeled.size() << " labeled and " << bundle.unlabeled.size()
            << " unlabeled samples under " << cfg.output_dir << "\n";
  return 0;
}

int cmd_pseudolabel(const CommonArgs& args) {
  ssa::ExperimentConfig cfg = load_config(args);
  const std::uint64_t seed = cfg.seeds.front();
  fs::create_directories(cfg.output_dir);

  ssa::DatasetBundle bundle;
  if (cfg.dataset_kind == ssa::DatasetKind::kFile) {
    const auto labeled = ssa::read_dataset_file(cfg.file_labeled);
    const auto unlabeled = ssa::read_dataset_file(cfg.file_unlabeled);
    bundle.labeled = labeled.samples;
    bundle.unlabeled = unlabeled.samples;
    bundle.dim = labeled.dim;
    bundle.n_classes = labeled.n_classes;
    bundle.n_attrs = labeled.n_attrs;
  } else if (cfg.dataset_kind == ssa::DatasetKind::kSpurious) {
    ssa::SpuriousGenConfig gen = cfg.spurious;
    gen.seed = ssa::derive_seed(seed, "dataset");
    bundle = ssa::make_spurious_dataset(gen);
  } else {
    ssa::ImbalancedSslConfig gen = cfg.imbalanced;
    gen.seed = ssa::derive_seed(seed, "dataset");
    bundle = ssa::make_imbalanced_ssl(gen);
  }
  bundle.labeled = ssa::subsample_labeled(bundle.labeled, cfg.labeled_fraction,
                                          ssa::derive_seed(seed, "fraction"));
  ssa::Warnings warnings;
  if (cfg.k_folds == 1) {
    auto [train, holdout] = ssa::split_labeled(bundle.labeled, ssa::derive_seed(seed, "splits"),
                                               &warnings);
    bundle.labeled_train = std::move(train);
    bundle.labeled_holdout = std::move(holdout);
    std::vector<int> all(bundle.unlabeled.size());
    std::iota(all.begin(), all.end(), 0);
    bundle.unlabeled_folds = {all};
  } else {
    ssa::populate_splits(bundle, cfg.k_folds, ssa::derive_seed(seed, "splits"), &warnings);
  }

  const auto labeled_train = ssa::gather(bundle.labeled, bundle.labeled_train);
  const auto labeled_holdout = ssa::gather(bundle.labeled, bundle.labeled_holdout);
  std::vector<ssa::SoftmaxClassifier> models;
  for (int k = 0; k < static_cast<int>(bundle.unlabeled_folds.size()); ++k) {
    std::vector<int> train_idx;
    for (int j = 0; j < static_cast<int>(bundle.unlabeled_folds.size()); ++j) {
      if (bundle.unlabeled_folds.size() > 1 && j == k) continue;
      train_idx.insert(train_idx.end(), bundle.unlabeled_folds[j].begin(),
                       bundle.unlabeled_folds[j].end());
    }
    std::sort(train_idx.begin(), train_idx.end());
    ssa::PseudoLabelConfig fold_cfg = cfg.pseudo;
    fold_cfg.sgd.seed = ssa::derive_seed(seed, "phase1-fold-" + std::to_string(k));
    std::cerr << "training fold " << k << " (" << train_idx.size() << " unlabeled samples)\n";
    auto fold = ssa::train_attr_predictor(labeled_train, bundle.unlabeled_view(train_idx),
                                          labeled_holdout, bundle.n_attrs, fold_cfg);
    warnings.merge(fold.warnings);
    models.push_back(std::move(fold.model));
  }
  const ssa::PseudoLabeledSet pseudo = ssa::finalize_labels(models, bundle);
  ssa::DatasetFile out_file{ssa::DatasetRole::kPseudoLabeled, bundle.dim, bundle.n_classes,
                            bundle.n_attrs, pseudo.samples, pseudo.source_fold};
  ssa::write_dataset_file(cfg.output_dir + "/pseudo_labeled.txt", out_file);
  std::cout << "wrote " << pseudo.samples.size() << " pseudo-labeled samples to "
            << cfg.output_dir << "/pseudo_labeled.txt (" << warnings.count() << " warnings)\n";
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& train_path,
              const std::string& val_path) {
  const ssa::ExperimentConfig cfg = load_config(args);
  fs::create_directories(cfg.output_dir);
  const auto train_file = ssa::read_dataset_file(train_path);
  const auto val_file = ssa::read_dataset_file(val_path);
  if (val_file.role == ssa::DatasetRole::kUnlabeled)
    throw std::invalid_argument("validation file must carry attributes");
  ssa::RobustConfig robust_cfg = cfg.robust;
  robust_cfg.seed = ssa::derive_seed(cfg.seeds.front(), "phase2");
  const auto result = ssa::train_robust(train_file.samples, val_file.samples, robust_cfg);
  ssa::save_checkpoint_file(cfg.output_dir + "/phase2_model.txt", result.model, cfg.seeds.front());
  const auto report = ssa::evaluate_groups(result.model, val_file.samples);
  std::cout << "best epoch " << result.best_epoch << ", validation worst-group "
            << report.worst_group_accuracy << ", average " << report.average_accuracy << "\n";
  std::cout << "checkpoint written to " << cfg.output_dir << "/phase2_model.txt\n";
  return 0;
}

int cmd_pipeline(const CommonArgs& args) {
  const ssa::ExperimentConfig cfg = load_config(args);
  const auto result = ssa::run_ssa_pipeline(cfg, cfg.output_dir, &std::cerr);
  std::cout << "test worst-group acc: " << result.worst_group_acc.mean << " +/- "
            << result.worst_group_acc.stddev << " over " << result.worst_group_acc.n
            << " seeds\n";
  std::cout << "test average acc:     " << result.average_acc.mean << " +/- "
            << result.average_acc.stddev << "\n";
  for (const auto& o : result.per_seed)
    if (o.failed) return 1;
  return 0;
}

int cmd_ssl(const CommonArgs& args) {
  ssa::ExperimentConfig cfg = load_config(args);
  cfg.dataset_kind = ssa::DatasetKind::kImbalanced;
  const auto result = ssa::run_ssl_imbalance(cfg, cfg.output_dir, &std::cerr);
  for (const std::string arm : {"vanilla", "fixed", "adaptive", "oracle"}) {
    if (!result.bacc.count(arm)) continue;
    std::cout << arm << ": bACC " << result.bacc.at(arm).mean << " +/- "
              << result.bacc.at(arm).stddev << ", GM " << result.gm.at(arm).mean << " +/- "
              << result.gm.at(arm).stddev << "\n";
  }
  for (const auto& o : result.per_seed)
    if (o.failed) return 1;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spread-spurious-attribute pipeline: group-wise adaptive pseudo-labeling "
               "plus worst-group-robust training"};
  app.require_subcommand(1);

  CommonArgs gen_args, pseudo_args, train_args, pipe_args, ssl_args, report_args;
  std::string train_path, val_path, records_path;

  auto* generate = app.add_subcommand("generate", "generate and export a synthetic dataset");
  add_common(generate, &gen_args);

  auto* pseudolabel =
      app.add_subcommand("pseudolabel", "phase 1: K-fold pseudo-labeling of the attribute");
  add_common(pseudolabel, &pseudo_args);

  auto* train = app.add_subcommand("train", "phase 2: robust training on a pseudo-labeled file");
  add_common(train, &train_args);
  train->add_option("--train-set", train_path, "pseudo-labeled (or labeled) training file")
      ->required();
  train->add_option("--val-set", val_path, "group-labeled validation file")->required();

  auto* pipeline = app.add_subcommand("pipeline", "full pipeline across the configured seeds");
  add_common(pipeline, &pipe_args);

  auto* ssl = app.add_subcommand("ssl-imbalance",
                                 "class-imbalanced SSL comparison (vanilla/fixed/adaptive/oracle)");
  add_common(ssl, &ssl_args);

  auto* report = app.add_subcommand("report", "summarize a records.jsonl file");
  add_common(report, &report_args);
  report->add_option("--records", records_path, "records.jsonl to summarize")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) return cmd_generate(gen_args);
    if (pseudolabel->parsed()) return cmd_pseudolabel(pseudo_args);
    if (train->parsed()) return cmd_train(train_args, train_path, val_path);
    if (pipeline->parsed()) return cmd_pipeline(pipe_args);
    if (ssl->parsed()) return cmd_ssl(ssl_args);
    if (report->parsed()) {
      std::cout << ssa::summarize_records_file(records_path);
      return 0;
    }
  } catch (const std::exception& e) {
    // Structured error record on stderr, nonzero exit.
    std::cerr << nlohmann::json{{"stage", "error"}, {"error", e.what()}}.dump() << "\n";
    return 1;
  }
  return 0;
}
