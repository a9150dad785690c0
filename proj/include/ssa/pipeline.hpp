// End-to-end orchestration: pseudo-labeling over K folds, finalization,
// robust training, evaluation, and result emission.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ssa/config.hpp"
#include "ssa/metrics.hpp"
#include "ssa/pseudolabel.hpp"
#include "ssa/robust.hpp"

namespace ssa {

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;

  PseudoGroupReport pseudo_report;
  GroupReport test_report;
  GroupReport val_report;
  double phase1_mean_holdout_worst = 0.0;
  std::vector<AttrTrainResult> fold_results;  // trace etc., one per fold
  RobustResult robust_result;
  Warnings warnings;
};

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;  // population, 0 for a single seed
  int n = 0;
};

Aggregate aggregate(const std::vector<double>& values);

struct PipelineResult {
  std::vector<SeedOutcome> per_seed;
  Aggregate worst_group_acc;
  Aggregate average_acc;
};

// Per seed: generate/load data, subsample D_L, phase 1 over K folds,
// finalize labels, phase 2, evaluate on a held-out test set. A failing seed
// is recorded and the remaining seeds proceed. When `out_dir` is nonempty,
// result records, traces and the summary are written beneath it.
PipelineResult run_ssa_pipeline(const ExperimentConfig& cfg,
                                const std::string& out_dir = "",
                                std::ostream* progress = nullptr);

struct SslArmOutcome {
  std::string arm;  // vanilla | fixed | adaptive | oracle
  double bacc = 0.0;
  double gm = 0.0;
};

struct SslSeedOutcome {
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  std::vector<SslArmOutcome> arms;
  Warnings warnings;
};

struct SslResult {
  std::vector<SslSeedOutcome> per_seed;
  // keyed by arm name: aggregate bACC and GM across seeds
  std::map<std::string, Aggregate> bacc;
  std::map<std::string, Aggregate> gm;
};

// Classes act as groups (a == y); arms: supervised-only, fixed threshold,
// adaptive thresholds, full-label oracle. Reports bACC and GM on a balanced
// held-out test set.
SslResult run_ssl_imbalance(const ExperimentConfig& cfg,
                            const std::string& out_dir = "",
                            std::ostream* progress = nullptr);

// Rebuilds the human-readable summary from a records file.
std::string summarize_records_file(const std::string& records_path);

}  // namespace ssa
