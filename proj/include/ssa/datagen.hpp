// Synthetic dataset generators with controllable spurious correlation or
// class imbalance, the labeled/unlabeled splits used by the pipeline, and
// the line-delimited dataset text format.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "ssa/types.hpp"

namespace ssa {

struct SpuriousGenConfig {
  int n_labeled = 400;
  int n_unlabeled = 20000;
  double p_maj = 0.95;  // P(a = y)
  double mu_core = 1.0;
  double mu_spur = 1.0;
  double sigma_core = 2.0;
  double sigma_spur = 1.0;
  int d_core = 5;
  int d_spur = 5;
  std::uint64_t seed = 0;
};

struct ImbalancedSslConfig {
  int n_classes = 10;
  int m_maj = 100;
  double gamma_lab = 50.0;
  int n_maj = 4900;
  double gamma_unlab = 1.0;
  std::uint64_t seed = 0;
};

void validate(const SpuriousGenConfig& cfg);
void validate(const ImbalancedSslConfig& cfg);

// Exponential class-size decay: round(top * gamma^(-(k-1)/(K-1))), floored
// at 1, for k = 1..K.
std::vector<int> imbalanced_class_sizes(int top, double gamma, int n_classes);

// y uniform over {0,1}; a = y with probability p_maj; core feature block
// ~ N((2y-1)*mu_core, sigma_core^2), spurious block ~ N((2a-1)*mu_spur,
// sigma_spur^2). Splits left empty.
DatasetBundle make_spurious_dataset(const SpuriousGenConfig& cfg);
// Same draw, all samples annotated; used for held-out test sets.
std::vector<Sample> sample_spurious(const SpuriousGenConfig& cfg, int n, std::uint64_t seed);

// Class sizes from the exponential decay; class-conditional Gaussians with
// distinct means; the group degenerates to the class itself (a == y) and the
// target is hidden on unlabeled samples.
DatasetBundle make_imbalanced_ssl(const ImbalancedSslConfig& cfg);
// Balanced annotated test set from the same feature model.
std::vector<Sample> sample_ssl_test(const ImbalancedSslConfig& cfg, int per_class, std::uint64_t seed);

// Halves of sizes as close to (ceil(m/2), floor(m/2)) as stratification
// allows: each group's members split as evenly as possible, odd-group
// extras balanced greedily, single-sample groups forced into the train half
// (with a warning) so g_min stays computable.
std::pair<std::vector<int>, std::vector<int>> split_labeled(
    const std::vector<Sample>& labeled, std::uint64_t seed, Warnings* warnings = nullptr);

// Disjoint cover with sizes differing by at most one.
std::vector<std::vector<int>> split_unlabeled_kfold(
    const std::vector<Sample>& unlabeled, int k_folds, std::uint64_t seed);

void populate_splits(DatasetBundle& bundle, int k_folds, std::uint64_t seed,
                     Warnings* warnings = nullptr);

// Stratified per-group subsample of the labeled set: round(count*fraction)
// per group, floored at 1.
std::vector<Sample> subsample_labeled(const std::vector<Sample>& labeled,
                                      double fraction, std::uint64_t seed);

// ---- dataset text format ----
// Header: "ssa-dataset d=<d> C=<C> A=<A> role=<role>"
// Records: features then y, then a for labeled sets, then the source fold
// for pseudolabeled sets. Doubles round-trip bit-exactly.
enum class DatasetRole { kLabeled, kUnlabeled, kPseudoLabeled };

std::string to_string(DatasetRole role);

struct DatasetFile {
  DatasetRole role = DatasetRole::kLabeled;
  int dim = 0;
  int n_classes = 0;
  int n_attrs = 0;
  std::vector<Sample> samples;
  std::vector<int> source_fold;  // pseudolabeled only
};

void write_dataset(std::ostream& out, const DatasetFile& file);
DatasetFile read_dataset(std::istream& in);
void write_dataset_file(const std::string& path, const DatasetFile& file);
DatasetFile read_dataset_file(const std::string& path);

}  // namespace ssa
