// Flat key-value experiment configuration with dotted section keys.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "ssa/datagen.hpp"
#include "ssa/pseudolabel.hpp"
#include "ssa/robust.hpp"

namespace ssa {

// "key = value" lines, '#' comments, later assignments win.
class KvConfig {
 public:
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long get_long(const std::string& key, long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::uint64_t> get_seed_list(const std::string& key,
                                           const std::vector<std::uint64_t>& fallback) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

  static KvConfig parse(std::istream& in);
  static KvConfig parse_file(const std::string& path);
  // "key=value" as given on the command line.
  void apply_override(const std::string& assignment);

 private:
  std::map<std::string, std::string> entries_;
};

enum class DatasetKind { kSpurious, kImbalanced, kFile };

struct ExperimentConfig {
  DatasetKind dataset_kind = DatasetKind::kSpurious;
  SpuriousGenConfig spurious;
  ImbalancedSslConfig imbalanced;
  std::string file_labeled;
  std::string file_unlabeled;

  double labeled_fraction = 1.0;
  int k_folds = 3;
  PseudoLabelConfig pseudo;
  RobustConfig robust;
  bool ground_truth_attrs = false;  // phase 2 on true attributes (supervised reference)

  int test_n = 8000;            // spurious held-out test size
  int ssl_test_per_class = 400; // balanced SSL test size per class

  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "out";
};

// Applies defaults, resolves named imbalanced presets (e.g.
// "imb-100-4900-50"), and validates ranges.
ExperimentConfig resolve_config(const KvConfig& kv);

// Fully resolved flat view, used to stamp result records with provenance.
std::map<std::string, std::string> to_kv(const ExperimentConfig& cfg);

}  // namespace ssa
