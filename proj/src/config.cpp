#include "ssa/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ssa/util.hpp"

namespace ssa {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

void KvConfig::set(const std::string& key, const std::string& value) { entries_[key] = value; }

bool KvConfig::has(const std::string& key) const { return entries_.count(key) > 0; }

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': not a number: " + it->second);
  }
}

long KvConfig::get_long(const std::string& key, long fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const long v = std::stol(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': not an integer: " + it->second);
  }
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw std::invalid_argument("config key '" + key + "': not a boolean: " + it->second);
}

std::vector<std::uint64_t> KvConfig::get_seed_list(
    const std::string& key, const std::vector<std::uint64_t>& fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  std::vector<std::uint64_t> seeds;
  std::istringstream ss(it->second);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    seeds.push_back(std::stoull(tok));
  }
  if (seeds.empty()) throw std::invalid_argument("config key '" + key + "': empty seed list");
  return seeds;
}

KvConfig KvConfig::parse(std::istream& in) {
  KvConfig kv;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument("config line " + std::to_string(line_no) +
                                                 ": empty key");
    kv.set(key, value);
  }
  return kv;
}

KvConfig KvConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  return parse(in);
}

void KvConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("override must be key=value: " + assignment);
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

namespace {

// Named imbalanced presets: imb-<m_maj>-<n_maj>-<gamma_lab>[-<gamma_unlab>].
bool apply_imbalanced_preset(const std::string& name, ImbalancedSslConfig* cfg) {
  if (name.rfind("imb-", 0) != 0) return false;
  std::vector<double> parts;
  std::istringstream ss(name.substr(4));
  std::string tok;
  while (std::getline(ss, tok, '-')) parts.push_back(std::stod(tok));
  if (parts.size() != 3 && parts.size() != 4)
    throw std::invalid_argument("preset '" + name + "': expected imb-M-N-GLAB[-GUNLAB]");
  cfg->m_maj = static_cast<int>(parts[0]);
  cfg->n_maj = static_cast<int>(parts[1]);
  cfg->gamma_lab = parts[2];
  cfg->gamma_unlab = parts.size() == 4 ? parts[3] : 1.0;
  return true;
}

SgdConfig read_sgd(const KvConfig& kv, const std::string& prefix, const SgdConfig& defaults) {
  SgdConfig sgd = defaults;
  sgd.learning_rate = kv.get_double(prefix + ".learning_rate", defaults.learning_rate);
  sgd.momentum = kv.get_double(prefix + ".momentum", defaults.momentum);
  sgd.weight_decay = kv.get_double(prefix + ".weight_decay", defaults.weight_decay);
  sgd.batch_size = static_cast<int>(kv.get_long(prefix + ".batch_size", defaults.batch_size));
  if (sgd.learning_rate <= 0.0) throw std::invalid_argument(prefix + ".learning_rate must be > 0");
  if (sgd.momentum < 0.0 || sgd.momentum >= 1.0)
    throw std::invalid_argument(prefix + ".momentum must lie in [0,1)");
  if (sgd.weight_decay < 0.0) throw std::invalid_argument(prefix + ".weight_decay must be >= 0");
  if (sgd.batch_size < 1) throw std::invalid_argument(prefix + ".batch_size must be >= 1");
  return sgd;
}

}  // namespace

ExperimentConfig resolve_config(const KvConfig& kv) {
  ExperimentConfig cfg;

  const std::string kind = kv.get_string("dataset.kind", "spurious");
  if (kind == "spurious") cfg.dataset_kind = DatasetKind::kSpurious;
  else if (kind == "imbalanced") cfg.dataset_kind = DatasetKind::kImbalanced;
  else if (kind == "file") cfg.dataset_kind = DatasetKind::kFile;
  else throw std::invalid_argument("dataset.kind must be spurious|imbalanced|file, got " + kind);

  cfg.spurious.n_labeled = static_cast<int>(kv.get_long("dataset.spurious.n_labeled", 400));
  cfg.spurious.n_unlabeled = static_cast<int>(kv.get_long("dataset.spurious.n_unlabeled", 20000));
  cfg.spurious.p_maj = kv.get_double("dataset.spurious.p_maj", 0.95);
  cfg.spurious.mu_core = kv.get_double("dataset.spurious.mu_core", 1.0);
  cfg.spurious.mu_spur = kv.get_double("dataset.spurious.mu_spur", 1.0);
  cfg.spurious.sigma_core = kv.get_double("dataset.spurious.sigma_core", 2.0);
  cfg.spurious.sigma_spur = kv.get_double("dataset.spurious.sigma_spur", 1.0);
  cfg.spurious.d_core = static_cast<int>(kv.get_long("dataset.spurious.d_core", 5));
  cfg.spurious.d_spur = static_cast<int>(kv.get_long("dataset.spurious.d_spur", 5));

  const std::string preset = kv.get_string("dataset.imbalanced.preset", "");
  if (!preset.empty() && !apply_imbalanced_preset(preset, &cfg.imbalanced))
    throw std::invalid_argument("unknown imbalanced preset: " + preset);
  cfg.imbalanced.n_classes =
      static_cast<int>(kv.get_long("dataset.imbalanced.n_classes", cfg.imbalanced.n_classes));
  cfg.imbalanced.m_maj = static_cast<int>(kv.get_long("dataset.imbalanced.m_maj", cfg.imbalanced.m_maj));
  cfg.imbalanced.gamma_lab = kv.get_double("dataset.imbalanced.gamma_lab", cfg.imbalanced.gamma_lab);
  cfg.imbalanced.n_maj = static_cast<int>(kv.get_long("dataset.imbalanced.n_maj", cfg.imbalanced.n_maj));
  cfg.imbalanced.gamma_unlab =
      kv.get_double("dataset.imbalanced.gamma_unlab", cfg.imbalanced.gamma_unlab);

  cfg.file_labeled = kv.get_string("dataset.file.labeled", "");
  cfg.file_unlabeled = kv.get_string("dataset.file.unlabeled", "");
  if (cfg.dataset_kind == DatasetKind::kFile &&
      (cfg.file_labeled.empty() || cfg.file_unlabeled.empty()))
    throw std::invalid_argument("dataset.kind=file requires dataset.file.labeled and .unlabeled");

  cfg.labeled_fraction = kv.get_double("labeled_fraction", 1.0);
  if (cfg.labeled_fraction <= 0.0 || cfg.labeled_fraction > 1.0)
    throw std::invalid_argument("labeled_fraction must lie in (0,1]");
  cfg.k_folds = static_cast<int>(kv.get_long("k_folds", 3));
  if (cfg.k_folds < 1) throw std::invalid_argument("k_folds must be >= 1");

  cfg.pseudo.tau_g_min = kv.get_double("pseudo.tau_g_min", 0.95);
  if (cfg.pseudo.tau_g_min <= 0.0 || cfg.pseudo.tau_g_min > 1.0)
    throw std::invalid_argument("pseudo.tau_g_min must lie in (0,1]");
  cfg.pseudo.recompute_every = static_cast<int>(kv.get_long("pseudo.recompute_every", 1));
  if (cfg.pseudo.recompute_every < 1)
    throw std::invalid_argument("pseudo.recompute_every must be >= 1");
  cfg.pseudo.max_iters = kv.get_long("pseudo.max_iters", 1000);
  if (cfg.pseudo.max_iters < 0) throw std::invalid_argument("pseudo.max_iters must be >= 0");
  cfg.pseudo.adaptive = kv.get_bool("pseudo.adaptive", true);
  cfg.pseudo.use_unsup = kv.get_bool("pseudo.use_unsup", true);
  const std::string scope = kv.get_string("pseudo.threshold_scope", "full");
  if (scope == "full") cfg.pseudo.scope = ThresholdScope::kFullSet;
  else if (scope == "batch") cfg.pseudo.scope = ThresholdScope::kBatch;
  else throw std::invalid_argument("pseudo.threshold_scope must be full|batch");
  cfg.pseudo.arch = parse_arch(kv.get_string("pseudo.arch", "linear"));
  cfg.pseudo.hidden_dim = static_cast<int>(kv.get_long("pseudo.hidden", 16));
  cfg.pseudo.sgd = read_sgd(kv, "pseudo.sgd", SgdConfig{0.1, 0.9, 0.0, 64, 0});

  cfg.robust.method = parse_robust_method(kv.get_string("robust.method", "dro"));
  cfg.robust.epochs = static_cast<int>(kv.get_long("robust.epochs", 30));
  if (cfg.robust.epochs < 0) throw std::invalid_argument("robust.epochs must be >= 0");
  cfg.robust.sgd = read_sgd(kv, "robust.sgd", SgdConfig{0.05, 0.9, 0.0, 64, 0});
  cfg.robust.eta_q = kv.get_double("robust.eta_q", 0.01);
  if (cfg.robust.eta_q < 0.0) throw std::invalid_argument("robust.eta_q must be >= 0");
  const std::string missing = kv.get_string("robust.missing_group", "zero");
  if (missing == "zero") cfg.robust.missing_group = MissingGroupLoss::kZero;
  else if (missing == "carry") cfg.robust.missing_group = MissingGroupLoss::kCarry;
  else throw std::invalid_argument("robust.missing_group must be zero|carry");
  cfg.robust.contrastive.samples_per_group =
      static_cast<int>(kv.get_long("robust.contrastive.m", 16));
  if (cfg.robust.contrastive.samples_per_group < 2)
    throw std::invalid_argument("robust.contrastive.m must be >= 2");
  cfg.robust.contrastive.temperature = kv.get_double("robust.contrastive.temperature", 0.1);
  if (cfg.robust.contrastive.temperature <= 0.0)
    throw std::invalid_argument("robust.contrastive.temperature must be > 0");
  cfg.robust.contrastive.contrastive_weight = kv.get_double("robust.contrastive.weight", 0.75);
  if (cfg.robust.contrastive.contrastive_weight < 0.0 ||
      cfg.robust.contrastive.contrastive_weight > 1.0)
    throw std::invalid_argument("robust.contrastive.weight must lie in [0,1]");
  cfg.robust.arch = parse_arch(kv.get_string("robust.arch", "linear"));
  cfg.robust.hidden_dim = static_cast<int>(kv.get_long("robust.hidden", 16));
  cfg.ground_truth_attrs = kv.get_bool("robust.ground_truth_attrs", false);

  cfg.test_n = static_cast<int>(kv.get_long("test.n", 8000));
  if (cfg.test_n < 1) throw std::invalid_argument("test.n must be >= 1");
  cfg.ssl_test_per_class = static_cast<int>(kv.get_long("test.per_class", 400));
  if (cfg.ssl_test_per_class < 1) throw std::invalid_argument("test.per_class must be >= 1");

  cfg.seeds = kv.get_seed_list("seeds", {0});
  cfg.output_dir = kv.get_string("output_dir", "out");

  validate(cfg.spurious);
  validate(cfg.imbalanced);
  return cfg;
}

std::map<std::string, std::string> to_kv(const ExperimentConfig& cfg) {
  std::map<std::string, std::string> kv;
  kv["dataset.kind"] = cfg.dataset_kind == DatasetKind::kSpurious      ? "spurious"
                        : cfg.dataset_kind == DatasetKind::kImbalanced ? "imbalanced"
                                                                       : "file";
  kv["dataset.spurious.n_labeled"] = std::to_string(cfg.spurious.n_labeled);
  kv["dataset.spurious.n_unlabeled"] = std::to_string(cfg.spurious.n_unlabeled);
  kv["dataset.spurious.p_maj"] = format_double(cfg.spurious.p_maj);
  kv["dataset.spurious.mu_core"] = format_double(cfg.spurious.mu_core);
  kv["dataset.spurious.mu_spur"] = format_double(cfg.spurious.mu_spur);
  kv["dataset.spurious.sigma_core"] = format_double(cfg.spurious.sigma_core);
  kv["dataset.spurious.sigma_spur"] = format_double(cfg.spurious.sigma_spur);
  kv["dataset.spurious.d_core"] = std::to_string(cfg.spurious.d_core);
  kv["dataset.spurious.d_spur"] = std::to_string(cfg.spurious.d_spur);
  kv["dataset.imbalanced.n_classes"] = std::to_string(cfg.imbalanced.n_classes);
  kv["dataset.imbalanced.m_maj"] = std::to_string(cfg.imbalanced.m_maj);
  kv["dataset.imbalanced.gamma_lab"] = format_double(cfg.imbalanced.gamma_lab);
  kv["dataset.imbalanced.n_maj"] = std::to_string(cfg.imbalanced.n_maj);
  kv["dataset.imbalanced.gamma_unlab"] = format_double(cfg.imbalanced.gamma_unlab);
  if (!cfg.file_labeled.empty()) kv["dataset.file.labeled"] = cfg.file_labeled;
  if (!cfg.file_unlabeled.empty()) kv["dataset.file.unlabeled"] = cfg.file_unlabeled;
  kv["labeled_fraction"] = format_double(cfg.labeled_fraction);
  kv["k_folds"] = std::to_string(cfg.k_folds);
  kv["pseudo.tau_g_min"] = format_double(cfg.pseudo.tau_g_min);
  kv["pseudo.recompute_every"] = std::to_string(cfg.pseudo.recompute_every);
  kv["pseudo.max_iters"] = std::to_string(cfg.pseudo.max_iters);
  kv["pseudo.adaptive"] = cfg.pseudo.adaptive ? "true" : "false";
  kv["pseudo.use_unsup"] = cfg.pseudo.use_unsup ? "true" : "false";
  kv["pseudo.threshold_scope"] = cfg.pseudo.scope == ThresholdScope::kFullSet ? "full" : "batch";
  kv["pseudo.arch"] = to_string(cfg.pseudo.arch);
  kv["pseudo.hidden"] = std::to_string(cfg.pseudo.hidden_dim);
  kv["pseudo.sgd.learning_rate"] = format_double(cfg.pseudo.sgd.learning_rate);
  kv["pseudo.sgd.momentum"] = format_double(cfg.pseudo.sgd.momentum);
  kv["pseudo.sgd.weight_decay"] = format_double(cfg.pseudo.sgd.weight_decay);
  kv["pseudo.sgd.batch_size"] = std::to_string(cfg.pseudo.sgd.batch_size);
  kv["robust.method"] = to_string(cfg.robust.method);
  kv["robust.epochs"] = std::to_string(cfg.robust.epochs);
  kv["robust.sgd.learning_rate"] = format_double(cfg.robust.sgd.learning_rate);
  kv["robust.sgd.momentum"] = format_double(cfg.robust.sgd.momentum);
  kv["robust.sgd.weight_decay"] = format_double(cfg.robust.sgd.weight_decay);
  kv["robust.sgd.batch_size"] = std::to_string(cfg.robust.sgd.batch_size);
  kv["robust.eta_q"] = format_double(cfg.robust.eta_q);
  kv["robust.missing_group"] =
      cfg.robust.missing_group == MissingGroupLoss::kZero ? "zero" : "carry";
  kv["robust.contrastive.m"] = std::to_string(cfg.robust.contrastive.samples_per_group);
  kv["robust.contrastive.temperature"] = format_double(cfg.robust.contrastive.temperature);
  kv["robust.contrastive.weight"] = format_double(cfg.robust.contrastive.contrastive_weight);
  kv["robust.arch"] = to_string(cfg.robust.arch);
  kv["robust.hidden"] = std::to_string(cfg.robust.hidden_dim);
  kv["robust.ground_truth_attrs"] = cfg.ground_truth_attrs ? "true" : "false";
  kv["test.n"] = std::to_string(cfg.test_n);
  kv["test.per_class"] = std::to_string(cfg.ssl_test_per_class);
  std::string seeds;
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    if (i) seeds += ",";
    seeds += std::to_string(cfg.seeds[i]);
  }
  kv["seeds"] = seeds;
  // output_dir is deliberately omitted: records must be byte-identical
  // wherever the run is written.
  return kv;
}

}  // namespace ssa
