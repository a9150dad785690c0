#include "ssa/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "ssa/util.hpp"

namespace ssa {

namespace {

// Feature geometry of the SSL generator: class means on a circle. Any
// class-conditional model with distinct means works here; these constants
// set the difficulty of the desk-scale problem.
constexpr int kSslDim = 2;
constexpr double kSslRadius = 2.5;
constexpr double kSslSigma = 1.0;

Vector ssl_class_mean(int k, int n_classes) {
  const double angle = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(n_classes);
  Vector mu(kSslDim);
  mu << kSslRadius * std::cos(angle), kSslRadius * std::sin(angle);
  return mu;
}

Sample draw_spurious_sample(const SpuriousGenConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int y = unit(rng) < 0.5 ? 0 : 1;
  const int a = unit(rng) < cfg.p_maj ? y : 1 - y;
  Sample s;
  s.y = y;
  s.attr = a;
  s.x = Vector(cfg.d_core + cfg.d_spur);
  const double core_mean = (2 * y - 1) * cfg.mu_core;
  const double spur_mean = (2 * a - 1) * cfg.mu_spur;
  for (int j = 0; j < cfg.d_core; ++j) s.x[j] = core_mean + cfg.sigma_core * gauss(rng);
  for (int j = 0; j < cfg.d_spur; ++j) s.x[cfg.d_core + j] = spur_mean + cfg.sigma_spur * gauss(rng);
  return s;
}

std::vector<int> shuffled_indices(std::size_t n, std::mt19937_64& rng) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

}  // namespace

void validate(const SpuriousGenConfig& cfg) {
  if (cfg.n_labeled < 1 || cfg.n_unlabeled < 1)
    throw std::invalid_argument("spurious generator: sample counts must be >= 1");
  if (cfg.p_maj < 0.0 || cfg.p_maj > 1.0)
    throw std::invalid_argument("spurious generator: p_maj must lie in [0,1]");
  if (cfg.d_core < 1 || cfg.d_spur < 1)
    throw std::invalid_argument("spurious generator: dimensions must be >= 1");
  if (cfg.sigma_core <= 0.0 || cfg.sigma_spur <= 0.0)
    throw std::invalid_argument("spurious generator: standard deviations must be > 0");
}

void validate(const ImbalancedSslConfig& cfg) {
  if (cfg.n_classes < 2) throw std::invalid_argument("imbalanced generator: need K >= 2 classes");
  if (cfg.m_maj < 1 || cfg.n_maj < 1)
    throw std::invalid_argument("imbalanced generator: counts must be >= 1");
  if (cfg.gamma_lab < 1.0 || cfg.gamma_unlab < 1.0)
    throw std::invalid_argument("imbalanced generator: imbalance ratios must be >= 1");
}

std::vector<int> imbalanced_class_sizes(int top, double gamma, int n_classes) {
  std::vector<int> sizes(static_cast<std::size_t>(n_classes));
  for (int k = 1; k <= n_classes; ++k) {
    const double exponent = -static_cast<double>(k - 1) / static_cast<double>(n_classes - 1);
    const double raw = top * std::pow(gamma, exponent);
    sizes[static_cast<std::size_t>(k - 1)] = std::max(1, static_cast<int>(std::lround(raw)));
  }
  return sizes;
}

std::vector<Sample> sample_spurious(const SpuriousGenConfig& cfg, int n, std::uint64_t seed) {
  validate(cfg);
  std::mt19937_64 rng(seed);
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(draw_spurious_sample(cfg, rng));
  return out;
}

DatasetBundle make_spurious_dataset(const SpuriousGenConfig& cfg) {
  validate(cfg);
  DatasetBundle bundle;
  bundle.rng_seed = cfg.seed;
  bundle.dim = cfg.d_core + cfg.d_spur;
  bundle.n_classes = 2;
  bundle.n_attrs = 2;
  bundle.unlabeled_target_visible = true;
  bundle.labeled = sample_spurious(cfg, cfg.n_labeled, derive_seed(cfg.seed, "labeled"));
  bundle.unlabeled = sample_spurious(cfg, cfg.n_unlabeled, derive_seed(cfg.seed, "unlabeled"));
  return bundle;
}

DatasetBundle make_imbalanced_ssl(const ImbalancedSslConfig& cfg) {
  validate(cfg);
  DatasetBundle bundle;
  bundle.rng_seed = cfg.seed;
  bundle.dim = kSslDim;
  bundle.n_classes = cfg.n_classes;
  bundle.n_attrs = cfg.n_classes;  // a == y
  bundle.unlabeled_target_visible = false;

  const auto m_k = imbalanced_class_sizes(cfg.m_maj, cfg.gamma_lab, cfg.n_classes);
  const auto n_k = imbalanced_class_sizes(cfg.n_maj, cfg.gamma_unlab, cfg.n_classes);

  std::mt19937_64 rng_lab(derive_seed(cfg.seed, "labeled"));
  std::mt19937_64 rng_unlab(derive_seed(cfg.seed, "unlabeled"));
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto draw = [&gauss, &cfg](int k, std::mt19937_64& rng) {
    Sample s;
    s.y = k;
    s.attr = k;
    s.x = ssl_class_mean(k, cfg.n_classes);
    for (int j = 0; j < kSslDim; ++j) s.x[j] += kSslSigma * gauss(rng);
    return s;
  };
  for (int k = 0; k < cfg.n_classes; ++k)
    for (int i = 0; i < m_k[static_cast<std::size_t>(k)]; ++i)
      bundle.labeled.push_back(draw(k, rng_lab));
  for (int k = 0; k < cfg.n_classes; ++k)
    for (int i = 0; i < n_k[static_cast<std::size_t>(k)]; ++i)
      bundle.unlabeled.push_back(draw(k, rng_unlab));
  return bundle;
}

std::vector<Sample> sample_ssl_test(const ImbalancedSslConfig& cfg, int per_class,
                                    std::uint64_t seed) {
  validate(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(per_class) * static_cast<std::size_t>(cfg.n_classes));
  for (int k = 0; k < cfg.n_classes; ++k) {
    for (int i = 0; i < per_class; ++i) {
      Sample s;
      s.y = k;
      s.attr = k;
      s.x = ssl_class_mean(k, cfg.n_classes);
      for (int j = 0; j < kSslDim; ++j) s.x[j] += kSslSigma * gauss(rng);
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::pair<std::vector<int>, std::vector<int>> split_labeled(const std::vector<Sample>& labeled,
                                                            std::uint64_t seed,
                                                            Warnings* warnings) {
  if (labeled.empty()) throw std::invalid_argument("split_labeled: empty labeled set");
  std::map<GroupId, std::vector<int>> by_group;
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    if (!labeled[i].attr)
      throw std::invalid_argument("split_labeled: sample without attribute annotation");
    by_group[GroupId{labeled[i].y, *labeled[i].attr}].push_back(static_cast<int>(i));
  }

  std::mt19937_64 rng(derive_seed(seed, "labeled-split"));
  std::vector<int> train, holdout;
  for (auto& [group, members] : by_group) {
    std::shuffle(members.begin(), members.end(), rng);
    if (members.size() == 1) {
      // The lone sample must stay visible to g_min counting.
      train.push_back(members[0]);
      if (warnings)
        warnings->add("group " + to_string(group) +
                      " has a single labeled sample; assigned to the train half");
      continue;
    }
    std::size_t to_train = members.size() / 2;
    if (members.size() % 2 == 1) {
      // Give the odd sample to whichever half is currently smaller.
      if (train.size() <= holdout.size()) ++to_train;
    }
    for (std::size_t i = 0; i < members.size(); ++i)
      (i < to_train ? train : holdout).push_back(members[i]);
  }
  std::sort(train.begin(), train.end());
  std::sort(holdout.begin(), holdout.end());
  return {train, holdout};
}

std::vector<std::vector<int>> split_unlabeled_kfold(const std::vector<Sample>& unlabeled,
                                                    int k_folds, std::uint64_t seed) {
  const int n = static_cast<int>(unlabeled.size());
  if (k_folds < 2) throw std::invalid_argument("split_unlabeled_kfold: K must be >= 2");
  if (k_folds > n) throw std::invalid_argument("split_unlabeled_kfold: K exceeds sample count");
  std::mt19937_64 rng(derive_seed(seed, "unlabeled-folds"));
  std::vector<int> idx = shuffled_indices(unlabeled.size(), rng);
  std::vector<std::vector<int>> folds(static_cast<std::size_t>(k_folds));
  const int base = n / k_folds;
  const int extra = n % k_folds;
  int pos = 0;
  for (int f = 0; f < k_folds; ++f) {
    const int len = base + (f < extra ? 1 : 0);
    folds[static_cast<std::size_t>(f)].assign(idx.begin() + pos, idx.begin() + pos + len);
    std::sort(folds[static_cast<std::size_t>(f)].begin(), folds[static_cast<std::size_t>(f)].end());
    pos += len;
  }
  return folds;
}

void populate_splits(DatasetBundle& bundle, int k_folds, std::uint64_t seed, Warnings* warnings) {
  auto [train, holdout] = split_labeled(bundle.labeled, seed, warnings);
  bundle.labeled_train = std::move(train);
  bundle.labeled_holdout = std::move(holdout);
  bundle.unlabeled_folds = split_unlabeled_kfold(bundle.unlabeled, k_folds, seed);
}

std::vector<Sample> subsample_labeled(const std::vector<Sample>& labeled, double fraction,
                                      std::uint64_t seed) {
  if (fraction <= 0.0 || fraction > 1.0)
    throw std::invalid_argument("subsample_labeled: fraction must lie in (0,1]");
  if (fraction == 1.0) return labeled;
  std::map<GroupId, std::vector<int>> by_group;
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    if (!labeled[i].attr)
      throw std::invalid_argument("subsample_labeled: sample without attribute annotation");
    by_group[GroupId{labeled[i].y, *labeled[i].attr}].push_back(static_cast<int>(i));
  }
  std::mt19937_64 rng(derive_seed(seed, "labeled-fraction"));
  std::vector<int> kept;
  for (auto& [group, members] : by_group) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(fraction * static_cast<double>(members.size()))));
    for (std::size_t i = 0; i < std::min(keep, members.size()); ++i) kept.push_back(members[i]);
  }
  std::sort(kept.begin(), kept.end());
  return gather(labeled, kept);
}

// ---- text format ----

std::string to_string(DatasetRole role) {
  switch (role) {
    case DatasetRole::kLabeled: return "labeled";
    case DatasetRole::kUnlabeled: return "unlabeled";
    case DatasetRole::kPseudoLabeled: return "pseudolabeled";
  }
  throw std::logic_error("unreachable dataset role");
}

namespace {

DatasetRole parse_role(const std::string& s) {
  if (s == "labeled") return DatasetRole::kLabeled;
  if (s == "unlabeled") return DatasetRole::kUnlabeled;
  if (s == "pseudolabeled") return DatasetRole::kPseudoLabeled;
  throw std::runtime_error("dataset: unknown role '" + s + "'");
}

}  // namespace

void write_dataset(std::ostream& out, const DatasetFile& file) {
  out << "ssa-dataset d=" << file.dim << " C=" << file.n_classes << " A=" << file.n_attrs
      << " role=" << to_string(file.role) << "\n";
  for (std::size_t i = 0; i < file.samples.size(); ++i) {
    const Sample& s = file.samples[i];
    if (s.x.size() != file.dim) throw std::invalid_argument("write_dataset: dimension mismatch");
    for (Eigen::Index j = 0; j < s.x.size(); ++j) out << format_double(s.x[j]) << ' ';
    out << s.y;
    if (file.role != DatasetRole::kUnlabeled) {
      if (!s.attr) throw std::invalid_argument("write_dataset: annotated role without attribute");
      out << ' ' << *s.attr;
    }
    if (file.role == DatasetRole::kPseudoLabeled) out << ' ' << file.source_fold.at(i);
    out << "\n";
  }
}

DatasetFile read_dataset(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw std::runtime_error("dataset: missing header");
  std::istringstream hs(header);
  std::string magic;
  hs >> magic;
  if (magic != "ssa-dataset") throw std::runtime_error("dataset: bad magic '" + magic + "'");
  DatasetFile file;
  std::string tok;
  while (hs >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos) throw std::runtime_error("dataset: bad header token " + tok);
    const std::string key = tok.substr(0, eq), value = tok.substr(eq + 1);
    if (key == "d") file.dim = std::stoi(value);
    else if (key == "C") file.n_classes = std::stoi(value);
    else if (key == "A") file.n_attrs = std::stoi(value);
    else if (key == "role") file.role = parse_role(value);
    else throw std::runtime_error("dataset: unknown header key " + key);
  }
  if (file.dim < 1) throw std::runtime_error("dataset: header dimension must be >= 1");

  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    Sample s;
    s.x = Vector(file.dim);
    for (int j = 0; j < file.dim; ++j)
      if (!(ls >> s.x[j])) throw std::runtime_error("dataset: truncated feature vector");
    if (!(ls >> s.y)) throw std::runtime_error("dataset: missing target label");
    if (s.y < 0 || s.y >= file.n_classes) throw std::runtime_error("dataset: target out of range");
    if (file.role != DatasetRole::kUnlabeled) {
      int a = 0;
      if (!(ls >> a)) throw std::runtime_error("dataset: missing attribute");
      if (a < 0 || a >= file.n_attrs) throw std::runtime_error("dataset: attribute out of range");
      s.attr = a;
    }
    if (file.role == DatasetRole::kPseudoLabeled) {
      int fold = 0;
      if (!(ls >> fold)) throw std::runtime_error("dataset: missing source fold");
      file.source_fold.push_back(fold);
    }
    file.samples.push_back(std::move(s));
  }
  return file;
}

void write_dataset_file(const std::string& path, const DatasetFile& file) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  write_dataset(out, file);
}

DatasetFile read_dataset_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  return read_dataset(in);
}

}  // namespace ssa
