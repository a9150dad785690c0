#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "ssa/datagen.hpp"

using namespace ssa;

namespace {

std::string serialize(const std::vector<Sample>& samples, DatasetRole role, int d, int c, int a) {
  DatasetFile file{role, d, c, a, samples, {}};
  if (role == DatasetRole::kPseudoLabeled) file.source_fold.assign(samples.size(), 0);
  std::ostringstream out;
  write_dataset(out, file);
  return out.str();
}

std::map<GroupId, long> group_counts(const std::vector<Sample>& samples) {
  std::map<GroupId, long> counts;
  for (const Sample& s : samples) ++counts[GroupId{s.y, s.attr.value_or(-1)}];
  return counts;
}

}  // namespace

TEST_CASE("p_maj = 1 populates only the two aligned groups") {
  SpuriousGenConfig cfg;
  cfg.n_labeled = 200;
  cfg.n_unlabeled = 200;
  cfg.p_maj = 1.0;
  cfg.seed = 3;
  const auto bundle = make_spurious_dataset(cfg);
  for (const Sample& s : bundle.labeled) CHECK(*s.attr == s.y);
  for (const Sample& s : bundle.unlabeled) CHECK(*s.attr == s.y);
}

TEST_CASE("p_maj = 0.5 spreads mass over the four groups") {
  SpuriousGenConfig cfg;
  cfg.n_labeled = 40;
  cfg.n_unlabeled = 8000;
  cfg.p_maj = 0.5;
  cfg.seed = 5;
  const auto bundle = make_spurious_dataset(cfg);
  const auto counts = group_counts(bundle.unlabeled);
  REQUIRE(counts.size() == 4);
  // Each group is Binomial(n, 1/4): allow 3 sigma around n/4.
  const double n = static_cast<double>(bundle.unlabeled.size());
  const double expectation = n / 4.0;
  const double sigma = std::sqrt(n * 0.25 * 0.75);
  for (const auto& [g, c] : counts) {
    CHECK(std::abs(static_cast<double>(c) - expectation) < 3.0 * sigma);
  }
}

TEST_CASE("same seed gives byte-identical datasets") {
  SpuriousGenConfig cfg;
  cfg.n_labeled = 50;
  cfg.n_unlabeled = 60;
  cfg.seed = 11;
  const auto a = make_spurious_dataset(cfg);
  const auto b = make_spurious_dataset(cfg);
  CHECK(serialize(a.labeled, DatasetRole::kLabeled, a.dim, 2, 2) ==
        serialize(b.labeled, DatasetRole::kLabeled, b.dim, 2, 2));
  CHECK(serialize(a.unlabeled, DatasetRole::kLabeled, a.dim, 2, 2) ==
        serialize(b.unlabeled, DatasetRole::kLabeled, b.dim, 2, 2));
}

TEST_CASE("empirical group fraction tracks p_maj within 0.02 at n = 10000") {
  SpuriousGenConfig cfg;
  cfg.n_labeled = 10;
  cfg.n_unlabeled = 10000;
  cfg.p_maj = 0.95;
  cfg.seed = 17;
  const auto bundle = make_spurious_dataset(cfg);
  long aligned = 0;
  for (const Sample& s : bundle.unlabeled)
    if (*s.attr == s.y) ++aligned;
  const double fraction = static_cast<double>(aligned) / static_cast<double>(bundle.unlabeled.size());
  CHECK(std::abs(fraction - 0.95) < 0.02);
}

TEST_CASE("invalid generator configs are rejected") {
  SpuriousGenConfig cfg;
  cfg.p_maj = 1.5;
  CHECK_THROWS_AS((void)make_spurious_dataset(cfg), std::invalid_argument);
  cfg.p_maj = 0.9;
  cfg.sigma_core = 0.0;
  CHECK_THROWS_AS((void)make_spurious_dataset(cfg), std::invalid_argument);
  cfg.sigma_core = 1.0;
  cfg.d_spur = 0;
  CHECK_THROWS_AS((void)make_spurious_dataset(cfg), std::invalid_argument);

  ImbalancedSslConfig imb;
  imb.n_classes = 1;
  CHECK_THROWS_AS((void)make_imbalanced_ssl(imb), std::invalid_argument);
  imb.n_classes = 10;
  imb.gamma_lab = 0.5;
  CHECK_THROWS_AS((void)make_imbalanced_ssl(imb), std::invalid_argument);
}

TEST_CASE("exponential decay endpoints: m_1 = m_maj, m_K = m_maj/gamma") {
  const auto sizes = imbalanced_class_sizes(500, 100.0, 10);
  CHECK(sizes.front() == 500);
  CHECK(sizes.back() == 5);
}

TEST_CASE("gamma = 1 keeps every class at m_maj") {
  const auto sizes = imbalanced_class_sizes(123, 1.0, 7);
  for (int s : sizes) CHECK(s == 123);
}

TEST_CASE("closed form at k = 5: round(500 * 100^(-4/9)) = 65") {
  // High-precision evaluation of the decay formula, frozen: 64.577... -> 65.
  const auto sizes = imbalanced_class_sizes(500, 100.0, 10);
  CHECK(sizes[4] == 65);
}

TEST_CASE("imbalance ratio after rounding stays near gamma") {
  for (double gamma : {2.0, 10.0, 50.0, 100.0}) {
    const auto sizes = imbalanced_class_sizes(500, gamma, 10);
    const double ratio = static_cast<double>(sizes.front()) / static_cast<double>(sizes.back());
    const double m_k = static_cast<double>(sizes.back());
    CHECK(ratio >= gamma * (1.0 - 1.0 / m_k));
    CHECK(ratio <= gamma * (1.0 + 1.0 / m_k));
  }
}

TEST_CASE("imbalanced bundle hides targets and degenerates groups to classes") {
  ImbalancedSslConfig cfg;
  cfg.n_classes = 4;
  cfg.m_maj = 20;
  cfg.gamma_lab = 4.0;
  cfg.n_maj = 50;
  cfg.gamma_unlab = 1.0;
  cfg.seed = 2;
  const auto bundle = make_imbalanced_ssl(cfg);
  CHECK_FALSE(bundle.unlabeled_target_visible);
  CHECK(bundle.n_attrs == 4);
  for (const Sample& s : bundle.labeled) CHECK(*s.attr == s.y);
  const auto views = bundle.unlabeled_view_all();
  for (const auto& v : views) CHECK_FALSE(v.y.has_value());  // nothing leaks
}

TEST_CASE("stratified split: 4 groups x 2 samples -> one per group per half") {
  std::vector<Sample> labeled;
  for (int y = 0; y < 2; ++y)
    for (int a = 0; a < 2; ++a)
      for (int rep = 0; rep < 2; ++rep) {
        Sample s;
        s.x = Vector::Constant(2, static_cast<double>(rep));
        s.y = y;
        s.attr = a;
        labeled.push_back(s);
      }
  const auto [train, holdout] = split_labeled(labeled, 7);
  CHECK(train.size() == 4);
  CHECK(holdout.size() == 4);
  const auto train_counts = group_counts(gather(labeled, train));
  const auto holdout_counts = group_counts(gather(labeled, holdout));
  for (const auto& [g, c] : train_counts) CHECK(c == 1);
  for (const auto& [g, c] : holdout_counts) CHECK(c == 1);
}

TEST_CASE("m = 7 splits into sizes (4, 3)") {
  std::vector<Sample> labeled;
  auto push = [&labeled](int y, int a, int n) {
    for (int i = 0; i < n; ++i) {
      Sample s;
      s.x = Vector::Zero(1);
      s.y = y;
      s.attr = a;
      labeled.push_back(s);
    }
  };
  push(0, 0, 4);
  push(0, 1, 3);
  const auto [train, holdout] = split_labeled(labeled, 123);
  CHECK(train.size() == 4);
  CHECK(holdout.size() == 3);
}

TEST_CASE("a single-sample group lands in the train half with a warning") {
  std::vector<Sample> labeled;
  Sample lone;
  lone.x = Vector::Zero(1);
  lone.y = 1;
  lone.attr = 1;
  labeled.push_back(lone);
  for (int i = 0; i < 4; ++i) {
    Sample s;
    s.x = Vector::Zero(1);
    s.y = 0;
    s.attr = 0;
    labeled.push_back(s);
  }
  Warnings warnings;
  const auto [train, holdout] = split_labeled(labeled, 5, &warnings);
  CHECK(warnings.count() == 1);
  const auto train_counts = group_counts(gather(labeled, train));
  CHECK(train_counts.at(GroupId{1, 1}) == 1);
  const auto holdout_counts = group_counts(gather(labeled, holdout));
  CHECK(holdout_counts.count(GroupId{1, 1}) == 0);
}

TEST_CASE("k-fold split obeys size and partition rules") {
  std::vector<Sample> unlabeled(100);
  for (auto& s : unlabeled) s.x = Vector::Zero(1);

  SUBCASE("n = 7, K = 3 gives sizes {3, 2, 2}") {
    unlabeled.resize(7);
    const auto folds = split_unlabeled_kfold(unlabeled, 3, 1);
    std::multiset<std::size_t> sizes;
    for (const auto& f : folds) sizes.insert(f.size());
    CHECK(sizes == std::multiset<std::size_t>{2, 2, 3});
  }

  SUBCASE("n = 9, K = 3 gives equal folds") {
    unlabeled.resize(9);
    const auto folds = split_unlabeled_kfold(unlabeled, 3, 1);
    for (const auto& f : folds) CHECK(f.size() == 3);
  }

  SUBCASE("folds partition 0..99 exactly") {
    const auto folds = split_unlabeled_kfold(unlabeled, 7, 42);
    std::set<int> seen;
    std::size_t total = 0;
    for (const auto& f : folds) {
      total += f.size();
      for (int i : f) CHECK(seen.insert(i).second);  // no duplicates across folds
    }
    CHECK(total == 100);
    CHECK(*seen.begin() == 0);
    CHECK(*seen.rbegin() == 99);
  }

  SUBCASE("K larger than n is rejected") {
    unlabeled.resize(3);
    CHECK_THROWS_AS((void)split_unlabeled_kfold(unlabeled, 5, 0), std::invalid_argument);
  }
}

TEST_CASE("labeled split is an exact partition for random shapes") {
  SpuriousGenConfig cfg;
  cfg.n_labeled = 137;
  cfg.n_unlabeled = 10;
  cfg.seed = 31;
  const auto bundle = make_spurious_dataset(cfg);
  const auto [train, holdout] = split_labeled(bundle.labeled, 9);
  std::set<int> all(train.begin(), train.end());
  for (int i : holdout) CHECK(all.insert(i).second);
  CHECK(all.size() == bundle.labeled.size());
  CHECK(static_cast<long>(train.size()) - static_cast<long>(holdout.size()) <= 4);
}

TEST_CASE("stratified subsample keeps every group represented") {
  SpuriousGenConfig cfg;
  cfg.n_labeled = 400;
  cfg.n_unlabeled = 10;
  cfg.p_maj = 0.95;
  cfg.seed = 13;
  const auto bundle = make_spurious_dataset(cfg);
  const auto subset = subsample_labeled(bundle.labeled, 0.1, 77);
  const auto before = group_counts(bundle.labeled);
  const auto after = group_counts(subset);
  CHECK(after.size() == before.size());
  for (const auto& [g, c] : after) {
    CHECK(c >= 1);
    const double expected = 0.1 * static_cast<double>(before.at(g));
    CHECK(std::abs(static_cast<double>(c) - expected) <= 1.0);
  }
}

TEST_CASE("dataset text round trip is bit exact") {
  SpuriousGenConfig cfg;
  cfg.n_labeled = 25;
  cfg.n_unlabeled = 5;
  cfg.seed = 19;
  const auto bundle = make_spurious_dataset(cfg);
  DatasetFile file{DatasetRole::kLabeled, bundle.dim, 2, 2, bundle.labeled, {}};
  std::stringstream buffer;
  write_dataset(buffer, file);
  const auto loaded = read_dataset(buffer);
  CHECK(loaded.role == DatasetRole::kLabeled);
  CHECK(loaded.dim == bundle.dim);
  REQUIRE(loaded.samples.size() == bundle.labeled.size());
  for (std::size_t i = 0; i < loaded.samples.size(); ++i) {
    CHECK(loaded.samples[i].y == bundle.labeled[i].y);
    CHECK(*loaded.samples[i].attr == *bundle.labeled[i].attr);
    for (Eigen::Index j = 0; j < bundle.dim; ++j)
      CHECK(loaded.samples[i].x[j] == bundle.labeled[i].x[j]);  // exact, not approximate
  }
}

TEST_CASE("serializing a training view never includes the hidden attribute") {
  SpuriousGenConfig cfg;
  cfg.n_labeled = 5;
  cfg.n_unlabeled = 8;
  cfg.seed = 23;
  const auto bundle = make_spurious_dataset(cfg);
  DatasetFile file{DatasetRole::kUnlabeled, bundle.dim, 2, 2, {}, {}};
  for (const Sample& s : bundle.unlabeled) file.samples.push_back(Sample{s.x, s.y, std::nullopt});
  std::ostringstream out;
  write_dataset(out, file);
  std::istringstream in(out.str());
  const auto loaded = read_dataset(in);
  for (const Sample& s : loaded.samples) CHECK_FALSE(s.attr.has_value());
  // Records carry exactly d + 1 fields.
  std::istringstream lines(out.str());
  std::string line;
  std::getline(lines, line);  // header
  while (std::getline(lines, line)) {
    std::istringstream ls(line);
    std::string tok;
    int fields = 0;
    while (ls >> tok) ++fields;
    CHECK(fields == bundle.dim + 1);
  }
}

TEST_CASE("pseudolabeled round trip keeps the provenance column") {
  std::vector<Sample> samples;
  for (int i = 0; i < 6; ++i) {
    Sample s;
    s.x = Vector::Constant(3, 0.5 * i);
    s.y = i % 2;
    s.attr = (i + 1) % 2;
    samples.push_back(s);
  }
  DatasetFile file{DatasetRole::kPseudoLabeled, 3, 2, 2, samples, {0, 1, 2, 0, 1, 2}};
  std::stringstream buffer;
  write_dataset(buffer, file);
  const auto loaded = read_dataset(buffer);
  CHECK(loaded.role == DatasetRole::kPseudoLabeled);
  CHECK(loaded.source_fold == std::vector<int>{0, 1, 2, 0, 1, 2});
}
