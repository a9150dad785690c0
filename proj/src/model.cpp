#include "ssa/model.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

#include "ssa/util.hpp"

namespace ssa {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Vector>;
using MapConstVec = Eigen::Map<const Vector>;

// Parameter layout offsets.
struct Layout {
  int w1_off, w1_rows, w1_cols;
  int b1_off, b1_len;
  int w2_off, w2_rows, w2_cols;  // linear: unused (rows = 0)
  int b2_off, b2_len;
};

Layout layout_of(const SoftmaxClassifier& m) {
  if (m.arch == Arch::kLinear) {
    const int w = m.out_dim * m.in_dim;
    return Layout{0, m.out_dim, m.in_dim, w, m.out_dim, 0, 0, 0, 0, 0};
  }
  const int w1 = m.hidden_dim * m.in_dim;
  const int w2 = m.out_dim * m.hidden_dim;
  return Layout{0,           m.hidden_dim, m.in_dim, w1,      m.hidden_dim,
                w1 + m.hidden_dim, m.out_dim,    m.hidden_dim, w1 + m.hidden_dim + w2,
                m.out_dim};
}

Matrix row_softmax(Matrix logits) {
  // Stable: subtract the row max before exponentiating.
  Vector row_max = logits.rowwise().maxCoeff();
  logits.colwise() -= row_max;
  Matrix probs = logits.array().exp();
  Vector sums = probs.rowwise().sum();
  probs.array().colwise() /= sums.array();
  return probs;
}

Matrix batch_logits(const SoftmaxClassifier& m, const Matrix& X, Matrix* hidden_pre = nullptr,
                    Matrix* hidden_act = nullptr) {
  const Layout L = layout_of(m);
  if (m.arch == Arch::kLinear) {
    MapConstMat W(m.params.data() + L.w1_off, L.w1_rows, L.w1_cols);
    MapConstVec b(m.params.data() + L.b1_off, L.b1_len);
    return (X * W.transpose()).rowwise() + b.transpose();
  }
  MapConstMat W1(m.params.data() + L.w1_off, L.w1_rows, L.w1_cols);
  MapConstVec b1(m.params.data() + L.b1_off, L.b1_len);
  MapConstMat W2(m.params.data() + L.w2_off, L.w2_rows, L.w2_cols);
  MapConstVec b2(m.params.data() + L.b2_off, L.b2_len);
  Matrix pre = (X * W1.transpose()).rowwise() + b1.transpose();
  Matrix act = pre.cwiseMax(0.0);
  if (hidden_pre) *hidden_pre = pre;
  if (hidden_act) *hidden_act = act;
  return (act * W2.transpose()).rowwise() + b2.transpose();
}

SoftmaxClassifier init_model(Arch arch, int in_dim, int hidden_dim, int out_dim,
                             std::uint64_t seed) {
  if (in_dim < 1 || out_dim < 2) throw std::invalid_argument("model dims must satisfy in>=1, out>=2");
  if (arch == Arch::kMlp && hidden_dim < 1) throw std::invalid_argument("mlp needs hidden_dim >= 1");
  SoftmaxClassifier m;
  m.arch = arch;
  m.in_dim = in_dim;
  m.out_dim = out_dim;
  m.hidden_dim = arch == Arch::kMlp ? hidden_dim : 0;
  m.params = Vector::Zero(param_count(arch, in_dim, m.hidden_dim, out_dim));

  std::mt19937_64 rng(seed);
  const Layout L = layout_of(m);
  auto fill = [&rng, &m](int off, int len, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (int i = 0; i < len; ++i) m.params[off + i] = dist(rng);
  };
  if (arch == Arch::kLinear) {
    fill(L.w1_off, L.w1_rows * L.w1_cols, in_dim);
    fill(L.b1_off, L.b1_len, in_dim);
  } else {
    fill(L.w1_off, L.w1_rows * L.w1_cols, in_dim);
    fill(L.b1_off, L.b1_len, in_dim);
    fill(L.w2_off, L.w2_rows * L.w2_cols, m.hidden_dim);
    fill(L.b2_off, L.b2_len, m.hidden_dim);
  }
  return m;
}

}  // namespace

std::string to_string(Arch arch) { return arch == Arch::kLinear ? "linear" : "mlp"; }

Arch parse_arch(const std::string& s) {
  if (s == "linear") return Arch::kLinear;
  if (s == "mlp") return Arch::kMlp;
  throw std::invalid_argument("unknown arch: " + s);
}

int param_count(Arch arch, int in_dim, int hidden_dim, int out_dim) {
  if (arch == Arch::kLinear) return out_dim * in_dim + out_dim;
  return hidden_dim * in_dim + hidden_dim + out_dim * hidden_dim + out_dim;
}

SoftmaxClassifier make_linear(int in_dim, int out_dim, std::uint64_t seed) {
  return init_model(Arch::kLinear, in_dim, 0, out_dim, seed);
}

SoftmaxClassifier make_mlp(int in_dim, int hidden_dim, int out_dim, std::uint64_t seed) {
  return init_model(Arch::kMlp, in_dim, hidden_dim, out_dim, seed);
}

Vector forward(const SoftmaxClassifier& model, const Vector& x) {
  if (x.size() != model.in_dim)
    throw std::invalid_argument("forward: expected dim " + std::to_string(model.in_dim) +
                                ", got " + std::to_string(x.size()));
  Matrix probs = forward_batch(model, x.transpose());
  return probs.row(0).transpose();
}

Matrix forward_batch(const SoftmaxClassifier& model, const Matrix& X) {
  if (X.cols() != model.in_dim)
    throw std::invalid_argument("forward_batch: expected dim " + std::to_string(model.in_dim) +
                                ", got " + std::to_string(X.cols()));
  return row_softmax(batch_logits(model, X));
}

double cross_entropy(const Vector& probs, int label) {
  if (label < 0 || label >= probs.size())
    throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                " out of range for " + std::to_string(probs.size()) + " classes");
  return -std::log(std::max(probs[label], 1e-12));
}

Vector grad(const SoftmaxClassifier& model, const Matrix& X, const std::vector<int>& labels,
            const Vector& weights) {
  const auto n = X.rows();
  if (n == 0) throw std::invalid_argument("grad: empty batch");
  if (static_cast<Eigen::Index>(labels.size()) != n || weights.size() != n)
    throw std::invalid_argument("grad: batch size mismatch");
  for (int label : labels)
    if (label < 0 || label >= model.out_dim) throw std::invalid_argument("grad: label out of range");
  if ((weights.array() < 0.0).any()) throw std::invalid_argument("grad: negative weight");

  Matrix hidden_pre, hidden_act;
  Matrix probs = row_softmax(batch_logits(model, X, &hidden_pre, &hidden_act));

  // dCE/dlogits for sample i is w_i * (p_i - onehot(label_i)).
  Matrix delta = probs;
  for (Eigen::Index i = 0; i < n; ++i) delta(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
  delta.array().colwise() *= weights.array();

  const Layout L = layout_of(model);
  Vector g = Vector::Zero(model.params.size());
  if (model.arch == Arch::kLinear) {
    MapMat dW(g.data() + L.w1_off, L.w1_rows, L.w1_cols);
    MapVec db(g.data() + L.b1_off, L.b1_len);
    dW = delta.transpose() * X;
    db = delta.colwise().sum().transpose();
  } else {
    MapConstMat W2(model.params.data() + L.w2_off, L.w2_rows, L.w2_cols);
    MapMat dW1(g.data() + L.w1_off, L.w1_rows, L.w1_cols);
    MapVec db1(g.data() + L.b1_off, L.b1_len);
    MapMat dW2(g.data() + L.w2_off, L.w2_rows, L.w2_cols);
    MapVec db2(g.data() + L.b2_off, L.b2_len);
    dW2 = delta.transpose() * hidden_act;
    db2 = delta.colwise().sum().transpose();
    Matrix delta1 = (delta * W2).cwiseProduct((hidden_pre.array() > 0.0).cast<double>().matrix());
    dW1 = delta1.transpose() * X;
    db1 = delta1.colwise().sum().transpose();
  }
  return g;
}

void sgd_step(SoftmaxClassifier& model, const Vector& gradient, const SgdConfig& cfg,
              Vector& velocity) {
  if (gradient.size() != model.params.size())
    throw std::invalid_argument("sgd_step: gradient size mismatch");
  if (velocity.size() == 0) velocity = Vector::Zero(model.params.size());
  if (velocity.size() != model.params.size())
    throw std::invalid_argument("sgd_step: velocity size mismatch");
  velocity = cfg.momentum * velocity + gradient + cfg.weight_decay * model.params;
  model.params -= cfg.learning_rate * velocity;
}

Vector hidden_repr(const SoftmaxClassifier& model, const Vector& x) {
  if (x.size() != model.in_dim) throw std::invalid_argument("hidden_repr: dimension mismatch");
  if (model.arch == Arch::kLinear) return x;
  Matrix pre, act;
  batch_logits(model, x.transpose(), &pre, &act);
  return act.row(0).transpose();
}

void save_checkpoint(std::ostream& out, const SoftmaxClassifier& model, std::uint64_t seed) {
  out << "ssa-model arch=" << to_string(model.arch) << " in=" << model.in_dim
      << " out=" << model.out_dim << " hidden=" << model.hidden_dim << " seed=" << seed
      << " params=" << model.params.size() << "\n";
  for (Eigen::Index i = 0; i < model.params.size(); ++i) out << format_double(model.params[i]) << "\n";
}

SoftmaxClassifier load_checkpoint(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw std::runtime_error("checkpoint: missing header");
  std::istringstream hs(header);
  std::string magic;
  hs >> magic;
  if (magic != "ssa-model") throw std::runtime_error("checkpoint: bad magic '" + magic + "'");
  std::map<std::string, std::string> fields;
  std::string tok;
  while (hs >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos) throw std::runtime_error("checkpoint: bad header token " + tok);
    fields[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  SoftmaxClassifier m;
  m.arch = parse_arch(fields.at("arch"));
  m.in_dim = std::stoi(fields.at("in"));
  m.out_dim = std::stoi(fields.at("out"));
  m.hidden_dim = std::stoi(fields.at("hidden"));
  const long n = std::stol(fields.at("params"));
  if (n != param_count(m.arch, m.in_dim, m.hidden_dim, m.out_dim))
    throw std::runtime_error("checkpoint: parameter count does not match dims");
  m.params = Vector::Zero(n);
  for (long i = 0; i < n; ++i)
    if (!(in >> m.params[i])) throw std::runtime_error("checkpoint: truncated parameter list");
  return m;
}

void save_checkpoint_file(const std::string& path, const SoftmaxClassifier& model,
                          std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  save_checkpoint(out, model, seed);
}

SoftmaxClassifier load_checkpoint_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  return load_checkpoint(in);
}

}  // namespace ssa
