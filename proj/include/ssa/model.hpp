// Minimal differentiable softmax classifier (linear or one hidden layer)
// with exact gradients. Used both as the spurious-attribute predictor and as
// the target classifier.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ssa/types.hpp"

namespace ssa {

enum class Arch { kLinear, kMlp };

std::string to_string(Arch arch);
Arch parse_arch(const std::string& s);

struct SgdConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  int batch_size = 64;
  std::uint64_t seed = 0;
};

// Flat parameter vector; layout:
//   linear: W (out x in, row-major), b (out)
//   mlp:    W1 (hidden x in), b1 (hidden), W2 (out x hidden), b2 (out)
struct SoftmaxClassifier {
  Arch arch = Arch::kLinear;
  int in_dim = 0;
  int out_dim = 0;
  int hidden_dim = 0;  // 0 for linear
  Vector params;
};

int param_count(Arch arch, int in_dim, int hidden_dim, int out_dim);

// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)], seeded.
SoftmaxClassifier make_linear(int in_dim, int out_dim, std::uint64_t seed);
SoftmaxClassifier make_mlp(int in_dim, int hidden_dim, int out_dim, std::uint64_t seed);

// Softmax probabilities, max-subtracted for stability.
Vector forward(const SoftmaxClassifier& model, const Vector& x);
// Rows of X are samples; returns one probability row per sample.
Matrix forward_batch(const SoftmaxClassifier& model, const Matrix& X);

// -log(probs[label]) with probs clamped below at 1e-12.
double cross_entropy(const Vector& probs, int label);

// Exact gradient of sum_i weights[i] * CE(f(x_i), labels[i]) over the flat
// parameter vector. Callers encode batch means through the weights.
Vector grad(const SoftmaxClassifier& model, const Matrix& X,
            const std::vector<int>& labels, const Vector& weights);

// velocity <- momentum*velocity + gradient + weight_decay*params
// params   <- params - learning_rate*velocity
void sgd_step(SoftmaxClassifier& model, const Vector& gradient,
              const SgdConfig& cfg, Vector& velocity);

// Last hidden activations (the input itself for the linear arch); the
// representation fed to the contrastive loss.
Vector hidden_repr(const SoftmaxClassifier& model, const Vector& x);

// Text checkpoint: header (arch, dims, seed) + one parameter per line,
// round-trip exact.
void save_checkpoint(std::ostream& out, const SoftmaxClassifier& model,
                     std::uint64_t seed = 0);
SoftmaxClassifier load_checkpoint(std::istream& in);
void save_checkpoint_file(const std::string& path, const SoftmaxClassifier& model,
                          std::uint64_t seed = 0);
SoftmaxClassifier load_checkpoint_file(const std::string& path);

}  // namespace ssa
