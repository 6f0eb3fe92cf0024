#pragma once

// Classifiers (D1 shared architecture, D2 client-custom), conditional generators,
// the shared divergence / cross-entropy building blocks, and label statistics.

#include "fedrio/autodiff.hpp"
#include "fedrio/params.hpp"
#include "fedrio/rng.hpp"

#include <array>
#include <span>
#include <vector>

namespace fedrio::models {

inline constexpr int kNumClasses = 2;

// d_in -> hidden (ReLU) -> 2 logits.
ParamSet init_classifier(int input_dim, int hidden, Rng& rng);
ad::Var classifier_forward(const Bound& p, const ad::Var& r);
Matrix classifier_logits(const ParamSet& params, const Matrix& r);
int classifier_hidden(const ParamSet& params);

// Generic ReLU MLP over `widths` (input, hidden..., output); no activation on the output.
ParamSet init_mlp(std::span<const int> widths, Rng& rng);
ad::Var mlp_forward(const Bound& p, const ad::Var& x);
Matrix mlp_apply(const ParamSet& params, const Matrix& x);

struct GeneratorDims {
  int noise_dim = 16;
  int hidden = 64;
  int out_dim = 32;
};

enum class Mode { Train, Eval };

// (z, one-hot y) -> FC+BN+ReLU -> FC+BN+ReLU -> FC -> pseudo-representation.
struct Generator {
  GeneratorDims dims;
  ParamSet params;
  ParamSet buffers;  // BatchNorm running statistics
};

Generator init_generator(const GeneratorDims& dims, Rng& rng);

struct GeneratorOutput {
  ad::Var x;
  std::vector<Matrix> batch_mean;  // per BN layer, Train mode only
  std::vector<Matrix> batch_var;   // unbiased
};

GeneratorOutput generator_forward(const Bound& p, const Generator& g, const Matrix& z, const Matrix& y_onehot,
                                  Mode mode);
void update_running_stats(Generator& g, const GeneratorOutput& out, double momentum = 0.1);
// Plain evaluation; Eval mode unless stated.
Matrix generate(const Generator& g, const Matrix& z, const Matrix& y_onehot, Mode mode = Mode::Eval);

Matrix one_hot(std::span<const int> labels, int classes = kNumClasses);

// Per-row KL(softmax(p_logits) || softmax(q_logits)), N x 1.
ad::Var kl_rows(const ad::Var& p_logits, const ad::Var& q_logits);
// Mean over rows of -sum(y * log softmax(logits)).
ad::Var cross_entropy(const ad::Var& logits, const Matrix& y_onehot);
// Sum over rows of weight_i * CE_i.
ad::Var weighted_cross_entropy_sum(const ad::Var& logits, const Matrix& y_onehot, const Matrix& weights);

struct LabelDistribution {
  Vector prior;          // p(y)
  Matrix client_weight;  // K x 2, alpha^{k,y}; each column sums to 1
  bool degenerate = false;  // some class had zero global count
};

LabelDistribution estimate_label_distribution(std::span<const std::array<int, kNumClasses>> counts);

}  // namespace fedrio::models
