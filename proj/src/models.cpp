#include "fedrio/models.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>
#include <string>

namespace fedrio::models {

ParamSet init_classifier(int input_dim, int hidden, Rng& rng) {
  if (input_dim < 1 || hidden < 1) throw std::invalid_argument("classifier dims must be positive");
  ParamSet p;
  p.add("fc1.w", glorot(input_dim, hidden, rng));
  p.add("fc1.b", Matrix::Zero(1, hidden));
  p.add("fc2.w", glorot(hidden, kNumClasses, rng));
  p.add("fc2.b", Matrix::Zero(1, kNumClasses));
  return p;
}

ad::Var classifier_forward(const Bound& p, const ad::Var& r) {
  using namespace ad;
  const Var h = relu(add_row(matmul(r, p["fc1.w"]), p["fc1.b"]));
  return add_row(matmul(h, p["fc2.w"]), p["fc2.b"]);
}

Matrix classifier_logits(const ParamSet& params, const Matrix& r) {
  Matrix h = ((r * params.at("fc1.w")).rowwise() + params.at("fc1.b").row(0)).cwiseMax(0.0);
  return (h * params.at("fc2.w")).rowwise() + params.at("fc2.b").row(0);
}

int classifier_hidden(const ParamSet& params) { return static_cast<int>(params.at("fc1.w").cols()); }

ParamSet init_mlp(std::span<const int> widths, Rng& rng) {
  if (widths.size() < 2) throw std::invalid_argument("mlp needs input and output widths");
  ParamSet p;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    p.add("l" + std::to_string(l) + ".w", glorot(widths[l], widths[l + 1], rng));
    p.add("l" + std::to_string(l) + ".b", Matrix::Zero(1, widths[l + 1]));
  }
  return p;
}

ad::Var mlp_forward(const Bound& p, const ad::Var& x) {
  const std::size_t layers = p.vars().size() / 2;
  ad::Var cur = x;
  for (std::size_t l = 0; l < layers; ++l) {
    cur = ad::add_row(ad::matmul(cur, p[2 * l]), p[2 * l + 1]);
    if (l + 1 < layers) cur = ad::relu(cur);
  }
  return cur;
}

Matrix mlp_apply(const ParamSet& params, const Matrix& x) {
  const std::size_t layers = params.size() / 2;
  Matrix cur = x;
  for (std::size_t l = 0; l < layers; ++l) {
    cur = (cur * params[2 * l]).rowwise() + params[2 * l + 1].row(0);
    if (l + 1 < layers) cur = cur.cwiseMax(0.0);
  }
  return cur;
}

Generator init_generator(const GeneratorDims& dims, Rng& rng) {
  if (dims.noise_dim < 1 || dims.hidden < 1 || dims.out_dim < 1) throw std::invalid_argument("generator dims must be positive");
  Generator g;
  g.dims = dims;
  const int in = dims.noise_dim + kNumClasses;
  g.params.add("fc1.w", glorot(in, dims.hidden, rng));
  g.params.add("fc1.b", Matrix::Zero(1, dims.hidden));
  g.params.add("bn1.gamma", Matrix::Ones(1, dims.hidden));
  g.params.add("bn1.beta", Matrix::Zero(1, dims.hidden));
  g.params.add("fc2.w", glorot(dims.hidden, dims.hidden, rng));
  g.params.add("fc2.b", Matrix::Zero(1, dims.hidden));
  g.params.add("bn2.gamma", Matrix::Ones(1, dims.hidden));
  g.params.add("bn2.beta", Matrix::Zero(1, dims.hidden));
  g.params.add("fc3.w", glorot(dims.hidden, dims.out_dim, rng));
  g.params.add("fc3.b", Matrix::Zero(1, dims.out_dim));
  for (int l = 1; l <= 2; ++l) {
    g.buffers.add("bn" + std::to_string(l) + ".mean", Matrix::Zero(1, dims.hidden));
    g.buffers.add("bn" + std::to_string(l) + ".var", Matrix::Ones(1, dims.hidden));
  }
  return g;
}

namespace {

constexpr double kBatchNormEps = 1e-5;

ad::Var batch_norm(const ad::Var& x, const ad::Var& gamma, const ad::Var& beta, const Matrix& run_mean,
                   const Matrix& run_var, Mode mode, GeneratorOutput& out) {
  using namespace ad;
  Tape& t = *x.tape();
  Var normalized;
  if (mode == Mode::Train) {
    if (x.rows() < 2) throw std::invalid_argument("batch norm in train mode needs a batch of at least 2");
    const Var mu = col_mean(x);
    const Var centered = add_row(x, -mu);
    const Var var = col_mean(square(centered));
    const Var inv_std = safe_recip(safe_sqrt(add_scalar(var, kBatchNormEps)));
    normalized = mul_row(centered, inv_std);
    const double n = static_cast<double>(x.rows());
    out.batch_mean.push_back(mu.value());
    out.batch_var.push_back(var.value() * (n / (n - 1.0)));
  } else {
    Matrix inv_std = (run_var.array() + kBatchNormEps).rsqrt();
    normalized = mul_row(add_row(x, t.constant(-run_mean)), t.constant(std::move(inv_std)));
  }
  return add_row(mul_row(normalized, gamma), beta);
}

}  // namespace

GeneratorOutput generator_forward(const Bound& p, const Generator& g, const Matrix& z, const Matrix& y_onehot,
                                  Mode mode) {
  using namespace ad;
  if (z.cols() != g.dims.noise_dim) throw std::invalid_argument("generator: noise dim mismatch");
  if (y_onehot.cols() != kNumClasses || y_onehot.rows() != z.rows()) {
    throw std::invalid_argument("generator: label batch mismatch");
  }
  Tape& t = *p["fc1.w"].tape();
  GeneratorOutput out;
  Var h = hconcat(t.constant(z), t.constant(y_onehot));
  for (int l = 1; l <= 2; ++l) {
    const std::string s = std::to_string(l);
    h = add_row(matmul(h, p["fc" + s + ".w"]), p["fc" + s + ".b"]);
    h = relu(batch_norm(h, p["bn" + s + ".gamma"], p["bn" + s + ".beta"], g.buffers.at("bn" + s + ".mean"),
                        g.buffers.at("bn" + s + ".var"), mode, out));
  }
  out.x = add_row(matmul(h, p["fc3.w"]), p["fc3.b"]);
  return out;
}

void update_running_stats(Generator& g, const GeneratorOutput& out, double momentum) {
  for (std::size_t l = 0; l < out.batch_mean.size(); ++l) {
    const std::string s = std::to_string(l + 1);
    Matrix& m = g.buffers.at("bn" + s + ".mean");
    Matrix& v = g.buffers.at("bn" + s + ".var");
    m = (1.0 - momentum) * m + momentum * out.batch_mean[l];
    v = (1.0 - momentum) * v + momentum * out.batch_var[l];
  }
}

Matrix generate(const Generator& g, const Matrix& z, const Matrix& y_onehot, Mode mode) {
  ad::Tape tape;
  const Bound p(tape, g.params, false);
  return generator_forward(p, g, z, y_onehot, mode).x.value();
}

Matrix one_hot(std::span<const int> labels, int classes) {
  Matrix y = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) throw std::out_of_range("one_hot: label out of range");
    y(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return y;
}

ad::Var kl_rows(const ad::Var& p_logits, const ad::Var& q_logits) {
  using namespace ad;
  const Var log_p = log_softmax_rows(p_logits);
  const Var log_q = log_softmax_rows(q_logits);
  const Var p = softmax_rows(p_logits);
  return row_sum(cwise_mul(p, log_p - log_q));
}

ad::Var cross_entropy(const ad::Var& logits, const Matrix& y_onehot) {
  using namespace ad;
  if (logits.rows() != y_onehot.rows() || logits.cols() != y_onehot.cols()) {
    throw std::invalid_argument("cross_entropy: shape mismatch");
  }
  Tape& t = *logits.tape();
  return -(1.0 / static_cast<double>(logits.rows())) * sum(cwise_mul(t.constant(y_onehot), log_softmax_rows(logits)));
}

ad::Var weighted_cross_entropy_sum(const ad::Var& logits, const Matrix& y_onehot, const Matrix& weights) {
  using namespace ad;
  Tape& t = *logits.tape();
  const Var per_row = -row_sum(cwise_mul(t.constant(y_onehot), log_softmax_rows(logits)));
  return sum(cwise_mul(per_row, t.constant(weights)));
}

LabelDistribution estimate_label_distribution(std::span<const std::array<int, kNumClasses>> counts) {
  if (counts.empty()) throw std::invalid_argument("label statistics from zero clients");
  const auto k = static_cast<Eigen::Index>(counts.size());
  Matrix n(k, kNumClasses);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (int c = 0; c < kNumClasses; ++c) {
      if (counts[i][c] < 0) throw std::invalid_argument("negative label count");
      n(i, c) = counts[i][c];
    }
  }
  const double total = n.sum();
  if (total <= 0.0) throw std::invalid_argument("label statistics are all zero");
  LabelDistribution d;
  d.prior = n.colwise().sum().transpose() / total;
  d.client_weight.resize(k, kNumClasses);
  for (int c = 0; c < kNumClasses; ++c) {
    const double col = n.col(c).sum();
    if (col > 0.0) {
      d.client_weight.col(c) = n.col(c) / col;
    } else {
      d.client_weight.col(c).setConstant(1.0 / static_cast<double>(k));
      d.degenerate = true;
    }
  }
  if (d.degenerate) std::cerr << "warning: a class has zero global count; using uniform client weights for it\n";
  return d;
}

}  // namespace fedrio::models
