#pragma once

// Plain (non-differentiable) dense helpers, templated on the Eigen expression
// type so they accept blocks, maps and lazy expressions alike.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace fedrio {

inline constexpr double kProbFloor = 1e-12;

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> softmax_rows(
    const Eigen::MatrixBase<Derived>& logits) {
  using M = Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  M shifted = logits.colwise() - logits.rowwise().maxCoeff();
  M p = shifted.array().exp().matrix();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

// KL(p || q) for probability vectors, both clamped below at kProbFloor.
template <typename DerivedP, typename DerivedQ>
typename DerivedP::Scalar kl_divergence(const Eigen::MatrixBase<DerivedP>& p,
                                        const Eigen::MatrixBase<DerivedQ>& q) {
  using S = typename DerivedP::Scalar;
  const auto pc = p.array().max(S(kProbFloor));
  const auto qc = q.array().max(S(kProbFloor));
  return std::max(S(0), (pc * (pc.log() - qc.log())).sum());
}

// Mean cross-entropy of row-wise logits against integer labels.
template <typename Derived, typename Labels>
typename Derived::Scalar cross_entropy(const Eigen::MatrixBase<Derived>& logits, const Labels& labels) {
  using S = typename Derived::Scalar;
  S total = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const S mx = logits.row(i).maxCoeff();
    const S lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    total += lse - logits(i, static_cast<Eigen::Index>(labels[i]));
  }
  return total / static_cast<S>(logits.rows());
}

// Row-wise layer normalization: gain * (x - mean) / (std + eps) + bias, biased variance.
template <typename DX, typename DG, typename DB>
Eigen::Matrix<typename DX::Scalar, Eigen::Dynamic, Eigen::Dynamic> layer_norm(
    const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DG>& gain, const Eigen::MatrixBase<DB>& bias,
    typename DX::Scalar eps) {
  using M = Eigen::Matrix<typename DX::Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  M centered = x.colwise() - x.rowwise().mean();
  auto stddev = (centered.array().square().rowwise().sum() / static_cast<typename DX::Scalar>(x.cols())).sqrt();
  M out = (centered.array().colwise() / (stddev + eps)).matrix();
  out.array().rowwise() *= gain.array().reshaped().transpose();
  out.array().rowwise() += bias.array().reshaped().transpose();
  return out;
}

// Cosine similarity, defined as 0 when either vector has zero norm.
template <typename DA, typename DB>
typename DA::Scalar cosine_similarity(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
  const auto na = a.norm();
  const auto nb = b.norm();
  if (na == 0 || nb == 0) return 0;
  return a.dot(b) / (na * nb);
}

template <typename Derived>
Eigen::Index argmax(const Eigen::MatrixBase<Derived>& v) {
  Eigen::Index best = 0;
  v.reshaped().maxCoeff(&best);
  return best;
}

}  // namespace fedrio
