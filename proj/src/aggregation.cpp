#include "fedrio/aggregation.hpp"

#include "fedrio/server_distill.hpp"

#include <fstream>
#include <iostream>
#include <stdexcept>

namespace fedrio::agg {

Matrix init_masks(int num_clients, Eigen::Index num_scalars) {
  if (num_clients < 1) throw std::invalid_argument("masks need at least one client");
  return Matrix::Ones(num_clients, num_scalars);
}

Matrix normalize_masks(const Matrix& raw) {
  if (raw.rows() == 1) return Matrix::Ones(1, raw.cols());
  Matrix w = (raw.rowwise() - raw.colwise().maxCoeff()).array().exp().matrix();
  w.array().rowwise() /= w.colwise().sum().array();
  return w;
}

Vector aggregate(const Vector& prev_global, const Matrix& clients, const Matrix& starts, const Matrix& weights) {
  if (clients.rows() != starts.rows() || clients.rows() != weights.rows() || clients.cols() != prev_global.size() ||
      starts.cols() != prev_global.size() || weights.cols() != prev_global.size()) {
    throw std::invalid_argument("aggregate: shape mismatch");
  }
  if (clients.rows() == 1) return clients.row(0).transpose();
  return prev_global + (clients - starts).cwiseProduct(weights).colwise().sum().transpose();
}

Matrix stack(std::span<const ParamSet> sets) {
  if (sets.empty()) throw std::invalid_argument("nothing to stack");
  Matrix m(static_cast<Eigen::Index>(sets.size()), sets[0].num_scalars());
  for (std::size_t k = 0; k < sets.size(); ++k) {
    if (!sets[k].same_layout(sets[0])) throw std::invalid_argument("parameter layout mismatch between clients");
    m.row(static_cast<Eigen::Index>(k)) = sets[k].flatten().transpose();
  }
  return m;
}

ParamSet aggregate(const ParamSet& prev_global, std::span<const ParamSet> clients, std::span<const ParamSet> starts,
                   const Matrix& weights) {
  if (clients.size() != starts.size()) throw std::invalid_argument("aggregate: client/snapshot count mismatch");
  if (!clients.empty() && !clients[0].same_layout(prev_global)) throw std::invalid_argument("aggregate: layout mismatch");
  ParamSet out = prev_global;
  out.assign_flat(aggregate(prev_global.flatten(), stack(clients), stack(starts), weights));
  return out;
}

ParamSet aggregate_classifier(std::span<const ParamSet> clients) {
  const Matrix m = stack(clients);
  ParamSet out = clients[0];
  out.assign_flat(m.colwise().mean().transpose());
  return out;
}

MaskLoss mask_loss(const ParamSet& backbone, const ParamSet& global_d, const Matrix& x_tilde, std::span<const int> y) {
  ad::Tape tape;
  const Bound eps(tape, backbone, true);
  const Bound d(tape, global_d, false);
  const ad::Var logits = models::classifier_forward(d, backbone::final_projection(tape.constant(x_tilde), eps));
  const ad::Var loss = models::cross_entropy(logits, models::one_hot(y));
  tape.backward(loss);
  return {loss.scalar(), eps.grads().flatten()};
}

Matrix mask_gradient(const Vector& grad_theta, const Matrix& weights, const Matrix& deltas) {
  const Eigen::RowVectorXd mixed = deltas.cwiseProduct(weights).colwise().sum();
  Matrix g = weights.cwiseProduct(deltas.rowwise() - mixed);
  g.array().rowwise() *= grad_theta.transpose().array();
  return g;
}

bool update_masks(Matrix& raw, const Matrix& grad, double learning_rate) {
  if (raw.rows() != grad.rows() || raw.cols() != grad.cols()) throw std::invalid_argument("mask gradient shape mismatch");
  if (!grad.allFinite()) {
    std::clog << "aggregation: non-finite mask gradient; step skipped\n";
    return false;
  }
  raw -= learning_rate * grad;
  return true;
}

RoundOutput aggregate_round(Matrix& raw_masks, const ParamSet& prev_global, std::span<const ParamSet> clients,
                            std::span<const ParamSet> starts, const ParamSet& global_d, const models::Generator& g,
                            const Vector& prior, const MaskConfig& cfg, Rng& rng) {
  if (clients.empty() || clients.size() != starts.size()) throw std::invalid_argument("aggregate_round: missing uploads");
  if (raw_masks.rows() != static_cast<Eigen::Index>(clients.size()) || raw_masks.cols() != prev_global.num_scalars()) {
    throw std::invalid_argument("aggregate_round: mask shape mismatch");
  }
  const Matrix thetas = stack(clients);
  const Matrix deltas = thetas - stack(starts);
  const Vector prev = prev_global.flatten();

  const auto batch = server::sample_experience(prior, cfg.batch_size, g.dims.noise_dim, rng);
  const Matrix x_tilde = models::generate(g, batch.z, models::one_hot(batch.y));

  RoundOutput out;
  out.backbone = prev_global;
  Matrix weights = normalize_masks(raw_masks);
  out.backbone.assign_flat(aggregate(prev, thetas, thetas - deltas, weights));
  const MaskLoss ml = mask_loss(out.backbone, global_d, x_tilde, batch.y);
  out.mask_loss = ml.loss;
  if (cfg.learning_rate > 0.0 && clients.size() > 1) {
    out.mask_updated = update_masks(raw_masks, mask_gradient(ml.grad_theta, weights, deltas), cfg.learning_rate);
    if (out.mask_updated) {
      weights = normalize_masks(raw_masks);
      out.backbone.assign_flat(aggregate(prev, thetas, thetas - deltas, weights));
    }
  }
  return out;
}

Vector mean_client_weight(const Matrix& weights) {
  const double uniform = 1.0 / static_cast<double>(weights.rows());
  return (weights.array() - uniform).rowwise().mean().matrix() + Vector::Constant(weights.rows(), uniform);
}

void write_layer_mask_csv(const Matrix& raw_masks, const ParamSet& layout, const std::filesystem::path& path) {
  if (raw_masks.cols() != layout.num_scalars()) throw std::invalid_argument("mask/layout mismatch");
  const Matrix w = normalize_masks(raw_masks);
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "tensor";
  for (Eigen::Index k = 0; k < w.rows(); ++k) os << ",client_" << k;
  os << '\n';
  os.precision(10);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const Eigen::Index off = layout.offset(i);
    const Eigen::Index n = layout[i].size();
    os << layout.name(i);
    const Vector m = mean_client_weight(w.middleCols(off, n));
    for (Eigen::Index k = 0; k < w.rows(); ++k) os << ',' << m(k);
    os << '\n';
  }
}

}  // namespace fedrio::agg
