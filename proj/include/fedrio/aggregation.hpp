#pragma once

// Neuron-level masked aggregation. Raw masks are a K x P matrix (one row per
// client, one column per flattened backbone coordinate); normalized weights are
// the softmax of each column.

#include "fedrio/backbone.hpp"
#include "fedrio/models.hpp"
#include "fedrio/params.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace fedrio::agg {

struct MaskConfig {
  double learning_rate = 1e-2;
  int batch_size = 256;
};

// Raw logits giving uniform weights.
Matrix init_masks(int num_clients, Eigen::Index num_scalars);

// Column-wise softmax over clients.
Matrix normalize_masks(const Matrix& raw);

// prev + sum_k (clients_k - starts_k) .* weights_k, on flat vectors (rows = clients).
Vector aggregate(const Vector& prev_global, const Matrix& clients, const Matrix& starts, const Matrix& weights);
ParamSet aggregate(const ParamSet& prev_global, std::span<const ParamSet> clients, std::span<const ParamSet> starts,
                   const Matrix& weights);

// Unweighted coordinate mean.
ParamSet aggregate_classifier(std::span<const ParamSet> clients);

// Rows of flattened parameter sets.
Matrix stack(std::span<const ParamSet> sets);

struct MaskLoss {
  double loss = 0.0;
  Vector grad_theta;  // d loss / d flattened backbone; nonzero only on the final projection sub-layer
};

// Mean cross-entropy of global D on final_projection(x_tilde; backbone).
MaskLoss mask_loss(const ParamSet& backbone, const ParamSet& global_d, const Matrix& x_tilde, std::span<const int> y);

// d loss / d raw masks from d loss / d theta', through the aggregation and the column softmax.
Matrix mask_gradient(const Vector& grad_theta, const Matrix& weights, const Matrix& deltas);

// One descent step; returns false (raw untouched) when the gradient is not finite.
bool update_masks(Matrix& raw, const Matrix& grad, double learning_rate);

struct RoundOutput {
  ParamSet backbone;
  double mask_loss = 0.0;
  bool mask_updated = false;
};

// Synthesize a batch from G, score the current aggregate, step the masks, aggregate again.
RoundOutput aggregate_round(Matrix& raw_masks, const ParamSet& prev_global, std::span<const ParamSet> clients,
                            std::span<const ParamSet> starts, const ParamSet& global_d, const models::Generator& g,
                            const Vector& prior, const MaskConfig& cfg, Rng& rng);

// Per-tensor mean normalized weight of each client: header `tensor,client_0,...`.
void write_layer_mask_csv(const Matrix& raw_masks, const ParamSet& layout, const std::filesystem::path& path);

// Mean normalized weight per client, accumulated as deviations from 1/K.
Vector mean_client_weight(const Matrix& weights);

}  // namespace fedrio::agg
