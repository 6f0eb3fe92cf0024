#pragma once

// One client's local round: Stage 1 trains the classifiers D1/D2, Stage 2 the
// backbone, Stage 3 the local generator. Each stage owns a fresh Adam optimizer
// and only ever writes its own parameter group.

#include "fedrio/backbone.hpp"
#include "fedrio/data.hpp"
#include "fedrio/models.hpp"
#include "fedrio/params.hpp"

#include <map>
#include <stdexcept>
#include <string>

namespace fedrio::client {

struct Hyper {
  double alpha_dis = 0.5;   // weight of the distillation terms
  double gamma_adv = 0.1;   // weight of the adversarial terms
  double mu_con = 0.5;      // weight of the contrastive term
  double tau_con = 0.5;     // contrastive temperature
  int local_epochs = 5;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  // Stage 3 conditioning labels: uniform over classes, or the local label prior.
  bool stage3_uniform_labels = true;
};

void validate(const Hyper& h);

class RoundAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A shard materialized as a standalone graph.
struct LocalData {
  Matrix features;
  ad::AdjacencyPtr adjacency;
  std::vector<int> labels;
  std::vector<int> probe;  // fixed local indices used for pooled statistics
};

LocalData make_local_data(const data::GraphDataset& ds, const data::ClientShard& shard, int probe_size = 64);

struct ClientState {
  int id = 0;
  ParamSet backbone;
  ParamSet d1;
  ParamSet d2;
  models::Generator generator;
  ParamSet prev_backbone;  // previous round's backbone, contrastive negative
};

struct Globals {
  const ParamSet& backbone;
  const ParamSet& classifier;
  const models::Generator& generator;
};

struct RoundMetrics {
  int client_id = 0;
  std::map<std::string, double> losses;  // mean per stage / component
  double local_accuracy = 0.0;
  Vector pooled_repr;   // mean representation over the probe nodes
  Vector pred_dist;     // mean D1 class distribution over the probe nodes
  double loss = 0.0;    // D1 cross-entropy over the probe nodes
};

// ---- loss building blocks ----
ad::Var distill_loss(const Bound& d1, const ad::Var& r_real, const ad::Var& x_tilde);
ad::Var adversarial_loss(const Bound& d1, const Bound& d2, const ad::Var& r);
// Per-row InfoNCE with one positive (global) and one negative (previous); N x 1.
ad::Var contrastive_loss(const ad::Var& r, const ad::Var& r_glo, const ad::Var& r_pre, double tau);
double contrastive_loss(const Vector& r, const Vector& r_glo, const Vector& r_pre, double tau);
ad::Var diversity_loss(const ad::Var& x_tilde, const Matrix& z);

struct StageLoss {
  ad::Var total;
  std::map<std::string, double> parts;
};

struct Stage1Batch {
  ad::Var r;          // real representations (constant)
  Matrix y;           // one-hot labels
  Matrix x_global;    // global G pseudo samples for y
  Matrix x_local;     // local G_k pseudo samples for y
};
StageLoss stage1_loss(const Bound& d1, const Bound& d2, const Stage1Batch& b, const Hyper& h);

struct Stage2Batch {
  ad::Var r;       // trainable-backbone representations
  Matrix y;
  Matrix r_glo;    // global backbone representations
  Matrix r_pre;    // previous-round backbone representations
};
StageLoss stage2_loss(const Bound& d1, const Bound& d2, const Stage2Batch& b, const Hyper& h);

struct Stage3Batch {
  ad::Var x_tilde;  // G_k(z, y), trainable
  Matrix z;
  Matrix y;
};
StageLoss stage3_loss(const Bound& d1, const Bound& d2, const Stage3Batch& b);

RoundMetrics run_local_round(ClientState& state, const LocalData& local, const Globals& globals, const Hyper& hyper,
                             const backbone::Config& cfg, Rng& rng);

// Pooled statistics and accuracy of (backbone, D1) on the local graph.
RoundMetrics measure(const ClientState& state, const LocalData& local, const backbone::Config& cfg, Rng& rng);

// Cross-entropy training of backbone + classifier for the baselines; a positive `mu_prox`
// adds (mu_prox / 2) * ||theta - theta_global||^2 over both parameter groups.
struct ProxAnchor {
  const ParamSet& backbone;
  const ParamSet& classifier;
  double mu_prox;
};
RoundMetrics run_supervised_round(ClientState& state, const LocalData& local, const Hyper& hyper,
                                  const backbone::Config& cfg, Rng& rng, const ProxAnchor* prox = nullptr);

// (mu / 2) * sum ||p - anchor||^2 over all tensors.
ad::Var proximal_term(const Bound& p, const ParamSet& anchor, double mu);

}  // namespace fedrio::client
