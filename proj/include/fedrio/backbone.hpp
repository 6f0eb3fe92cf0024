#pragma once

// Adaptive message-passing backbone.
//
// Pipeline: layer_norm -> two GraphSAGE action networks (receive / emit) giving
// per-node probabilities over {transmit, withhold} -> Gumbel-Softmax gates ->
// per-edge weights -> pruned adjacency -> GIN environment network -> two-layer
// output projection. Hard gates use the straight-through estimator.

#include "fedrio/autodiff.hpp"
#include "fedrio/params.hpp"
#include "fedrio/rng.hpp"

#include <optional>

namespace fedrio::backbone {

inline constexpr int kNumActions = 2;
inline constexpr int kTransmit = 0;
inline constexpr int kWithhold = 1;

enum class Aggregator { Mean, Sum };

struct Dims {
  int input_dim = 16;
  int hidden = 64;
  int repr_dim = 32;
  int layers = 2;
};

struct GateConfig {
  double temperature = 1.0;
  bool hard = true;
};

struct Config {
  Dims dims;
  GateConfig gate;
  Aggregator action_aggregator = Aggregator::Mean;
  Aggregator env_aggregator = Aggregator::Mean;
  // false: skip the action networks and propagate over the raw adjacency.
  bool adaptive = true;
  double layer_norm_eps = 1e-5;
};

ParamSet init_params(const Dims& dims, Rng& rng);

// Names of the final projection sub-layer (repr_dim -> repr_dim).
inline constexpr const char* kFinalProjWeight = "proj.w2";
inline constexpr const char* kFinalProjBias = "proj.b2";

// Uniform(0,1) draws driving the Gumbel noise, one row per node.
struct GateNoise {
  Matrix in;   // N x kNumActions
  Matrix out;  // N x kNumActions
  static GateNoise sample(int num_nodes, Rng& rng);
};

ad::Var layer_norm(const ad::Var& x, const ad::Var& gain, const ad::Var& bias, double eps);

// Neighbor message: sum (or mean over in-degree) of weighted source rows; zero for isolated nodes.
ad::Var aggregate_neighbors(const ad::Var& h, const ad::AdjacencyPtr& adj, const ad::Var& edge_weight,
                            Aggregator agg);

// GraphSAGE action network `prefix` ("in" or "out"): N x kNumActions probabilities.
ad::Var action_probs(const ad::Var& h, const ad::AdjacencyPtr& adj, const Bound& p, std::string_view prefix,
                     int layers, Aggregator agg);

// Row-wise Gumbel-Softmax of probability rows. `uniform` supplies the noise; an empty
// matrix means zero Gumbel noise (deterministic: hard mode then takes the argmax of p).
ad::Var gumbel_softmax(const ad::Var& probs, const Matrix& uniform, double temperature, bool hard);

// Single-vector convenience form.
Vector gumbel_softmax(const Vector& p, const Vector& uniform, double temperature, bool hard);

// w_uv = GS(p_out^u)[transmit] * GS(p_in^v)[transmit], one entry per directed edge (E x 1).
ad::Var edge_weights(const ad::Var& gs_out, const ad::Var& gs_in, const ad::AdjacencyPtr& adj);

struct Pruned {
  ad::AdjacencyPtr adjacency;   // edges with w > 0
  std::vector<int> kept;        // indices of retained edges in the source adjacency
};

Pruned prune_adjacency(const ad::AdjacencyPtr& adj, const Vector& weights);

// GIN layers: h <- relu(MLP((1 + eps_l) * h + M{w_uv h_u})). `edge_weight` may be invalid.
ad::Var env_propagate(const ad::Var& h, const ad::AdjacencyPtr& adj, const ad::Var& edge_weight, const Bound& p,
                      int layers, Aggregator agg);

// Output projection: relu(h W1 + b1) W2 + b2.
ad::Var project(const ad::Var& h, const Bound& p);

// Final projection sub-layer alone: x W2 + b2.
ad::Var final_projection(const ad::Var& x, const Bound& p);

struct Output {
  ad::Var repr;      // N x repr_dim
  ad::Var p_in;      // N x kNumActions (invalid when not adaptive)
  ad::Var p_out;
  Pruned pruned;
};

Output forward(ad::Tape& tape, const Matrix& x, const ad::AdjacencyPtr& adj, const Bound& p, const Config& cfg,
               const std::optional<GateNoise>& noise);

// Evaluation helper: representations as a plain matrix.
Matrix represent(const Matrix& x, const ad::AdjacencyPtr& adj, const ParamSet& params, const Config& cfg,
                 const std::optional<GateNoise>& noise);

}  // namespace fedrio::backbone
