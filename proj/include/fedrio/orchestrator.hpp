#pragma once

// End-to-end federated runs: FedRio (three-stage clients, masked aggregation,
// generator distillation, RL download momenta), FedAvg and FedProx.

#include "fedrio/aggregation.hpp"
#include "fedrio/client.hpp"
#include "fedrio/config.hpp"
#include "fedrio/data.hpp"
#include "fedrio/records.hpp"
#include "fedrio/rl_agent.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace fedrio::orchestrator {

class RunAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dataset, split, shards and per-client local graphs.
struct Environment {
  data::GraphDataset dataset;
  ad::AdjacencyPtr adjacency;  // full graph
  std::vector<data::ClientShard> shards;
  std::vector<client::LocalData> locals;
  std::vector<int> val_nodes;
  std::vector<int> test_nodes;
  std::vector<int> consistency_probe;  // shared validation nodes
  models::LabelDistribution labels;
};

data::GraphDataset load_data(const config::ExperimentConfig& cfg);
Environment prepare(const config::ExperimentConfig& cfg);

struct ServerState {
  ParamSet backbone;
  ParamSet classifier;
  models::Generator generator;
  Matrix raw_masks;
};

struct RoundEvent {
  int t;
  const ServerState& server;
  std::span<const client::ClientState> clients;
  std::span<const ParamSet> uploads;  // backbones as sent to the server
  std::span<const ParamSet> starts;   // backbones at the start of local training
  const records::RoundRecord& record;
};

struct RunOptions {
  std::optional<std::filesystem::path> records_path;
  std::function<void(const RoundEvent&)> on_round;
  std::optional<double> target;  // rounds-to-target threshold; rl.omega by default
};

struct RunSummary {
  std::string method;
  int rounds = 0;
  double best_acc = 0.0;
  double best_f1 = 0.0;
  double target = 0.0;
  std::optional<int> rounds_to_target;
  double first_consistency = 0.0;
  double final_consistency = 0.0;
};

struct RunResult {
  RunSummary summary;
  std::vector<records::RoundRecord> records;
  ServerState server;
  std::vector<client::ClientState> clients;
  std::optional<rl::Agent> agent;  // FedRio with RL only
};

RunResult run(const config::ExperimentConfig& cfg, const RunOptions& opts = {});
RunResult run(const config::ExperimentConfig& cfg, const Environment& env, const RunOptions& opts = {});
RunResult run_fedrio(const config::ExperimentConfig& cfg, const Environment& env, const RunOptions& opts = {});
RunResult run_fedavg(const config::ExperimentConfig& cfg, const Environment& env, const RunOptions& opts = {});
RunResult run_fedprox(const config::ExperimentConfig& cfg, const Environment& env, double mu_prox,
                      const RunOptions& opts = {});

// Initial global models and client states.
ServerState init_server(const config::ExperimentConfig& cfg, const Environment& env);
std::vector<client::ClientState> init_clients(const config::ExperimentConfig& cfg, const Environment& env,
                                              const ServerState& server);

// First 1-based round whose accuracy reaches `target`.
std::optional<int> rounds_to_target(std::span<const records::RoundRecord> recs, double target);

// Mean distance between same-class centroids of different clients over the mean
// distance between the two class centroids within a client. Rows of reps[k] align with labels.
double feature_consistency_score(std::span<const Matrix> reps, std::span<const int> labels);

double macro_f1(std::span<const int> predicted, std::span<const int> truth);

struct Evaluation {
  double acc = 0.0;
  double f1 = 0.0;
};

// Global backbone + classifier on the full graph with deterministic gates, scored on `nodes`.
Evaluation evaluate(const ParamSet& backbone, const ParamSet& classifier, const backbone::Config& bcfg,
                    const data::GraphDataset& ds, const ad::AdjacencyPtr& adj, std::span<const int> nodes);

// JSON parameter checkpoints.
void save_params(const ParamSet& p, const std::filesystem::path& path);
ParamSet load_params(const std::filesystem::path& path);

std::string summary_json(const RunSummary& s);

}  // namespace fedrio::orchestrator
