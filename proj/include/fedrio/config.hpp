#pragma once

// Experiment configuration: an INI file with sections [data] [federation] [model]
// [client] [server] [rl] [ablation] [run]. Unknown sections or keys are errors.

#include "fedrio/aggregation.hpp"
#include "fedrio/backbone.hpp"
#include "fedrio/client.hpp"
#include "fedrio/data.hpp"
#include "fedrio/models.hpp"
#include "fedrio/rl_agent.hpp"
#include "fedrio/server_distill.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedrio::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Method { FedRio, FedAvg, FedProx };
enum class DataSource { Synthetic, File };
enum class RewardSource { Real, Synthetic };

struct DataConfig {
  DataSource source = DataSource::Synthetic;
  data::SyntheticGraphConfig synthetic;
  std::filesystem::path path;
  std::optional<std::filesystem::path> edges_path;
  data::FileFormat format = data::FileFormat::Auto;
  data::SplitFractions split;
};

struct FederationConfig {
  int num_clients = 10;
  double alpha = 1.0;
  int rounds = 100;
  Method method = Method::FedRio;
};

struct ModelConfig {
  backbone::Config backbone;
  int d1_hidden = 32;
  std::vector<int> d2_hidden{32, 48, 64};  // cycled over clients
  models::GeneratorDims generator;
};

struct ServerConfig {
  server::DistillConfig distill;
  agg::MaskConfig mask;
  double mu_prox = 0.01;
  int adversarial_client = -1;  // uploads noise deltas when >= 0
  double adversarial_noise_std = 1.0;
};

struct RlConfig {
  rl::AgentConfig agent;
  rl::RewardConfig reward;
  RewardSource source = RewardSource::Real;
};

struct AblationConfig {
  bool no_masks = false;
  bool no_rl = false;
  bool no_adaptive_mp = false;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "runs";
  std::string name;
  int probe_size = 64;         // per-client probe for pooled RL statistics
  int consistency_probe = 256; // shared validation nodes for the consistency score
};

struct ExperimentConfig {
  DataConfig data;
  FederationConfig federation;
  ModelConfig model;
  client::Hyper client;
  ServerConfig server;
  RlConfig rl;
  AblationConfig ablation;
  RunConfig run;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
void validate(const ExperimentConfig& cfg);

// Canonical section.key -> value pairs, sorted.
std::map<std::string, std::string> to_pairs(const ExperimentConfig& cfg);
std::string to_ini(const ExperimentConfig& cfg);
// FNV-1a over the canonical pairs (output placement excluded), hex.
std::string config_hash(const ExperimentConfig& cfg);

std::string to_string(Method m);
Method parse_method(const std::string& s);

// Backbone config with the dataset's feature dim and the NC switch applied.
backbone::Config effective_backbone(const ExperimentConfig& cfg, int input_dim);

}  // namespace fedrio::config
