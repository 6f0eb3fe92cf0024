#pragma once

#include "fedrio/autodiff.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fedrio::data {

inline constexpr int kNumClasses = 2;  // 0 = human, 1 = bot

enum class Split : std::uint8_t { Train, Val, Test };

inline constexpr int kMinClassForSplit = 10;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Edge = std::pair<int, int>;

struct GraphDataset {
  Eigen::MatrixXd features;     // N x d
  std::vector<Edge> edges;      // undirected, stored with first < second
  std::vector<int> labels;      // per node, in {0, 1}
  std::vector<Split> split;     // per node; empty until assigned

  int num_nodes() const { return static_cast<int>(features.rows()); }
  int feature_dim() const { return static_cast<int>(features.cols()); }
  bool has_split() const { return !split.empty(); }
  std::vector<int> nodes_in(Split s) const;
  // Both edge directions over all nodes.
  ad::AdjacencyPtr adjacency() const;
};

struct SplitFractions {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

// Structural checks: endpoints in range, no self-loops or duplicates, labels binary,
// both classes present, split (if set) sized to N.
void validate(const GraphDataset& ds);

// Overall split proportions within +-tolerance of `fractions`.
void validate_split(const GraphDataset& ds, const SplitFractions& fractions, double tolerance = 0.02);

// Sorts endpoints, drops self-loops and duplicate undirected edges.
std::vector<Edge> canonical_edges(std::span<const Edge> edges, int num_nodes);

// Per-class shuffle, then round(train*n_c) train and round(val*n_c) val nodes; the rest test.
GraphDataset stratified_split(GraphDataset ds, const SplitFractions& fractions, std::uint64_t seed);

struct PartitionSpec {
  double alpha = 1.0;
  int num_clients = 10;
  std::uint64_t seed = 0;
};

struct ClientShard {
  std::vector<int> node_indices;           // global indices, ascending
  std::vector<Edge> subgraph;              // induced edges, local indices
  std::array<int, kNumClasses> label_counts{};

  int size() const { return static_cast<int>(node_indices.size()); }
};

// Per-class Dirichlet(alpha * 1_K) label skew over train nodes; induced subgraphs.
std::vector<ClientShard> dirichlet_partition(const GraphDataset& ds, const PartitionSpec& spec);

struct SyntheticGraphConfig {
  int nodes_per_class = 1000;
  int feature_dim = 16;
  double class_mean_separation = 4.0;
  double intra_class_edge_prob = 0.01;
  double inter_class_edge_prob = 0.002;
  std::uint64_t seed = 0;
};

// Two isotropic unit-variance Gaussian clusters `class_mean_separation` apart along the
// alternating-sign axis (+1,-1,+1,...)/sqrt(d), with stochastic-block-model edges.
// Node i < nodes_per_class is human.
GraphDataset generate_synthetic_bot_graph(const SyntheticGraphConfig& cfg);

// K x 2 label counts per shard.
Eigen::MatrixXi label_histogram(std::span<const ClientShard> shards);

void write_histogram_csv(const Eigen::MatrixXi& hist, const std::filesystem::path& path);

enum class FileFormat { Auto, Json, Csv };

struct DatasetSchema {
  FileFormat format = FileFormat::Auto;
  std::optional<std::filesystem::path> edges_path;  // required for CSV
  std::string id_column = "id";
  std::string label_column = "label";
  std::string feature_prefix = "f";
  std::string split_column = "split";
};

// Loads a JSON {features, edges, labels[, split]} file or a node CSV + edge CSV pair.
// Without a split in the file, one is assigned with stratified_split(split_seed) when
// every class has at least kMinClassForSplit nodes; smaller graphs stay unsplit.
GraphDataset load_dataset(const std::filesystem::path& path, const DatasetSchema& schema = {},
                          std::uint64_t split_seed = 0);

}  // namespace fedrio::data
