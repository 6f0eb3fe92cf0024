#pragma once

// Double-DQN agent choosing per-client download momenta. The joint action is
// factorized into one Q-head per client over a fixed momentum grid.

#include "fedrio/params.hpp"
#include "fedrio/rng.hpp"

#include <array>
#include <deque>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace fedrio::rl {

inline constexpr std::array<double, 5> kMomenta{0.0, 0.25, 0.5, 0.75, 1.0};
inline constexpr int kNumActions = static_cast<int>(kMomenta.size());

// One client's contribution to the global state.
struct Observation {
  int client_id = 0;
  Vector pooled_repr;
  Vector pred_dist;  // 2 entries
  double loss = 0.0;
};

// Concatenation in client-index order of (pooled_repr, pred_dist, loss); length K (d_r + 3).
Vector build_state(std::span<const Observation> obs, int num_clients, int repr_dim);

struct RewardConfig {
  double xi = 64.0;
  double omega = 0.9;  // target accuracy
  double gamma = 0.99;
};

// xi^(acc - omega) - 1.
double compute_reward(double accuracy, const RewardConfig& cfg);

struct AgentConfig {
  std::vector<int> hidden{64};  // empty: linear Q-network
  double learning_rate = 5e-4;
  double gamma = 0.99;
  int buffer_capacity = 2000;
  int batch_size = 32;
  int sync_every = 10;  // online updates between target copies
  int warmup_rounds = 10;
};

struct Transition {
  Vector state;
  std::vector<int> action;  // grid index per head
  double reward = 0.0;
  Vector next_state;
  bool terminal = false;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);
  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& operator[](std::size_t i) const { return items_[i]; }
  // Uniform without replacement.
  std::vector<const Transition*> sample(std::size_t n, Rng& rng) const;

  // Binary checkpoint: "FRRB" magic, u32 version, little-endian payload.
  void save(const std::filesystem::path& path) const;
  static ReplayBuffer load(const std::filesystem::path& path);

 private:
  std::size_t capacity_;
  std::deque<Transition> items_;
};

// MLP state -> K * |A| Q-values; head k owns columns [k |A|, (k+1) |A|).
ParamSet init_q_network(int state_dim, int num_heads, std::span<const int> hidden, Rng& rng);
Matrix q_values(const ParamSet& net, const Matrix& states);

enum class SelectMode { Sample, Greedy };

// Per head: softmax over the head's Q-values, then sample or argmax.
std::vector<int> select_action(const ParamSet& online, const Vector& state, int num_heads, SelectMode mode, Rng& rng);
std::vector<double> action_probabilities(std::span<const double> q);

std::vector<int> warmup_policy(int num_heads, Rng& rng);
std::vector<double> momenta(std::span<const int> action);

// (1 - alpha) prev + alpha downloaded.
ParamSet apply_client_update(const ParamSet& prev, const ParamSet& downloaded, double alpha);

// Per-head target r + gamma Q_target(s', k, argmax_a Q_online(s', k, a)); r alone when terminal.
Vector ddqn_target(const Transition& t, const ParamSet& online, const ParamSet& target, double gamma, int num_heads);

// Fixed regression targets for a batch; only the taken action of each head is scored.
struct TdBatch {
  Matrix states;
  Matrix targets;  // N x (K |A|), zero off the taken actions
  Matrix mask;     // 1 at taken actions
};
TdBatch make_td_batch(std::span<const Transition* const> batch, const ParamSet& online, const ParamSet& target,
                      double gamma, int heads);
// Mean over scored entries of the squared TD error of `online`.
ad::Var td_loss(const Bound& online, const TdBatch& b);

class Agent {
 public:
  Agent(const AgentConfig& cfg, int num_heads, int state_dim, Rng& rng);

  const AgentConfig& config() const { return cfg_; }
  int num_heads() const { return heads_; }
  const ParamSet& online() const { return online_; }
  const ParamSet& target() const { return target_; }
  ParamSet& online() { return online_; }
  ReplayBuffer& buffer() { return buffer_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  long updates() const { return updates_; }
  long since_sync() const { return since_sync_; }

  // Mean squared TD error of the online network over `batch`, against fixed targets.
  double td_loss(std::span<const Transition* const> batch) const;

  // One Adam step on a sampled batch; nullopt (with a log line) when the buffer is too small.
  // Copies the target every cfg.sync_every updates. Returns the pre-step TD loss.
  std::optional<double> q_update_step(Rng& rng);
  // Same, on an explicit batch.
  double q_update_step(std::span<const Transition* const> batch);

  void sync_target();

 private:
  AgentConfig cfg_;
  int heads_;
  ParamSet online_, target_;
  Adam opt_;
  ReplayBuffer buffer_;
  long updates_ = 0;
  long since_sync_ = 0;
};

}  // namespace fedrio::rl
