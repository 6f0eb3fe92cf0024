#include "fedrio/rl_agent.hpp"

#include "fedrio/math.hpp"
#include "fedrio/models.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace fedrio::rl {

Vector build_state(std::span<const Observation> obs, int num_clients, int repr_dim) {
  std::vector<const Observation*> by_id(num_clients, nullptr);
  for (const auto& o : obs) {
    if (o.client_id < 0 || o.client_id >= num_clients) throw std::invalid_argument("observation from unknown client");
    if (by_id[o.client_id]) throw std::invalid_argument("duplicate observation for client " + std::to_string(o.client_id));
    if (o.pooled_repr.size() != repr_dim || o.pred_dist.size() != 2) throw std::invalid_argument("observation shape mismatch");
    by_id[o.client_id] = &o;
  }
  const int stride = repr_dim + 3;
  Vector s(static_cast<Eigen::Index>(num_clients) * stride);
  for (int k = 0; k < num_clients; ++k) {
    if (!by_id[k]) throw std::invalid_argument("missing observation for client " + std::to_string(k));
    const Observation& o = *by_id[k];
    s.segment(k * stride, repr_dim) = o.pooled_repr;
    s.segment(k * stride + repr_dim, 2) = o.pred_dist;
    s(k * stride + repr_dim + 2) = o.loss;
  }
  if (!s.allFinite()) throw std::invalid_argument("non-finite RL state");
  return s;
}

double compute_reward(double accuracy, const RewardConfig& cfg) {
  if (!(cfg.xi > 1.0)) throw std::invalid_argument("reward base xi must be > 1");
  if (!(cfg.omega > 0.0 && cfg.omega <= 1.0)) throw std::invalid_argument("target accuracy must lie in (0, 1]");
  if (!(accuracy >= 0.0 && accuracy <= 1.0)) throw std::invalid_argument("accuracy must lie in [0, 1]");
  return std::pow(cfg.xi, accuracy - cfg.omega) - 1.0;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  if (items_.size() == capacity_) items_.pop_front();
  items_.push_back(std::move(t));
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  if (n > items_.size()) throw std::invalid_argument("replay sample larger than buffer");
  std::vector<std::size_t> idx(items_.size());
  std::iota(idx.begin(), idx.end(), 0);
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  std::vector<const Transition*> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(&items_[idx[i]]);
  return out;
}

namespace {

constexpr char kMagic[4] = {'F', 'R', 'R', 'B'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::uint64_t bits = 0;
  if constexpr (sizeof(T) == 8) {
    bits = std::bit_cast<std::uint64_t>(v);
  } else {
    std::memcpy(&bits, &v, sizeof(T));
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) os.put(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <typename T>
T get(std::istream& is) {
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = is.get();
    if (c == EOF) throw std::runtime_error("replay checkpoint truncated");
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  T v;
  if constexpr (sizeof(T) == 8) {
    v = std::bit_cast<T>(bits);
  } else {
    std::memcpy(&v, &bits, sizeof(T));
  }
  return v;
}

void put_vector(std::ostream& os, const Vector& v) {
  put<std::uint64_t>(os, static_cast<std::uint64_t>(v.size()));
  for (double x : v) put<double>(os, x);
}

Vector get_vector(std::istream& is) {
  const auto n = get<std::uint64_t>(is);
  if (n > (1ULL << 32)) throw std::runtime_error("replay checkpoint corrupt");
  Vector v(static_cast<Eigen::Index>(n));
  for (auto& x : v) x = get<double>(is);
  return v;
}

}  // namespace

void ReplayBuffer::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kVersion);
  put<std::uint64_t>(os, capacity_);
  put<std::uint64_t>(os, items_.size());
  for (const auto& t : items_) {
    put_vector(os, t.state);
    put<std::uint64_t>(os, t.action.size());
    for (int a : t.action) put<std::int32_t>(os, a);
    put<double>(os, t.reward);
    put_vector(os, t.next_state);
    put<std::uint8_t>(os, t.terminal ? 1 : 0);
  }
}

ReplayBuffer ReplayBuffer::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("not a replay checkpoint");
  if (get<std::uint32_t>(is) != kVersion) throw std::runtime_error("unsupported replay checkpoint version");
  ReplayBuffer buf(get<std::uint64_t>(is));
  const auto n = get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < n; ++i) {
    Transition t;
    t.state = get_vector(is);
    t.action.resize(get<std::uint64_t>(is));
    for (int& a : t.action) a = get<std::int32_t>(is);
    t.reward = get<double>(is);
    t.next_state = get_vector(is);
    t.terminal = get<std::uint8_t>(is) != 0;
    buf.push(std::move(t));
  }
  return buf;
}

ParamSet init_q_network(int state_dim, int num_heads, std::span<const int> hidden, Rng& rng) {
  std::vector<int> widths{state_dim};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(num_heads * kNumActions);
  return models::init_mlp(widths, rng);
}

Matrix q_values(const ParamSet& net, const Matrix& states) { return models::mlp_apply(net, states); }

std::vector<double> action_probabilities(std::span<const double> q) {
  const Eigen::Map<const Eigen::RowVectorXd> row(q.data(), static_cast<Eigen::Index>(q.size()));
  const Matrix p = softmax_rows(row);
  return {p.data(), p.data() + p.size()};
}

std::vector<int> select_action(const ParamSet& online, const Vector& state, int num_heads, SelectMode mode, Rng& rng) {
  const Matrix q = q_values(online, state.transpose());
  if (q.cols() != num_heads * kNumActions) throw std::invalid_argument("Q-network head count mismatch");
  std::vector<int> action(num_heads);
  for (int k = 0; k < num_heads; ++k) {
    const Eigen::RowVectorXd head = q.block(0, k * kNumActions, 1, kNumActions);
    if (mode == SelectMode::Greedy) {
      action[k] = static_cast<int>(argmax(head));
    } else {
      const auto p = action_probabilities(std::span<const double>(head.data(), kNumActions));
      std::discrete_distribution<int> dist(p.begin(), p.end());
      action[k] = dist(rng);
    }
  }
  return action;
}

std::vector<int> warmup_policy(int num_heads, Rng& rng) {
  std::uniform_int_distribution<int> pick(0, kNumActions - 1);
  std::vector<int> action(num_heads);
  for (int& a : action) a = pick(rng);
  return action;
}

std::vector<double> momenta(std::span<const int> action) {
  std::vector<double> out;
  out.reserve(action.size());
  for (int a : action) out.push_back(kMomenta.at(static_cast<std::size_t>(a)));
  return out;
}

ParamSet apply_client_update(const ParamSet& prev, const ParamSet& downloaded, double alpha) {
  if (!prev.same_layout(downloaded)) throw std::invalid_argument("client update: parameter layout mismatch");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("client update: momentum outside [0, 1]");
  ParamSet out = prev;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - alpha) * prev[i] + alpha * downloaded[i];
  return out;
}

Vector ddqn_target(const Transition& t, const ParamSet& online, const ParamSet& target, double gamma, int num_heads) {
  Vector y = Vector::Constant(num_heads, t.reward);
  if (t.terminal || gamma == 0.0) return y;
  const Matrix q_on = q_values(online, t.next_state.transpose());
  const Matrix q_tg = q_values(target, t.next_state.transpose());
  for (int k = 0; k < num_heads; ++k) {
    const auto a_star = argmax(q_on.block(0, k * kNumActions, 1, kNumActions));
    y(k) += gamma * q_tg(0, k * kNumActions + a_star);
  }
  return y;
}

Agent::Agent(const AgentConfig& cfg, int num_heads, int state_dim, Rng& rng)
    : cfg_(cfg),
      heads_(num_heads),
      online_(init_q_network(state_dim, num_heads, cfg.hidden, rng)),
      target_(online_),
      opt_(AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8, 0.0}, online_),
      buffer_(static_cast<std::size_t>(cfg.buffer_capacity)) {
  if (num_heads < 1 || state_dim < 1) throw std::invalid_argument("agent dims must be positive");
  if (cfg.batch_size < 1 || cfg.sync_every < 1 || cfg.warmup_rounds < 0) throw std::invalid_argument("invalid agent config");
  if (!(cfg.gamma >= 0.0 && cfg.gamma < 1.0)) throw std::invalid_argument("discount must lie in [0, 1)");
}

TdBatch make_td_batch(std::span<const Transition* const> batch, const ParamSet& online, const ParamSet& target,
                      double gamma, int heads) {
  if (batch.empty()) throw std::invalid_argument("empty TD batch");
  const auto n = static_cast<Eigen::Index>(batch.size());
  const auto dim = batch[0]->state.size();
  TdBatch b{Matrix(n, dim), Matrix::Zero(n, heads * kNumActions), Matrix::Zero(n, heads * kNumActions)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const Transition& t = *batch[i];
    if (static_cast<int>(t.action.size()) != heads) throw std::invalid_argument("transition head count mismatch");
    b.states.row(i) = t.state.transpose();
    const Vector y = ddqn_target(t, online, target, gamma, heads);
    for (int k = 0; k < heads; ++k) {
      const int col = k * kNumActions + t.action[k];
      b.targets(i, col) = y(k);
      b.mask(i, col) = 1.0;
    }
  }
  return b;
}

ad::Var td_loss(const Bound& online, const TdBatch& b) {
  ad::Tape& tape = *online[std::size_t{0}].tape();
  const ad::Var q = models::mlp_forward(online, tape.constant(b.states));
  const ad::Var err = ad::cwise_mul(q - tape.constant(b.targets), tape.constant(b.mask));
  return (1.0 / b.mask.sum()) * ad::sum(ad::square(err));
}

double Agent::td_loss(std::span<const Transition* const> batch) const {
  const TdBatch b = make_td_batch(batch, online_, target_, cfg_.gamma, heads_);
  const Matrix err = (q_values(online_, b.states) - b.targets).cwiseProduct(b.mask);
  return err.squaredNorm() / b.mask.sum();
}

double Agent::q_update_step(std::span<const Transition* const> batch) {
  const TdBatch b = make_td_batch(batch, online_, target_, cfg_.gamma, heads_);
  ad::Tape tape;
  const Bound p(tape, online_, true);
  const ad::Var loss = rl::td_loss(p, b);
  tape.backward(loss);
  opt_.step(online_, p.grads());
  ++updates_;
  if (++since_sync_ >= cfg_.sync_every) sync_target();
  return loss.scalar();
}

std::optional<double> Agent::q_update_step(Rng& rng) {
  if (buffer_.size() < static_cast<std::size_t>(cfg_.batch_size)) {
    std::clog << "rl: replay holds " << buffer_.size() << " < " << cfg_.batch_size << " transitions; update skipped\n";
    return std::nullopt;
  }
  const auto batch = buffer_.sample(static_cast<std::size_t>(cfg_.batch_size), rng);
  return q_update_step(batch);
}

void Agent::sync_target() {
  target_ = online_;
  since_sync_ = 0;
}

}  // namespace fedrio::rl
