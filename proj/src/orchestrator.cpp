#include "fedrio/orchestrator.hpp"

#include "fedrio/math.hpp"
#include "fedrio/server_distill.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace fedrio::orchestrator {

namespace {

// Stream tags for derive_seed.
enum : std::uint64_t {
  kStreamData = 1,
  kStreamSplit = 2,
  kStreamPartition = 3,
  kStreamInit = 4,
  kStreamClient = 5,
  kStreamServer = 6,
  kStreamAgent = 7,
  kStreamClientInit = 8,
  kStreamAdversary = 9,
  kStreamProbe = 10,
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

Matrix rows_of(const Matrix& m, std::span<const int> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
  return out;
}

std::vector<int> labels_of(const data::GraphDataset& ds, std::span<const int> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (int v : idx) out.push_back(ds.labels[v]);
  return out;
}

double consistency(const Environment& env, const backbone::Config& bcfg,
                   std::span<const client::ClientState> clients) {
  std::vector<Matrix> reps;
  reps.reserve(clients.size());
  for (const auto& c : clients) {
    const Matrix full = backbone::represent(env.dataset.features, env.adjacency, c.backbone, bcfg, std::nullopt);
    reps.push_back(rows_of(full, env.consistency_probe));
  }
  return feature_consistency_score(reps, labels_of(env.dataset, env.consistency_probe));
}

std::map<std::string, double> mean_losses(std::span<const client::RoundMetrics> metrics) {
  std::map<std::string, double> out;
  for (const auto& m : metrics)
    for (const auto& [k, v] : m.losses) out[k] += v / static_cast<double>(metrics.size());
  return out;
}

// Accuracy of global D on final_projection(G samples; backbone), the synthetic-validation reward source.
double synthetic_accuracy(const ServerState& s, const Vector& prior, int batch, Rng& rng) {
  const auto e = server::sample_experience(prior, batch, s.generator.dims.noise_dim, rng);
  const Matrix x = models::generate(s.generator, e.z, models::one_hot(e.y));
  const Matrix r = (x * s.backbone.at(backbone::kFinalProjWeight)).rowwise() +
                   s.backbone.at(backbone::kFinalProjBias).row(0);
  const Matrix logits = models::classifier_logits(s.classifier, r);
  int correct = 0;
  for (int i = 0; i < batch; ++i) correct += static_cast<int>(argmax(logits.row(i)) == e.y[i]);
  return static_cast<double>(correct) / batch;
}

RunSummary summarize(const std::string& method, std::span<const records::RoundRecord> recs, double target) {
  RunSummary s;
  s.method = method;
  s.rounds = static_cast<int>(recs.size());
  s.target = target;
  for (const auto& r : recs) {
    s.best_acc = std::max(s.best_acc, r.acc);
    s.best_f1 = std::max(s.best_f1, r.f1);
  }
  if (!recs.empty()) {
    s.first_consistency = recs.front().consistency;
    s.final_consistency = recs.back().consistency;
  }
  s.rounds_to_target = rounds_to_target(recs, target);
  return s;
}

client::RoundMetrics checked_round(const std::function<client::RoundMetrics()>& fn, int t, int k) {
  try {
    return fn();
  } catch (const client::RoundAbort& e) {
    throw RunAbort("round " + std::to_string(t) + ", client " + std::to_string(k) + ": " + e.what());
  }
}

}  // namespace

data::GraphDataset load_data(const config::ExperimentConfig& cfg) {
  const std::uint64_t seed = cfg.run.seed;
  data::GraphDataset ds;
  if (cfg.data.source == config::DataSource::Synthetic) {
    data::SyntheticGraphConfig syn = cfg.data.synthetic;
    syn.seed = derive_seed(seed, {kStreamData});
    ds = data::generate_synthetic_bot_graph(syn);
  } else {
    data::DatasetSchema schema;
    schema.format = cfg.data.format;
    schema.edges_path = cfg.data.edges_path;
    ds = data::load_dataset(cfg.data.path, schema, derive_seed(seed, {kStreamSplit}));
  }
  if (!ds.has_split()) ds = data::stratified_split(std::move(ds), cfg.data.split, derive_seed(seed, {kStreamSplit}));
  data::validate(ds);
  return ds;
}

Environment prepare(const config::ExperimentConfig& cfg) {
  Environment env;
  env.dataset = load_data(cfg);
  env.adjacency = env.dataset.adjacency();
  env.shards = data::dirichlet_partition(
      env.dataset, {cfg.federation.alpha, cfg.federation.num_clients, derive_seed(cfg.run.seed, {kStreamPartition})});
  for (const auto& shard : env.shards) env.locals.push_back(client::make_local_data(env.dataset, shard, cfg.run.probe_size));
  env.val_nodes = env.dataset.nodes_in(data::Split::Val);
  env.test_nodes = env.dataset.nodes_in(data::Split::Test);
  if (env.val_nodes.empty()) throw data::DataError("validation split is empty");
  env.consistency_probe = env.val_nodes;
  Rng probe_rng(derive_seed(cfg.run.seed, {kStreamProbe}));
  std::shuffle(env.consistency_probe.begin(), env.consistency_probe.end(), probe_rng);
  if (static_cast<int>(env.consistency_probe.size()) > cfg.run.consistency_probe) {
    env.consistency_probe.resize(cfg.run.consistency_probe);
  }
  std::sort(env.consistency_probe.begin(), env.consistency_probe.end());
  std::vector<std::array<int, models::kNumClasses>> counts;
  for (const auto& s : env.shards) counts.push_back(s.label_counts);
  env.labels = models::estimate_label_distribution(counts);
  return env;
}

ServerState init_server(const config::ExperimentConfig& cfg, const Environment& env) {
  Rng rng(derive_seed(cfg.run.seed, {kStreamInit}));
  const backbone::Config bcfg = config::effective_backbone(cfg, env.dataset.feature_dim());
  ServerState s;
  s.backbone = backbone::init_params(bcfg.dims, rng);
  s.classifier = models::init_classifier(bcfg.dims.repr_dim, cfg.model.d1_hidden, rng);
  models::GeneratorDims gd = cfg.model.generator;
  gd.out_dim = bcfg.dims.repr_dim;
  s.generator = models::init_generator(gd, rng);
  s.raw_masks = agg::init_masks(cfg.federation.num_clients, s.backbone.num_scalars());
  return s;
}

std::vector<client::ClientState> init_clients(const config::ExperimentConfig& cfg, const Environment& env,
                                              const ServerState& server) {
  std::vector<client::ClientState> clients;
  const int repr = config::effective_backbone(cfg, env.dataset.feature_dim()).dims.repr_dim;
  for (int k = 0; k < cfg.federation.num_clients; ++k) {
    Rng rng(derive_seed(cfg.run.seed, {kStreamClientInit, static_cast<std::uint64_t>(k)}));
    client::ClientState c;
    c.id = k;
    c.backbone = server.backbone;
    c.d1 = server.classifier;
    c.d2 = models::init_classifier(repr, cfg.model.d2_hidden[static_cast<std::size_t>(k) % cfg.model.d2_hidden.size()], rng);
    c.generator = models::init_generator(server.generator.dims, rng);
    c.prev_backbone = server.backbone;
    clients.push_back(std::move(c));
  }
  return clients;
}

RunResult run(const config::ExperimentConfig& cfg, const RunOptions& opts) { return run(cfg, prepare(cfg), opts); }

RunResult run(const config::ExperimentConfig& cfg, const Environment& env, const RunOptions& opts) {
  switch (cfg.federation.method) {
    case config::Method::FedRio: return run_fedrio(cfg, env, opts);
    case config::Method::FedAvg: return run_fedavg(cfg, env, opts);
    case config::Method::FedProx: return run_fedprox(cfg, env, cfg.server.mu_prox, opts);
  }
  throw std::logic_error("unknown method");
}

RunResult run_fedrio(const config::ExperimentConfig& cfg, const Environment& env, const RunOptions& opts) {
  config::validate(cfg);
  const int K = cfg.federation.num_clients;
  const int T = cfg.federation.rounds;
  const std::uint64_t seed = cfg.run.seed;
  const backbone::Config bcfg = config::effective_backbone(cfg, env.dataset.feature_dim());
  const int repr = bcfg.dims.repr_dim;

  RunResult result;
  result.server = init_server(cfg, env);
  result.clients = init_clients(cfg, env, result.server);
  ServerState& server = result.server;
  auto& clients = result.clients;

  Rng rl_rng(derive_seed(seed, {kStreamAgent}));
  std::optional<rl::Agent>& agent = result.agent;
  if (!cfg.ablation.no_rl) agent.emplace(cfg.rl.agent, K, K * (repr + 3), rl_rng);
  agg::MaskConfig mask_cfg = cfg.server.mask;
  if (cfg.ablation.no_masks) mask_cfg.learning_rate = 0.0;

  std::optional<records::Writer> writer;
  if (opts.records_path) writer.emplace(*opts.records_path);

  Vector prev_state;
  std::vector<int> action(K, rl::kNumActions - 1);
  for (int t = 1; t <= T; ++t) {
    const auto start = std::chrono::steady_clock::now();
    if (agent) {
      action = (t <= cfg.rl.agent.warmup_rounds || prev_state.size() == 0)
                   ? rl::warmup_policy(K, rl_rng)
                   : rl::select_action(agent->online(), prev_state, K, rl::SelectMode::Sample, rl_rng);
    }
    const std::vector<double> alpha = rl::momenta(action);

    // Download with momenta, then local training.
    std::vector<ParamSet> starts, uploads, d1s;
    std::vector<client::RoundMetrics> metrics;
    const client::Globals globals{server.backbone, server.classifier, server.generator};
    for (int k = 0; k < K; ++k) {
      auto& c = clients[k];
      c.backbone = rl::apply_client_update(c.backbone, server.backbone, alpha[k]);
      c.d1 = rl::apply_client_update(c.d1, server.classifier, alpha[k]);
      starts.push_back(c.backbone);
      Rng rng(derive_seed(seed, {kStreamClient, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(t)}));
      metrics.push_back(checked_round(
          [&] { return client::run_local_round(c, env.locals[k], globals, cfg.client, bcfg, rng); }, t, k));
      uploads.push_back(c.backbone);
      if (k == cfg.server.adversarial_client) {
        Rng noise(derive_seed(seed, {kStreamAdversary, static_cast<std::uint64_t>(t)}));
        uploads.back() = starts.back();
        for (std::size_t i = 0; i < uploads.back().size(); ++i) {
          Matrix& m = uploads.back()[i];
          m += cfg.server.adversarial_noise_std * standard_normal(m.rows(), m.cols(), noise);
        }
      }
      d1s.push_back(c.d1);
    }

    // Server: classifier mean, masked backbone aggregation, generator distillation.
    Rng server_rng(derive_seed(seed, {kStreamServer, static_cast<std::uint64_t>(t)}));
    server.classifier = agg::aggregate_classifier(d1s);
    const agg::RoundOutput agg_out = agg::aggregate_round(server.raw_masks, server.backbone, uploads, starts,
                                                          server.classifier, server.generator, env.labels.prior,
                                                          mask_cfg, server_rng);
    server.backbone = agg_out.backbone;
    std::vector<double> distill;
    try {
      distill = server::train_global_generator(server.generator, server.classifier, d1s, env.labels,
                                               cfg.server.distill, server_rng);
    } catch (const server::DistillAbort& e) {
      throw RunAbort("round " + std::to_string(t) + ": " + e.what());
    }

    const Evaluation ev = evaluate(server.backbone, server.classifier, bcfg, env.dataset, env.adjacency, env.val_nodes);
    records::RoundRecord rec;
    rec.t = t;
    rec.acc = ev.acc;
    rec.f1 = ev.f1;
    rec.losses = mean_losses(metrics);
    rec.losses["server.mask"] = agg_out.mask_loss;
    if (!distill.empty()) rec.losses["server.distill"] = std::accumulate(distill.begin(), distill.end(), 0.0) / distill.size();
    for (const auto& m : metrics) rec.client_acc.push_back(m.local_accuracy);
    rec.consistency = consistency(env, bcfg, clients);

    if (agent) {
      std::vector<rl::Observation> obs;
      for (const auto& m : metrics) obs.push_back({m.client_id, m.pooled_repr, m.pred_dist, m.loss});
      const Vector state = rl::build_state(obs, K, repr);
      const double omega = cfg.rl.source == config::RewardSource::Real
                               ? ev.acc
                               : synthetic_accuracy(server, env.labels.prior, cfg.server.mask.batch_size, server_rng);
      const double reward = rl::compute_reward(omega, cfg.rl.reward);
      if (prev_state.size() > 0) agent->buffer().push({prev_state, action, reward, state, t == T});
      agent->q_update_step(rl_rng);
      prev_state = state;
      rec.action = alpha;
      rec.reward = reward;
    }
    rec.wall_s = seconds_since(start);
    if (writer) writer->append(rec);
    result.records.push_back(rec);
    if (opts.on_round) opts.on_round({t, server, clients, uploads, starts, result.records.back()});
  }
  result.summary = summarize("fedrio", result.records, opts.target.value_or(cfg.rl.reward.omega));
  return result;
}

namespace {

RunResult run_supervised(const config::ExperimentConfig& cfg, const Environment& env, std::optional<double> mu_prox,
                         const RunOptions& opts, const std::string& method) {
  config::validate(cfg);
  const int K = cfg.federation.num_clients;
  const backbone::Config bcfg = config::effective_backbone(cfg, env.dataset.feature_dim());
  RunResult result;
  result.server = init_server(cfg, env);
  result.clients = init_clients(cfg, env, result.server);
  ServerState& server = result.server;
  std::optional<records::Writer> writer;
  if (opts.records_path) writer.emplace(*opts.records_path);

  for (int t = 1; t <= cfg.federation.rounds; ++t) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<ParamSet> starts, uploads, d1s;
    std::vector<client::RoundMetrics> metrics;
    const client::ProxAnchor anchor{server.backbone, server.classifier, mu_prox.value_or(0.0)};
    for (int k = 0; k < K; ++k) {
      auto& c = result.clients[k];
      c.backbone = server.backbone;
      c.d1 = server.classifier;
      starts.push_back(c.backbone);
      Rng rng(derive_seed(cfg.run.seed, {kStreamClient, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(t)}));
      metrics.push_back(checked_round(
          [&] {
            return client::run_supervised_round(c, env.locals[k], cfg.client, bcfg, rng, mu_prox ? &anchor : nullptr);
          },
          t, k));
      uploads.push_back(c.backbone);
      d1s.push_back(c.d1);
    }
    server.backbone = agg::aggregate_classifier(uploads);
    server.classifier = agg::aggregate_classifier(d1s);

    const Evaluation ev = evaluate(server.backbone, server.classifier, bcfg, env.dataset, env.adjacency, env.val_nodes);
    records::RoundRecord rec;
    rec.t = t;
    rec.acc = ev.acc;
    rec.f1 = ev.f1;
    rec.losses = mean_losses(metrics);
    for (const auto& m : metrics) rec.client_acc.push_back(m.local_accuracy);
    rec.consistency = consistency(env, bcfg, result.clients);
    rec.wall_s = seconds_since(start);
    if (writer) writer->append(rec);
    result.records.push_back(rec);
    if (opts.on_round) opts.on_round({t, server, result.clients, uploads, starts, result.records.back()});
  }
  result.summary = summarize(method, result.records, opts.target.value_or(cfg.rl.reward.omega));
  return result;
}

}  // namespace

RunResult run_fedavg(const config::ExperimentConfig& cfg, const Environment& env, const RunOptions& opts) {
  return run_supervised(cfg, env, std::nullopt, opts, "fedavg");
}

RunResult run_fedprox(const config::ExperimentConfig& cfg, const Environment& env, double mu_prox,
                      const RunOptions& opts) {
  if (mu_prox < 0) throw std::invalid_argument("mu_prox must be >= 0");
  return run_supervised(cfg, env, mu_prox, opts, "fedprox");
}

std::optional<int> rounds_to_target(std::span<const records::RoundRecord> recs, double target) {
  if (recs.empty()) throw std::invalid_argument("no round records");
  for (std::size_t i = 0; i < recs.size(); ++i) {
    if (recs[i].acc >= target) return static_cast<int>(i) + 1;
  }
  return std::nullopt;
}

double feature_consistency_score(std::span<const Matrix> reps, std::span<const int> labels) {
  if (reps.size() < 2) throw std::invalid_argument("consistency needs at least 2 clients");
  const auto n = static_cast<Eigen::Index>(labels.size());
  std::array<int, models::kNumClasses> count{};
  for (int y : labels) ++count[y];
  std::vector<std::array<Vector, models::kNumClasses>> centroids(reps.size());
  for (std::size_t k = 0; k < reps.size(); ++k) {
    if (reps[k].rows() != n) throw std::invalid_argument("representation rows do not match labels");
    for (int c = 0; c < models::kNumClasses; ++c) centroids[k][c] = Vector::Zero(reps[k].cols());
    for (Eigen::Index i = 0; i < n; ++i) centroids[k][labels[i]] += reps[k].row(i).transpose();
    for (int c = 0; c < models::kNumClasses; ++c)
      if (count[c] > 0) centroids[k][c] /= count[c];
  }
  double inter = 0.0;
  int pairs = 0;
  for (std::size_t a = 0; a < reps.size(); ++a) {
    for (std::size_t b = a + 1; b < reps.size(); ++b) {
      for (int c = 0; c < models::kNumClasses; ++c) {
        if (count[c] == 0) continue;
        inter += (centroids[a][c] - centroids[b][c]).norm();
        ++pairs;
      }
    }
  }
  inter /= std::max(pairs, 1);
  double intra = 0.0;
  for (const auto& c : centroids) intra += (c[0] - c[1]).norm();
  intra /= static_cast<double>(reps.size());
  if (inter == 0.0) return 0.0;
  return intra > 0.0 ? inter / intra : std::numeric_limits<double>::infinity();
}

double macro_f1(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("macro_f1: size mismatch");
  double total = 0.0;
  int classes = 0;
  for (int c = 0; c < models::kNumClasses; ++c) {
    int tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      tp += predicted[i] == c && truth[i] == c;
      fp += predicted[i] == c && truth[i] != c;
      fn += predicted[i] != c && truth[i] == c;
    }
    if (2 * tp + fp + fn == 0) continue;
    total += 2.0 * tp / (2.0 * tp + fp + fn);
    ++classes;
  }
  return classes ? total / classes : 0.0;
}

Evaluation evaluate(const ParamSet& backbone, const ParamSet& classifier, const backbone::Config& bcfg,
                    const data::GraphDataset& ds, const ad::AdjacencyPtr& adj, std::span<const int> nodes) {
  if (nodes.empty()) throw std::invalid_argument("evaluate: no nodes");
  const Matrix reps = backbone::represent(ds.features, adj, backbone, bcfg, std::nullopt);
  const Matrix logits = models::classifier_logits(classifier, rows_of(reps, nodes));
  std::vector<int> pred(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) pred[i] = static_cast<int>(argmax(logits.row(static_cast<Eigen::Index>(i))));
  const std::vector<int> truth = labels_of(ds, nodes);
  int correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == truth[i];
  return {static_cast<double>(correct) / static_cast<double>(pred.size()), macro_f1(pred, truth)};
}

void save_params(const ParamSet& p, const std::filesystem::path& path) {
  nlohmann::json tensors = nlohmann::json::array();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Matrix& m = p[i];
    std::vector<double> flat(m.data(), m.data() + m.size());
    tensors.push_back({{"name", p.name(i)}, {"rows", m.rows()}, {"cols", m.cols()}, {"data", flat}});
  }
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << nlohmann::json{{"tensors", tensors}}.dump() << '\n';
}

ParamSet load_params(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  const nlohmann::json j = nlohmann::json::parse(is);
  ParamSet p;
  for (const auto& t : j.at("tensors")) {
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    const auto data = t.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw std::runtime_error(path.string() + ": tensor size mismatch");
    p.add(t.at("name").get<std::string>(), Eigen::Map<const Matrix>(data.data(), rows, cols));
  }
  return p;
}

std::string summary_json(const RunSummary& s) {
  nlohmann::json j;
  j["method"] = s.method;
  j["rounds"] = s.rounds;
  j["best_acc"] = s.best_acc;
  j["best_f1"] = s.best_f1;
  j["target"] = s.target;
  if (s.rounds_to_target) j["rounds_to_target"] = *s.rounds_to_target;
  else j["rounds_to_target"] = "unreached";
  j["first_consistency"] = s.first_consistency;
  j["final_consistency"] = s.final_consistency;
  return j.dump(2);
}

}  // namespace fedrio::orchestrator
