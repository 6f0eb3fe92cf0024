#include "fedrio/client.hpp"

#include "fedrio/math.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>

namespace fedrio::client {

void validate(const Hyper& h) {
  if (h.alpha_dis < 0 || h.gamma_adv < 0 || h.mu_con < 0) throw std::invalid_argument("loss weights must be >= 0");
  if (!(h.tau_con > 0)) throw std::invalid_argument("tau_con must be > 0");
  if (h.local_epochs < 1) throw std::invalid_argument("local_epochs must be >= 1");
  if (h.batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
  if (!(h.learning_rate > 0)) throw std::invalid_argument("learning_rate must be > 0");
  if (h.weight_decay < 0) throw std::invalid_argument("weight_decay must be >= 0");
}

LocalData make_local_data(const data::GraphDataset& ds, const data::ClientShard& shard, int probe_size) {
  LocalData local;
  const int n = shard.size();
  local.features.resize(n, ds.feature_dim());
  local.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    local.features.row(i) = ds.features.row(shard.node_indices[i]);
    local.labels[i] = ds.labels[shard.node_indices[i]];
  }
  auto adj = std::make_shared<ad::Adjacency>();
  adj->num_nodes = n;
  for (const auto& [u, v] : shard.subgraph) {
    adj->src.push_back(u);
    adj->dst.push_back(v);
    adj->src.push_back(v);
    adj->dst.push_back(u);
  }
  local.adjacency = std::move(adj);
  local.probe.resize(std::min(n, probe_size));
  std::iota(local.probe.begin(), local.probe.end(), 0);
  return local;
}

ad::Var distill_loss(const Bound& d1, const ad::Var& r_real, const ad::Var& x_tilde) {
  return ad::mean(models::kl_rows(models::classifier_forward(d1, r_real), models::classifier_forward(d1, x_tilde)));
}

ad::Var adversarial_loss(const Bound& d1, const Bound& d2, const ad::Var& r) {
  return ad::mean(models::kl_rows(models::classifier_forward(d1, r), models::classifier_forward(d2, r)));
}

namespace {

ad::Var cosine_rows(const ad::Var& a, const ad::Var& b) {
  using namespace ad;
  const Var dot = row_sum(cwise_mul(a, b));
  const Var inv_na = safe_recip(safe_sqrt(row_sum(square(a))));
  const Var inv_nb = safe_recip(safe_sqrt(row_sum(square(b))));
  return cwise_mul(cwise_mul(dot, inv_na), inv_nb);
}

void warn_zero_norm(const Matrix& m, const char* what) {
  if ((m.rowwise().squaredNorm().array() == 0.0).any()) {
    std::cerr << "warning: zero-norm " << what << " representation; cosine similarity taken as 0\n";
  }
}

}  // namespace

ad::Var contrastive_loss(const ad::Var& r, const ad::Var& r_glo, const ad::Var& r_pre, double tau) {
  using namespace ad;
  if (!(tau > 0.0)) throw std::invalid_argument("contrastive temperature must be > 0");
  warn_zero_norm(r.value(), "local");
  const Var logits = (1.0 / tau) * hconcat(cosine_rows(r, r_glo), cosine_rows(r, r_pre));
  return -column(log_softmax_rows(logits), 0);
}

double contrastive_loss(const Vector& r, const Vector& r_glo, const Vector& r_pre, double tau) {
  ad::Tape tape;
  return contrastive_loss(tape.constant(r.transpose()), tape.constant(r_glo.transpose()),
                          tape.constant(r_pre.transpose()), tau)
      .scalar();
}

ad::Var diversity_loss(const ad::Var& x_tilde, const Matrix& z) {
  using namespace ad;
  const Index n = x_tilde.rows();
  if (n < 2) throw std::invalid_argument("diversity loss needs a batch of at least 2");
  if (z.rows() != n) throw std::invalid_argument("diversity loss: noise batch mismatch");
  Matrix dz(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) dz(i, j) = (z.row(i) - z.row(j)).norm();
  Tape& t = *x_tilde.tape();
  return exp(-mean(cwise_mul(pairwise_distances(x_tilde), t.constant(std::move(dz)))));
}

StageLoss stage1_loss(const Bound& d1, const Bound& d2, const Stage1Batch& b, const Hyper& h) {
  using namespace ad;
  Tape& t = *b.r.tape();
  const Var xg = t.constant(b.x_global);
  const Var xl = t.constant(b.x_local);
  const Var d1_real = models::classifier_forward(d1, b.r);
  const Var d2_real = models::classifier_forward(d2, b.r);
  const Var d1_glob = models::classifier_forward(d1, xg);
  const Var d2_glob = models::classifier_forward(d2, xg);
  const Var cls = models::cross_entropy(d1_real, b.y) + models::cross_entropy(d2_real, b.y) +
                  models::cross_entropy(d1_glob, b.y) + models::cross_entropy(d2_glob, b.y);
  const Var dis = mean(models::kl_rows(d1_real, d1_glob));
  const Var dis2 = mean(models::kl_rows(d2_real, d2_glob));
  const Var adv = mean(models::kl_rows(d1_real, d2_real));
  const Var advg = adversarial_loss(d1, d2, xl);
  StageLoss out;
  out.total = cls + h.alpha_dis * (dis + dis2) + h.gamma_adv * (advg - adv);
  out.parts = {{"cls", cls.scalar()}, {"dis", dis.scalar()}, {"dis2", dis2.scalar()},
               {"adv", adv.scalar()}, {"advg", advg.scalar()}, {"total", out.total.scalar()}};
  return out;
}

StageLoss stage2_loss(const Bound& d1, const Bound& d2, const Stage2Batch& b, const Hyper& h) {
  using namespace ad;
  Tape& t = *b.r.tape();
  const Var d1_real = models::classifier_forward(d1, b.r);
  const Var d2_real = models::classifier_forward(d2, b.r);
  const Var cls = models::cross_entropy(d1_real, b.y) + models::cross_entropy(d2_real, b.y);
  const Var adv = mean(models::kl_rows(d1_real, d2_real));
  const Var con = mean(contrastive_loss(b.r, t.constant(b.r_glo), t.constant(b.r_pre), h.tau_con));
  StageLoss out;
  out.total = cls + h.gamma_adv * adv + h.mu_con * con;
  out.parts = {{"cls", cls.scalar()}, {"adv", adv.scalar()}, {"con", con.scalar()}, {"total", out.total.scalar()}};
  return out;
}

StageLoss stage3_loss(const Bound& d1, const Bound& d2, const Stage3Batch& b) {
  using namespace ad;
  const Var cls = models::cross_entropy(models::classifier_forward(d1, b.x_tilde), b.y);
  const Var advg = adversarial_loss(d1, d2, b.x_tilde);
  const Var var = diversity_loss(b.x_tilde, b.z);
  StageLoss out;
  out.total = cls - advg + var;
  out.parts = {{"cls", cls.scalar()}, {"advg", advg.scalar()}, {"var", var.scalar()}, {"total", out.total.scalar()}};
  return out;
}

namespace {

std::vector<std::vector<int>> epoch_batches(int n, int batch_size, Rng& rng) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < n; start += batch_size) {
    batches.emplace_back(order.begin() + start, order.begin() + std::min(n, start + batch_size));
  }
  return batches;
}

std::vector<int> gather(const std::vector<int>& values, const std::vector<int>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(values[i]);
  return out;
}

Matrix gather_rows(const Matrix& m, const std::vector<int>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
  return out;
}

void check_finite(double v, int client, const char* stage) {
  if (!std::isfinite(v)) {
    throw RoundAbort("client " + std::to_string(client) + " " + stage + ": non-finite loss");
  }
}

void accumulate(std::map<std::string, double>& sums, const std::string& prefix, const std::map<std::string, double>& parts) {
  for (const auto& [k, v] : parts) sums[prefix + "." + k] += v;
}

}  // namespace

RoundMetrics run_local_round(ClientState& state, const LocalData& local, const Globals& globals, const Hyper& hyper,
                             const backbone::Config& cfg, Rng& rng) {
  validate(hyper);
  const int n = static_cast<int>(local.labels.size());
  if (n == 0) throw std::invalid_argument("client has no data");
  const AdamConfig adam_cfg{hyper.learning_rate, 0.9, 0.999, 1e-8, hyper.weight_decay};
  const int dz = state.generator.dims.noise_dim;
  std::map<std::string, double> sums;
  std::map<std::string, int> counts;

  // Stage 1: classifiers.
  {
    Adam opt1(adam_cfg, state.d1), opt2(adam_cfg, state.d2);
    for (int e = 0; e < hyper.local_epochs; ++e) {
      // The backbone is frozen here: one gate-noise draw and forward pass per epoch.
      const Matrix reps = backbone::represent(local.features, local.adjacency, state.backbone, cfg,
                                              backbone::GateNoise::sample(n, rng));
      for (const auto& batch : epoch_batches(n, hyper.batch_size, rng)) {
        const std::vector<int> labels = gather(local.labels, batch);
        const Matrix y = models::one_hot(labels);
        const auto b = static_cast<Eigen::Index>(batch.size());
        const Matrix x_global = models::generate(globals.generator, standard_normal(b, dz, rng), y);
        const Matrix x_local = models::generate(state.generator, standard_normal(b, dz, rng), y);
        ad::Tape tape;
        const Bound d1(tape, state.d1, true), d2(tape, state.d2, true);
        const StageLoss loss = stage1_loss(d1, d2, {tape.constant(gather_rows(reps, batch)), y, x_global, x_local}, hyper);
        check_finite(loss.total.scalar(), state.id, "stage1");
        tape.backward(loss.total);
        opt1.step(state.d1, d1.grads());
        opt2.step(state.d2, d2.grads());
        accumulate(sums, "stage1", loss.parts);
        ++counts["stage1"];
      }
    }
  }

  // Stage 2: backbone, classifiers frozen.
  {
    Adam opt(adam_cfg, state.backbone);
    // Contrastive anchors come from frozen networks with deterministic gates.
    const Matrix r_glo = backbone::represent(local.features, local.adjacency, globals.backbone, cfg, std::nullopt);
    const Matrix r_pre = backbone::represent(local.features, local.adjacency, state.prev_backbone, cfg, std::nullopt);
    for (int e = 0; e < hyper.local_epochs; ++e) {
      for (const auto& batch : epoch_batches(n, hyper.batch_size, rng)) {
        const auto noise = backbone::GateNoise::sample(n, rng);
        ad::Tape tape;
        const Bound eps(tape, state.backbone, true);
        const Bound d1(tape, state.d1, false), d2(tape, state.d2, false);
        const auto out = backbone::forward(tape, local.features, local.adjacency, eps, cfg, noise);
        const Stage2Batch b{ad::gather_rows(out.repr, batch), models::one_hot(gather(local.labels, batch)),
                            gather_rows(r_glo, batch), gather_rows(r_pre, batch)};
        const StageLoss loss = stage2_loss(d1, d2, b, hyper);
        check_finite(loss.total.scalar(), state.id, "stage2");
        tape.backward(loss.total);
        opt.step(state.backbone, eps.grads());
        accumulate(sums, "stage2", loss.parts);
        ++counts["stage2"];
      }
    }
  }

  // Stage 3: local generator, classifiers frozen.
  {
    Adam opt(adam_cfg, state.generator.params);
    std::array<int, models::kNumClasses> local_counts{};
    for (int y : local.labels) ++local_counts[y];
    std::discrete_distribution<int> label_dist =
        hyper.stage3_uniform_labels ? std::discrete_distribution<int>{1.0, 1.0}
                                    : std::discrete_distribution<int>(local_counts.begin(), local_counts.end());
    const int steps_per_epoch = (n + hyper.batch_size - 1) / hyper.batch_size;
    for (int e = 0; e < hyper.local_epochs; ++e) {
      for (int s = 0; s < steps_per_epoch; ++s) {
        std::vector<int> labels(hyper.batch_size);
        for (int& y : labels) y = label_dist(rng);
        const Matrix y = models::one_hot(labels);
        const Matrix z = standard_normal(hyper.batch_size, dz, rng);
        ad::Tape tape;
        const Bound g(tape, state.generator.params, true);
        const Bound d1(tape, state.d1, false), d2(tape, state.d2, false);
        const auto gen = models::generator_forward(g, state.generator, z, y, models::Mode::Train);
        const StageLoss loss = stage3_loss(d1, d2, {gen.x, z, y});
        check_finite(loss.total.scalar(), state.id, "stage3");
        tape.backward(loss.total);
        opt.step(state.generator.params, g.grads());
        models::update_running_stats(state.generator, gen);
        accumulate(sums, "stage3", loss.parts);
        ++counts["stage3"];
      }
    }
  }

  state.prev_backbone = state.backbone;
  RoundMetrics metrics = measure(state, local, cfg, rng);
  for (const auto& [k, v] : sums) metrics.losses[k] = v / counts[k.substr(0, k.find('.'))];
  return metrics;
}

RoundMetrics measure(const ClientState& state, const LocalData& local, const backbone::Config& cfg, Rng& rng) {
  const int n = static_cast<int>(local.labels.size());
  const Matrix reps = backbone::represent(local.features, local.adjacency, state.backbone, cfg,
                                          backbone::GateNoise::sample(n, rng));
  const Matrix logits = models::classifier_logits(state.d1, reps);
  RoundMetrics m;
  m.client_id = state.id;
  int correct = 0;
  for (int i = 0; i < n; ++i) correct += static_cast<int>(argmax(logits.row(i)) == local.labels[i]);
  m.local_accuracy = static_cast<double>(correct) / n;
  const Matrix probe_reps = gather_rows(reps, local.probe);
  const Matrix probe_logits = gather_rows(logits, local.probe);
  m.pooled_repr = probe_reps.colwise().mean().transpose();
  m.pred_dist = softmax_rows(probe_logits).colwise().mean().transpose();
  m.loss = cross_entropy(probe_logits, gather(local.labels, local.probe));
  return m;
}

ad::Var proximal_term(const Bound& p, const ParamSet& anchor, double mu) {
  using namespace ad;
  Tape& t = *p[std::size_t{0}].tape();
  Var total = t.constant(Matrix::Zero(1, 1));
  for (std::size_t i = 0; i < anchor.size(); ++i) total = total + sum(square(p[i] - t.constant(anchor[i])));
  return (0.5 * mu) * total;
}

RoundMetrics run_supervised_round(ClientState& state, const LocalData& local, const Hyper& hyper,
                                  const backbone::Config& cfg, Rng& rng, const ProxAnchor* prox) {
  validate(hyper);
  const int n = static_cast<int>(local.labels.size());
  if (n == 0) throw std::invalid_argument("client has no data");
  if (prox && prox->mu_prox < 0) throw std::invalid_argument("mu_prox must be >= 0");
  const AdamConfig adam_cfg{hyper.learning_rate, 0.9, 0.999, 1e-8, hyper.weight_decay};
  Adam opt_eps(adam_cfg, state.backbone), opt_cls(adam_cfg, state.d1);
  double total = 0.0;
  int steps = 0;
  for (int e = 0; e < hyper.local_epochs; ++e) {
    for (const auto& batch : epoch_batches(n, hyper.batch_size, rng)) {
      const auto noise = backbone::GateNoise::sample(n, rng);
      ad::Tape tape;
      const Bound eps(tape, state.backbone, true);
      const Bound cls(tape, state.d1, true);
      const auto out = backbone::forward(tape, local.features, local.adjacency, eps, cfg, noise);
      const ad::Var logits = models::classifier_forward(cls, ad::gather_rows(out.repr, batch));
      ad::Var loss = models::cross_entropy(logits, models::one_hot(gather(local.labels, batch)));
      if (prox && prox->mu_prox > 0.0) {
        loss = loss + proximal_term(eps, prox->backbone, prox->mu_prox) +
               proximal_term(cls, prox->classifier, prox->mu_prox);
      }
      check_finite(loss.scalar(), state.id, "supervised");
      tape.backward(loss);
      opt_eps.step(state.backbone, eps.grads());
      opt_cls.step(state.d1, cls.grads());
      total += loss.scalar();
      ++steps;
    }
  }
  RoundMetrics metrics = measure(state, local, cfg, rng);
  metrics.losses["supervised.total"] = total / steps;
  return metrics;
}

}  // namespace fedrio::client
