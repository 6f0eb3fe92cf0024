#include "fedrio/server_distill.hpp"

#include <cmath>
#include <random>

namespace fedrio::server {

ExperienceSet sample_experience(const Vector& prior, int batch_size, int noise_dim, Rng& rng) {
  if (batch_size < 2) throw std::invalid_argument("experience batch must hold at least 2 samples");
  ExperienceSet e;
  std::discrete_distribution<int> label(prior.data(), prior.data() + prior.size());
  e.y.resize(batch_size);
  for (int& y : e.y) y = label(rng);
  e.z = standard_normal(batch_size, noise_dim, rng);
  return e;
}

ad::Var global_generator_loss(const ad::Var& x_tilde, const Bound& global_d, std::span<const ParamSet> client_d1,
                              const Matrix& client_weight, std::span<const int> y) {
  using namespace ad;
  if (client_d1.empty()) throw std::invalid_argument("no client classifiers uploaded");
  if (client_weight.rows() != static_cast<Index>(client_d1.size())) {
    throw std::invalid_argument("label weights do not match the number of clients");
  }
  Tape& t = *x_tilde.tape();
  const Matrix onehot = models::one_hot(y);
  const Var student = models::classifier_forward(global_d, x_tilde);
  Var total;
  for (std::size_t k = 0; k < client_d1.size(); ++k) {
    const Bound teacher(t, client_d1[k], false);
    const Var logits = models::classifier_forward(teacher, x_tilde);
    Matrix w(static_cast<Index>(y.size()), 1);
    for (std::size_t i = 0; i < y.size(); ++i) w(static_cast<Index>(i), 0) = client_weight(static_cast<Index>(k), y[i]);
    const Var per_row = models::kl_rows(logits, student) - row_sum(cwise_mul(t.constant(onehot), log_softmax_rows(logits)));
    const Var term = sum(cwise_mul(per_row, t.constant(std::move(w))));
    total = total.valid() ? total + term : term;
  }
  return (1.0 / static_cast<double>(client_d1.size())) * total;
}

double global_generator_loss(const models::Generator& g, const ParamSet& global_d, std::span<const ParamSet> client_d1,
                             const models::LabelDistribution& dist, const ExperienceSet& batch) {
  ad::Tape tape;
  const Matrix x = models::generate(g, batch.z, models::one_hot(batch.y));
  const Bound d(tape, global_d, false);
  return global_generator_loss(tape.constant(x), d, client_d1, dist.client_weight, batch.y).scalar();
}

std::vector<double> train_global_generator(models::Generator& g, ParamSet& global_d,
                                           std::span<const ParamSet> client_d1, const models::LabelDistribution& dist,
                                           const DistillConfig& cfg, Rng& rng) {
  if (cfg.steps < 0) throw std::invalid_argument("distillation steps must be >= 0");
  const AdamConfig adam{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay};
  Adam opt_g(adam, g.params), opt_d(adam, global_d);
  std::vector<double> losses;
  losses.reserve(cfg.steps);
  for (int s = 0; s < cfg.steps; ++s) {
    const ExperienceSet batch = sample_experience(dist.prior, cfg.batch_size, g.dims.noise_dim, rng);
    const Matrix y = models::one_hot(batch.y);
    ad::Tape tape;
    const Bound gp(tape, g.params, true);
    const Bound dp(tape, global_d, cfg.updates_d);
    const auto out = models::generator_forward(gp, g, batch.z, y, models::Mode::Train);
    const ad::Var loss = global_generator_loss(out.x, dp, client_d1, dist.client_weight, batch.y);
    if (!std::isfinite(loss.scalar())) throw DistillAbort("generator distillation: non-finite loss at step " + std::to_string(s));
    tape.backward(loss);
    opt_g.step(g.params, gp.grads());
    if (cfg.updates_d) opt_d.step(global_d, dp.grads());
    models::update_running_stats(g, out);
    losses.push_back(loss.scalar());
  }
  return losses;
}

}  // namespace fedrio::server
