#pragma once

// Data-free extraction of global knowledge: the global generator G (and the global
// classifier D as a student) trained against the uploaded client D1 teachers.

#include "fedrio/models.hpp"
#include "fedrio/params.hpp"

#include <span>
#include <stdexcept>
#include <vector>

namespace fedrio::server {

struct DistillConfig {
  int steps = 50;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  bool updates_d = true;  // route the KL gradient into global D as well
};

class DistillAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Noise and conditioning labels for one generator batch; y ~ p(y).
struct ExperienceSet {
  Matrix z;
  std::vector<int> y;
};

ExperienceSet sample_experience(const Vector& prior, int batch_size, int noise_dim, Rng& rng);

// (1/K) sum_k sum_i alpha^{k,y_i} [KL(softmax D1^k(x_i) || softmax D(x_i)) + CE(D1^k(x_i), y_i)].
ad::Var global_generator_loss(const ad::Var& x_tilde, const Bound& global_d, std::span<const ParamSet> client_d1,
                              const Matrix& client_weight, std::span<const int> y);

// Plain evaluation with G in eval mode.
double global_generator_loss(const models::Generator& g, const ParamSet& global_d, std::span<const ParamSet> client_d1,
                             const models::LabelDistribution& dist, const ExperienceSet& batch);

// Runs cfg.steps Adam iterations on fresh experience sets; returns the per-step losses.
std::vector<double> train_global_generator(models::Generator& g, ParamSet& global_d,
                                           std::span<const ParamSet> client_d1, const models::LabelDistribution& dist,
                                           const DistillConfig& cfg, Rng& rng);

}  // namespace fedrio::server
