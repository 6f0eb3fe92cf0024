#pragma once

#include "fedrio/autodiff.hpp"
#include "fedrio/rng.hpp"

#include <Eigen/Dense>

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fedrio {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Ordered collection of named parameter tensors. Order and shapes define the
// flat coordinate layout used by aggregation masks and client mixing.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Matrix value;
  };

  std::size_t add(std::string name, Matrix value);

  std::size_t size() const { return entries_.size(); }
  Matrix& operator[](std::size_t i) { return entries_[i].value; }
  const Matrix& operator[](std::size_t i) const { return entries_[i].value; }
  const std::string& name(std::size_t i) const { return entries_[i].name; }
  Matrix& at(std::string_view name);
  const Matrix& at(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  Eigen::Index num_scalars() const;
  Vector flatten() const;
  void assign_flat(const Vector& flat);
  // Flat offset of tensor i.
  Eigen::Index offset(std::size_t i) const;

  bool same_layout(const ParamSet& other) const;
  bool all_finite() const;
  bool operator==(const ParamSet& other) const;

  ParamSet zeros_like() const;

 private:
  std::vector<Entry> entries_;
};

// Glorot-uniform weight matrix.
Matrix glorot(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng);

// Registers every tensor of `params` on the tape, as parameters or constants.
std::vector<ad::Var> bind(ad::Tape& tape, const ParamSet& params, bool trainable);

// Collects tape gradients for vars bound from `like`.
ParamSet collect_grads(const ad::Tape& tape, std::span<const ad::Var> vars, const ParamSet& like);

// Tape-bound view of a parameter set, addressed by tensor name.
class Bound {
 public:
  Bound(ad::Tape& tape, const ParamSet& params, bool trainable);
  const ad::Var& operator[](std::string_view name) const;
  const ad::Var& operator[](std::size_t i) const { return vars_[i]; }
  std::span<const ad::Var> vars() const { return vars_; }
  ParamSet grads() const { return collect_grads(*tape_, vars_, *params_); }

 private:
  ad::Tape* tape_;
  const ParamSet* params_;
  std::vector<ad::Var> vars_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // L2 penalty folded into the gradient.
  double weight_decay = 0.0;
};

class Adam {
 public:
  Adam(AdamConfig cfg, const ParamSet& like);
  void step(ParamSet& params, const ParamSet& grads);
  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  ParamSet m_, v_;
  long t_ = 0;
};

}  // namespace fedrio
