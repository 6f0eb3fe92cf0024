#include "fedrio/params.hpp"

#include <cmath>
#include <stdexcept>

namespace fedrio {

std::size_t ParamSet::add(std::string name, Matrix value) {
  for (const auto& e : entries_) {
    if (e.name == name) throw std::invalid_argument("duplicate parameter name: " + name);
  }
  entries_.push_back({std::move(name), std::move(value)});
  return entries_.size() - 1;
}

std::size_t ParamSet::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  throw std::out_of_range("no parameter named " + std::string(name));
}

Matrix& ParamSet::at(std::string_view name) { return entries_[index_of(name)].value; }
const Matrix& ParamSet::at(std::string_view name) const { return entries_[index_of(name)].value; }

Eigen::Index ParamSet::num_scalars() const {
  Eigen::Index n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

Eigen::Index ParamSet::offset(std::size_t i) const {
  Eigen::Index n = 0;
  for (std::size_t k = 0; k < i; ++k) n += entries_[k].value.size();
  return n;
}

Vector ParamSet::flatten() const {
  Vector flat(num_scalars());
  Eigen::Index pos = 0;
  for (const auto& e : entries_) {
    flat.segment(pos, e.value.size()) = e.value.reshaped();
    pos += e.value.size();
  }
  return flat;
}

void ParamSet::assign_flat(const Vector& flat) {
  if (flat.size() != num_scalars()) throw std::invalid_argument("assign_flat: size mismatch");
  Eigen::Index pos = 0;
  for (auto& e : entries_) {
    e.value.reshaped() = flat.segment(pos, e.value.size());
    pos += e.value.size();
  }
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name) return false;
    if (entries_[i].value.rows() != other.entries_[i].value.rows()) return false;
    if (entries_[i].value.cols() != other.entries_[i].value.cols()) return false;
  }
  return true;
}

bool ParamSet::all_finite() const {
  for (const auto& e : entries_) {
    if (!e.value.allFinite()) return false;
  }
  return true;
}

bool ParamSet::operator==(const ParamSet& other) const {
  if (!same_layout(other)) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].value != other.entries_[i].value) return false;
  }
  return true;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet z;
  for (const auto& e : entries_) z.add(e.name, Matrix::Zero(e.value.rows(), e.value.cols()));
  return z;
}

Matrix glorot(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix w(fan_in, fan_out);
  for (Eigen::Index i = 0; i < fan_in; ++i)
    for (Eigen::Index j = 0; j < fan_out; ++j) w(i, j) = dist(rng);
  return w;
}

std::vector<ad::Var> bind(ad::Tape& tape, const ParamSet& params, bool trainable) {
  std::vector<ad::Var> vars;
  vars.reserve(params.size());
  for (const auto& e : params) vars.push_back(trainable ? tape.parameter(e.value) : tape.constant(e.value));
  return vars;
}

ParamSet collect_grads(const ad::Tape& tape, std::span<const ad::Var> vars, const ParamSet& like) {
  if (vars.size() != like.size()) throw std::invalid_argument("collect_grads: size mismatch");
  ParamSet g;
  for (std::size_t i = 0; i < vars.size(); ++i) g.add(like.name(i), tape.grad(vars[i]));
  return g;
}

Bound::Bound(ad::Tape& tape, const ParamSet& params, bool trainable)
    : tape_(&tape), params_(&params), vars_(bind(tape, params, trainable)) {}

const ad::Var& Bound::operator[](std::string_view name) const { return vars_[params_->index_of(name)]; }

Adam::Adam(AdamConfig cfg, const ParamSet& like) : cfg_(cfg), m_(like.zeros_like()), v_(like.zeros_like()) {}

void Adam::step(ParamSet& params, const ParamSet& grads) {
  if (!params.same_layout(grads) || !params.same_layout(m_)) throw std::invalid_argument("Adam::step: layout mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix g = grads[i];
    if (cfg_.weight_decay != 0.0) g += cfg_.weight_decay * params[i];
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseAbs2();
    params[i].array() -= cfg_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
}

}  // namespace fedrio
