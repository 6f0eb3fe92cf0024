#include "fedrio/backbone.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fedrio::backbone {

namespace {

std::string key(std::string_view prefix, int layer, std::string_view leaf) {
  return std::string(prefix) + "." + std::to_string(layer) + "." + std::string(leaf);
}

}  // namespace

ParamSet init_params(const Dims& dims, Rng& rng) {
  if (dims.input_dim < 1 || dims.hidden < 1 || dims.repr_dim < 1 || dims.layers < 1) {
    throw std::invalid_argument("backbone dims must be positive");
  }
  ParamSet p;
  p.add("ln.gain", Matrix::Ones(1, dims.input_dim));
  p.add("ln.bias", Matrix::Zero(1, dims.input_dim));
  for (const char* prefix : {"in", "out"}) {
    for (int l = 0; l < dims.layers; ++l) {
      const int fan_in = l == 0 ? dims.input_dim : dims.hidden;
      const int fan_out = l == dims.layers - 1 ? kNumActions : dims.hidden;
      p.add(key(prefix, l, "self"), glorot(fan_in, fan_out, rng));
      p.add(key(prefix, l, "neigh"), glorot(fan_in, fan_out, rng));
      p.add(key(prefix, l, "bias"), Matrix::Zero(1, fan_out));
    }
  }
  for (int l = 0; l < dims.layers; ++l) {
    const int fan_in = l == 0 ? dims.input_dim : dims.hidden;
    p.add(key("env", l, "eps"), Matrix::Zero(1, 1));
    p.add(key("env", l, "w1"), glorot(fan_in, dims.hidden, rng));
    p.add(key("env", l, "b1"), Matrix::Zero(1, dims.hidden));
    p.add(key("env", l, "w2"), glorot(dims.hidden, dims.hidden, rng));
    p.add(key("env", l, "b2"), Matrix::Zero(1, dims.hidden));
  }
  p.add("proj.w1", glorot(dims.hidden, dims.repr_dim, rng));
  p.add("proj.b1", Matrix::Zero(1, dims.repr_dim));
  p.add(kFinalProjWeight, glorot(dims.repr_dim, dims.repr_dim, rng));
  p.add(kFinalProjBias, Matrix::Zero(1, dims.repr_dim));
  return p;
}

GateNoise GateNoise::sample(int num_nodes, Rng& rng) {
  GateNoise n;
  n.in = uniform_open(num_nodes, kNumActions, rng);
  n.out = uniform_open(num_nodes, kNumActions, rng);
  return n;
}

ad::Var layer_norm(const ad::Var& x, const ad::Var& gain, const ad::Var& bias, double eps) {
  using namespace ad;
  const Var mu = row_mean(x);
  const Var centered = add_col(x, -mu);
  const Var stddev = safe_sqrt(row_mean(square(centered)));
  const Var inv = safe_recip(add_scalar(stddev, eps));
  return add_row(mul_row(mul_col(centered, inv), gain), bias);
}

ad::Var aggregate_neighbors(const ad::Var& h, const ad::AdjacencyPtr& adj, const ad::Var& edge_weight,
                            Aggregator agg) {
  ad::Var summed = ad::edge_aggregate(h, adj, edge_weight);
  if (agg == Aggregator::Sum) return summed;
  Vector deg = adj->in_degree();
  Matrix inv = deg.unaryExpr([](double d) { return d > 0.0 ? 1.0 / d : 0.0; });
  return ad::mul_col(summed, h.tape()->constant(std::move(inv)));
}

ad::Var action_probs(const ad::Var& h, const ad::AdjacencyPtr& adj, const Bound& p, std::string_view prefix,
                     int layers, Aggregator agg) {
  using namespace ad;
  Var cur = h;
  for (int l = 0; l < layers; ++l) {
    const Var neigh = aggregate_neighbors(cur, adj, Var{}, agg);
    Var next = add_row(matmul(cur, p[key(prefix, l, "self")]) + matmul(neigh, p[key(prefix, l, "neigh")]),
                       p[key(prefix, l, "bias")]);
    cur = l == layers - 1 ? softmax_rows(next) : relu(next);
  }
  return cur;
}

ad::Var gumbel_softmax(const ad::Var& probs, const Matrix& uniform, double temperature, bool hard) {
  using namespace ad;
  if (!(temperature > 0.0)) throw std::invalid_argument("gumbel temperature must be > 0");
  Tape& t = *probs.tape();
  Matrix gumbel = Matrix::Zero(probs.rows(), probs.cols());
  if (uniform.size() != 0) {
    if (uniform.rows() != probs.rows() || uniform.cols() != probs.cols()) {
      throw std::invalid_argument("gumbel noise shape mismatch");
    }
    gumbel = -(-(uniform.array().log())).log();
  }
  const Var logits = (1.0 / temperature) * (log_clamped(probs, 1e-12) + t.constant(std::move(gumbel)));
  const Var soft = softmax_rows(logits);
  if (!hard) return soft;
  const Matrix& s = soft.value();
  Matrix onehot = Matrix::Zero(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    Eigen::Index j = 0;
    s.row(i).maxCoeff(&j);
    onehot(i, j) = 1.0;
  }
  return straight_through(soft, std::move(onehot));
}

Vector gumbel_softmax(const Vector& p, const Vector& uniform, double temperature, bool hard) {
  ad::Tape tape;
  const ad::Var probs = tape.constant(p.transpose());
  const Matrix noise = uniform.size() ? Matrix(uniform.transpose()) : Matrix();
  return gumbel_softmax(probs, noise, temperature, hard).value().row(0).transpose();
}

ad::Var edge_weights(const ad::Var& gs_out, const ad::Var& gs_in, const ad::AdjacencyPtr& adj) {
  using namespace ad;
  const Var out_t = column(gs_out, kTransmit);
  const Var in_t = column(gs_in, kTransmit);
  return cwise_mul(gather_rows(out_t, adj->src), gather_rows(in_t, adj->dst));
}

Pruned prune_adjacency(const ad::AdjacencyPtr& adj, const Vector& weights) {
  if (static_cast<std::size_t>(weights.size()) != adj->num_edges()) {
    throw std::invalid_argument("prune_adjacency: weight count mismatch");
  }
  auto kept_adj = std::make_shared<ad::Adjacency>();
  kept_adj->num_nodes = adj->num_nodes;
  Pruned out;
  for (std::size_t e = 0; e < adj->num_edges(); ++e) {
    if (weights(static_cast<Eigen::Index>(e)) > 0.0) {
      kept_adj->src.push_back(adj->src[e]);
      kept_adj->dst.push_back(adj->dst[e]);
      out.kept.push_back(static_cast<int>(e));
    }
  }
  out.adjacency = std::move(kept_adj);
  return out;
}

ad::Var env_propagate(const ad::Var& h, const ad::AdjacencyPtr& adj, const ad::Var& edge_weight, const Bound& p,
                      int layers, Aggregator agg) {
  using namespace ad;
  Var cur = h;
  for (int l = 0; l < layers; ++l) {
    const Var neigh = aggregate_neighbors(cur, adj, edge_weight, agg);
    const Var self = mul_scalar(cur, add_scalar(p[key("env", l, "eps")], 1.0));
    const Var mixed = self + neigh;
    const Var hidden = relu(add_row(matmul(mixed, p[key("env", l, "w1")]), p[key("env", l, "b1")]));
    cur = relu(add_row(matmul(hidden, p[key("env", l, "w2")]), p[key("env", l, "b2")]));
  }
  return cur;
}

ad::Var project(const ad::Var& h, const Bound& p) {
  using namespace ad;
  const Var hidden = relu(add_row(matmul(h, p["proj.w1"]), p["proj.b1"]));
  return final_projection(hidden, p);
}

ad::Var final_projection(const ad::Var& x, const Bound& p) {
  return ad::add_row(ad::matmul(x, p[kFinalProjWeight]), p[kFinalProjBias]);
}

Output forward(ad::Tape& tape, const Matrix& x, const ad::AdjacencyPtr& adj, const Bound& p, const Config& cfg,
               const std::optional<GateNoise>& noise) {
  if (x.cols() != cfg.dims.input_dim) throw std::invalid_argument("backbone: feature dim mismatch");
  if (adj->num_nodes != x.rows()) throw std::invalid_argument("backbone: adjacency size mismatch");
  Output out;
  const ad::Var h = layer_norm(tape.constant(x), p["ln.gain"], p["ln.bias"], cfg.layer_norm_eps);
  ad::Var hidden;
  if (cfg.adaptive) {
    out.p_in = action_probs(h, adj, p, "in", cfg.dims.layers, cfg.action_aggregator);
    out.p_out = action_probs(h, adj, p, "out", cfg.dims.layers, cfg.action_aggregator);
    const ad::Var gs_in = gumbel_softmax(out.p_in, noise ? noise->in : Matrix(), cfg.gate.temperature, cfg.gate.hard);
    const ad::Var gs_out = gumbel_softmax(out.p_out, noise ? noise->out : Matrix(), cfg.gate.temperature, cfg.gate.hard);
    const ad::Var w = edge_weights(gs_out, gs_in, adj);
    out.pruned = prune_adjacency(adj, w.value().col(0));
    const ad::Var kept_w = ad::gather_rows(w, out.pruned.kept);
    hidden = env_propagate(h, out.pruned.adjacency, kept_w, p, cfg.dims.layers, cfg.env_aggregator);
  } else {
    out.pruned.adjacency = adj;
    out.pruned.kept.resize(adj->num_edges());
    for (std::size_t e = 0; e < adj->num_edges(); ++e) out.pruned.kept[e] = static_cast<int>(e);
    hidden = env_propagate(h, adj, ad::Var{}, p, cfg.dims.layers, cfg.env_aggregator);
  }
  out.repr = project(hidden, p);
  return out;
}

Matrix represent(const Matrix& x, const ad::AdjacencyPtr& adj, const ParamSet& params, const Config& cfg,
                 const std::optional<GateNoise>& noise) {
  ad::Tape tape;
  const Bound p(tape, params, false);
  return forward(tape, x, adj, p, cfg, noise).repr.value();
}

}  // namespace fedrio::backbone
