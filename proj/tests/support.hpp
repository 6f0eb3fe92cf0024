#pragma once

// Shared helpers for the unit and acceptance suites.

#include "fedrio/autodiff.hpp"
#include "fedrio/backbone.hpp"
#include "fedrio/params.hpp"
#include "fedrio/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace fedrio::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;  // tensor with the largest error
};

// Compares tape gradients of loss(p) with central differences, tensor by tensor.
// Relative error is ||g_fd - g_ad|| / max(||g_fd|| + ||g_ad||, floor).
inline GradCheck grad_check(const ParamSet& params, const std::function<ad::Var(const Bound&)>& loss,
                            double step = 1e-5, double floor = 1e-7) {
  ParamSet analytic;
  {
    ad::Tape tape;
    const Bound b(tape, params, true);
    const ad::Var l = loss(b);
    tape.backward(l);
    analytic = b.grads();
  }
  auto eval = [&](const ParamSet& p) {
    ad::Tape tape;
    const Bound b(tape, p, false);
    return loss(b).scalar();
  };
  GradCheck out;
  ParamSet probe = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix numeric(params[i].rows(), params[i].cols());
    for (Eigen::Index j = 0; j < params[i].size(); ++j) {
      const double orig = probe[i].data()[j];
      probe[i].data()[j] = orig + step;
      const double up = eval(probe);
      probe[i].data()[j] = orig - step;
      const double down = eval(probe);
      probe[i].data()[j] = orig;
      numeric.data()[j] = (up - down) / (2.0 * step);
    }
    const double err = (numeric - analytic[i]).norm() / std::max(numeric.norm() + analytic[i].norm(), floor);
    if (err > out.max_rel_error) {
      out.max_rel_error = err;
      out.worst = params.name(i);
    }
  }
  return out;
}

inline ad::AdjacencyPtr make_adjacency(int n, const std::vector<std::pair<int, int>>& undirected) {
  auto a = std::make_shared<ad::Adjacency>();
  a->num_nodes = n;
  for (auto [u, v] : undirected) {
    a->src.push_back(u);
    a->dst.push_back(v);
    a->src.push_back(v);
    a->dst.push_back(u);
  }
  return a;
}

// 6-node graph: a triangle, a path hanging off it, and one isolated node.
inline ad::AdjacencyPtr six_node_graph() { return make_adjacency(6, {{0, 1}, {1, 2}, {2, 0}, {2, 3}, {3, 4}}); }

inline backbone::Config small_backbone(int input_dim, bool hard = false) {
  backbone::Config cfg;
  cfg.dims = {input_dim, 8, 4, 2};
  cfg.gate = {1.0, hard};
  return cfg;
}

}  // namespace fedrio::testing
