#pragma once

// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tape records every operation applied to Vars. Leaves are either constants
// (no gradient) or parameters (gradient requested). Calling backward() on a
// 1x1 Var walks the tape in reverse and accumulates gradients. A tape is
// single-use: build, backward, read gradients, discard.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace fedrio::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackwardFn = std::function<void(const Matrix& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var parameter(Matrix value);

  // Records an op output. `backward` is only invoked when some input needs a gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward);

  void backward(const Var& loss);

  // Gradient of the last backward() w.r.t. v; zeros if v never received one.
  Matrix grad(const Var& v) const;

  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }
  const Matrix& value(const Var& v) const { return nodes_[v.id()].value; }

  template <typename Derived>
  void accumulate(const Var& v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

// Directed edge list over `num_nodes` nodes; an undirected graph stores both directions.
struct Adjacency {
  int num_nodes = 0;
  std::vector<int> src;
  std::vector<int> dst;

  std::size_t num_edges() const { return src.size(); }
  // In-degree of every node, as an N x 1 column.
  Eigen::VectorXd in_degree() const;
};
using AdjacencyPtr = std::shared_ptr<const Adjacency>;

// ---- elementwise and linear algebra ----
Var matmul(const Var& a, const Var& b);
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator*(double s, const Var& a);
Var operator*(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var cwise_mul(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& row);   // a (n x c) + row (1 x c)
Var add_col(const Var& a, const Var& col);   // a (n x c) + col (n x 1)
Var mul_row(const Var& a, const Var& row);   // a (n x c) .* row (1 x c)
Var mul_col(const Var& a, const Var& col);   // a (n x c) .* col (n x 1)
// Scales every entry of `a` by the 1x1 Var `s`.
Var mul_scalar(const Var& a, const Var& s);

Var relu(const Var& a);
Var exp(const Var& a);
Var square(const Var& a);
// sqrt with zero derivative at 0.
Var safe_sqrt(const Var& a);
// 1/x, defined as 0 (with zero derivative) where x == 0.
Var safe_recip(const Var& a);
// log(max(x, floor)).
Var log_clamped(const Var& a, double floor = 1e-12);

Var softmax_rows(const Var& logits);
Var log_softmax_rows(const Var& logits);

// ---- reductions ----
Var sum(const Var& a);
Var mean(const Var& a);
Var row_sum(const Var& a);   // n x 1
Var row_mean(const Var& a);  // n x 1
Var col_mean(const Var& a);  // 1 x c

// ---- indexing ----
Var gather_rows(const Var& a, std::span<const int> rows);
Var column(const Var& a, Index j);
Var hconcat(const Var& a, const Var& b);

// Forward value is `hard`; gradient passes to `soft` unchanged.
Var straight_through(const Var& soft, Matrix hard);

// out[dst_e] += weight_e * h[src_e]. `weight` may be invalid (all ones).
Var edge_aggregate(const Var& h, const AdjacencyPtr& adj, const Var& weight);

// N x N matrix of Euclidean distances between rows, zero derivative on coincident rows.
Var pairwise_distances(const Var& x);

}  // namespace fedrio::ad
