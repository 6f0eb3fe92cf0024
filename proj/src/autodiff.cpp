#include "fedrio/autodiff.hpp"

#include <Eigen/Sparse>

#include <cassert>
#include <cmath>
#include <stdexcept>

namespace fedrio::ad {

const Matrix& Var::value() const { return tape_->value(*this); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw std::logic_error("Var::scalar on non-1x1 value");
  return v(0, 0);
}

bool Var::requires_grad() const { return tape_->requires_grad(*this); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::parameter(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (const Var& in : inputs) {
    assert(in.tape() == this);
    needs = needs || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : BackwardFn{}, needs});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw std::logic_error("backward: loss from another tape");
  if (nodes_[loss.id()].value.size() != 1) throw std::logic_error("backward: loss must be 1x1");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad = Matrix::Ones(1, 1);
  for (int i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) continue;
    // Copy: the callback may accumulate into other nodes, never into itself.
    const Matrix upstream = n.grad;
    n.backward(upstream);
  }
}

Matrix Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Eigen::VectorXd Adjacency::in_degree() const {
  Eigen::VectorXd deg = Eigen::VectorXd::Zero(num_nodes);
  for (int d : dst) deg(d) += 1.0;
  return deg;
}

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

template <typename F, typename DF>
Var unary(const Var& a, F f, DF df) {
  Tape& t = *a.tape();
  Matrix out = a.value().unaryExpr(f);
  return t.record(std::move(out), {a}, [&t, a, df](const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(t.value(a).unaryExpr(df)));
  });
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Tape& t = *a.tape();
  Matrix out = a.value() * b.value();
  return t.record(std::move(out), {a, b}, [&t, a, b](const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.requires_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

Var operator+(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tape& t = *a.tape();
  return t.record(a.value() + b.value(), {a, b}, [&t, a, b](const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var operator-(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tape& t = *a.tape();
  return t.record(a.value() - b.value(), {a, b}, [&t, a, b](const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var operator-(const Var& a) { return -1.0 * a; }

Var operator*(double s, const Var& a) {
  Tape& t = *a.tape();
  return t.record(s * a.value(), {a}, [&t, a, s](const Matrix& g) { t.accumulate(a, s * g); });
}

Var operator*(const Var& a, double s) { return s * a; }

Var add_scalar(const Var& a, double s) {
  Tape& t = *a.tape();
  Matrix out = a.value().array() + s;
  return t.record(std::move(out), {a}, [&t, a](const Matrix& g) { t.accumulate(a, g); });
}

Var cwise_mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "cwise_mul");
  Tape& t = *a.tape();
  return t.record(a.value().cwiseProduct(b.value()), {a, b}, [&t, a, b](const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(t.value(b)));
    if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(t.value(a)));
  });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: shape mismatch");
  Tape& t = *a.tape();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return t.record(std::move(out), {a, row}, [&t, a, row](const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

Var add_col(const Var& a, const Var& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) throw std::invalid_argument("add_col: shape mismatch");
  Tape& t = *a.tape();
  Matrix out = a.value().colwise() + col.value().col(0);
  return t.record(std::move(out), {a, col}, [&t, a, col](const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(col)) t.accumulate(col, g.rowwise().sum());
  });
}

Var mul_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("mul_row: shape mismatch");
  Tape& t = *a.tape();
  Matrix out = a.value().array().rowwise() * row.value().row(0).array();
  return t.record(std::move(out), {a, row}, [&t, a, row](const Matrix& g) {
    if (t.requires_grad(a)) {
      t.accumulate(a, (g.array().rowwise() * t.value(row).row(0).array()).matrix());
    }
    if (t.requires_grad(row)) t.accumulate(row, g.cwiseProduct(t.value(a)).colwise().sum());
  });
}

Var mul_col(const Var& a, const Var& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) throw std::invalid_argument("mul_col: shape mismatch");
  Tape& t = *a.tape();
  Matrix out = a.value().array().colwise() * col.value().col(0).array();
  return t.record(std::move(out), {a, col}, [&t, a, col](const Matrix& g) {
    if (t.requires_grad(a)) {
      t.accumulate(a, (g.array().colwise() * t.value(col).col(0).array()).matrix());
    }
    if (t.requires_grad(col)) t.accumulate(col, g.cwiseProduct(t.value(a)).rowwise().sum());
  });
}

Var mul_scalar(const Var& a, const Var& s) {
  if (s.value().size() != 1) throw std::invalid_argument("mul_scalar: scale must be 1x1");
  Tape& t = *a.tape();
  Matrix out = a.value() * s.scalar();
  return t.record(std::move(out), {a, s}, [&t, a, s](const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * t.value(s)(0, 0));
    if (t.requires_grad(s)) t.accumulate(s, Matrix::Constant(1, 1, g.cwiseProduct(t.value(a)).sum()));
  });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(const Var& a) {
  Tape& t = *a.tape();
  Matrix out = a.value().array().exp();
  Matrix val = out;
  return t.record(std::move(out), {a}, [&t, a, val](const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(val));
  });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var safe_sqrt(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? std::sqrt(x) : 0.0; },
               [](double x) { return x > 0.0 ? 0.5 / std::sqrt(x) : 0.0; });
}

Var safe_recip(const Var& a) {
  return unary(a, [](double x) { return x != 0.0 ? 1.0 / x : 0.0; },
               [](double x) { return x != 0.0 ? -1.0 / (x * x) : 0.0; });
}

Var log_clamped(const Var& a, double floor) {
  return unary(a, [floor](double x) { return std::log(x > floor ? x : floor); },
               [floor](double x) { return x > floor ? 1.0 / x : 0.0; });
}

Var softmax_rows(const Var& logits) {
  Tape& t = *logits.tape();
  const Matrix& z = logits.value();
  Matrix p = (z.colwise() - z.rowwise().maxCoeff()).array().exp().matrix();
  p.array().colwise() /= p.rowwise().sum().array();
  Matrix p_copy = p;
  return t.record(std::move(p), {logits}, [&t, logits, p_copy](const Matrix& g) {
    // dz = p .* (g - rowsum(g .* p))
    Eigen::VectorXd dot = g.cwiseProduct(p_copy).rowwise().sum();
    Matrix dz = p_copy.cwiseProduct(g.colwise() - dot);
    t.accumulate(logits, dz);
  });
}

Var log_softmax_rows(const Var& logits) {
  Tape& t = *logits.tape();
  const Matrix& z = logits.value();
  Eigen::VectorXd mx = z.rowwise().maxCoeff();
  Matrix shifted = z.colwise() - mx;
  Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log().matrix();
  Matrix out = shifted.colwise() - lse;
  Matrix p = out.array().exp();
  return t.record(std::move(out), {logits}, [&t, logits, p](const Matrix& g) {
    // dz = g - p * rowsum(g)
    Eigen::VectorXd gs = g.rowwise().sum();
    Matrix dz = g - (p.array().colwise() * gs.array()).matrix();
    t.accumulate(logits, dz);
  });
}

Var sum(const Var& a) {
  Tape& t = *a.tape();
  const Index r = a.rows(), c = a.cols();
  return t.record(Matrix::Constant(1, 1, a.value().sum()), {a}, [&t, a, r, c](const Matrix& g) {
    t.accumulate(a, Matrix::Constant(r, c, g(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw std::invalid_argument("mean of empty matrix");
  return (1.0 / n) * sum(a);
}

Var row_sum(const Var& a) {
  Tape& t = *a.tape();
  const Index c = a.cols();
  Matrix out = a.value().rowwise().sum();
  return t.record(std::move(out), {a}, [&t, a, c](const Matrix& g) {
    t.accumulate(a, g.col(0).replicate(1, c));
  });
}

Var row_mean(const Var& a) { return (1.0 / static_cast<double>(a.cols())) * row_sum(a); }

Var col_mean(const Var& a) {
  Tape& t = *a.tape();
  const Index r = a.rows();
  Matrix out = a.value().colwise().mean();
  return t.record(std::move(out), {a}, [&t, a, r](const Matrix& g) {
    t.accumulate(a, (g.row(0) / static_cast<double>(r)).replicate(r, 1));
  });
}

Var gather_rows(const Var& a, std::span<const int> rows) {
  Tape& t = *a.tape();
  std::vector<int> idx(rows.begin(), rows.end());
  Matrix out(static_cast<Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows()) throw std::out_of_range("gather_rows: index out of range");
    out.row(static_cast<Index>(i)) = a.value().row(idx[i]);
  }
  const Index r = a.rows(), c = a.cols();
  return t.record(std::move(out), {a}, [&t, a, idx = std::move(idx), r, c](const Matrix& g) {
    Matrix ga = Matrix::Zero(r, c);
    for (std::size_t i = 0; i < idx.size(); ++i) ga.row(idx[i]) += g.row(static_cast<Index>(i));
    t.accumulate(a, ga);
  });
}

Var column(const Var& a, Index j) {
  if (j < 0 || j >= a.cols()) throw std::out_of_range("column: index out of range");
  Tape& t = *a.tape();
  const Index r = a.rows(), c = a.cols();
  Matrix out = a.value().col(j);
  return t.record(std::move(out), {a}, [&t, a, j, r, c](const Matrix& g) {
    Matrix ga = Matrix::Zero(r, c);
    ga.col(j) = g.col(0);
    t.accumulate(a, ga);
  });
}

Var hconcat(const Var& a, const Var& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("hconcat: row mismatch");
  Tape& t = *a.tape();
  const Index ca = a.cols(), cb = b.cols();
  Matrix out(a.rows(), ca + cb);
  out << a.value(), b.value();
  return t.record(std::move(out), {a, b}, [&t, a, b, ca, cb](const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g.leftCols(ca));
    if (t.requires_grad(b)) t.accumulate(b, g.rightCols(cb));
  });
}

Var straight_through(const Var& soft, Matrix hard) {
  if (hard.rows() != soft.rows() || hard.cols() != soft.cols()) {
    throw std::invalid_argument("straight_through: shape mismatch");
  }
  Tape& t = *soft.tape();
  return t.record(std::move(hard), {soft}, [&t, soft](const Matrix& g) { t.accumulate(soft, g); });
}

Var edge_aggregate(const Var& h, const AdjacencyPtr& adj, const Var& weight) {
  if (!adj || adj->num_nodes != h.rows()) throw std::invalid_argument("edge_aggregate: node count mismatch");
  const std::size_t m = adj->num_edges();
  const bool weighted = weight.valid();
  if (weighted && (weight.rows() != static_cast<Index>(m) || weight.cols() != 1)) {
    throw std::invalid_argument("edge_aggregate: weight must be E x 1");
  }
  Tape& t = *h.tape();
  // A(dst, src) = w; duplicate entries sum.
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(m);
  for (std::size_t e = 0; e < m; ++e) {
    const double w = weighted ? weight.value()(static_cast<Index>(e), 0) : 1.0;
    if (w != 0.0) entries.emplace_back(adj->dst[e], adj->src[e], w);
  }
  auto a = std::make_shared<Eigen::SparseMatrix<double>>(adj->num_nodes, adj->num_nodes);
  a->setFromTriplets(entries.begin(), entries.end());
  Matrix out = *a * h.value();
  auto backward = [&t, h, adj, a, weight, weighted, m](const Matrix& g) {
    if (t.requires_grad(h)) t.accumulate(h, Matrix(a->transpose() * g));
    if (weighted && t.requires_grad(weight)) {
      // Row-major copies keep the per-edge dot products contiguous.
      const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gr = g, hr = t.value(h);
      Matrix gw(static_cast<Index>(m), 1);
      for (std::size_t e = 0; e < m; ++e) gw(static_cast<Index>(e), 0) = gr.row(adj->dst[e]).dot(hr.row(adj->src[e]));
      t.accumulate(weight, gw);
    }
  };
  if (weighted) return t.record(std::move(out), {h, weight}, std::move(backward));
  return t.record(std::move(out), {h}, std::move(backward));
}

Var pairwise_distances(const Var& x) {
  Tape& t = *x.tape();
  const Matrix& xv = x.value();
  const Index n = xv.rows();
  Matrix d = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      d(i, j) = d(j, i) = (xv.row(i) - xv.row(j)).norm();
    }
  }
  Matrix d_copy = d;
  return t.record(std::move(d), {x}, [&t, x, d_copy, n](const Matrix& g) {
    const Matrix& xv = t.value(x);
    Matrix gx = Matrix::Zero(xv.rows(), xv.cols());
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < n; ++j) {
        if (i == j || d_copy(i, j) == 0.0) continue;
        const double s = (g(i, j) + g(j, i)) / d_copy(i, j);
        // Each unordered pair is visited twice; only push onto row i here.
        gx.row(i) += s * (xv.row(i) - xv.row(j));
      }
    }
    t.accumulate(x, gx);
  });
}

}  // namespace fedrio::ad
