#include "doctest.h"
#include "support.hpp"

#include "fedrio/params.hpp"

using namespace fedrio;
using fedrio::testing::grad_check;

namespace {

ParamSet random_set(std::initializer_list<std::pair<const char*, std::pair<int, int>>> shapes, std::uint64_t seed) {
  Rng rng(seed);
  ParamSet p;
  for (const auto& [name, rc] : shapes) p.add(name, standard_normal(rc.first, rc.second, rng));
  return p;
}

}  // namespace

TEST_CASE("elementwise and linear ops match finite differences") {
  const ParamSet p = random_set({{"a", {3, 4}}, {"b", {4, 2}}, {"row", {1, 4}}, {"col", {3, 1}}, {"s", {1, 1}}}, 1);
  auto check = [&](const std::function<ad::Var(const Bound&)>& f) { CHECK(grad_check(p, f).max_rel_error < 1e-6); };
  using namespace ad;
  check([](const Bound& b) { return sum(matmul(b["a"], b["b"])); });
  check([](const Bound& b) { return sum(square(add_row(b["a"], b["row"]))); });
  check([](const Bound& b) { return sum(square(add_col(b["a"], b["col"]))); });
  check([](const Bound& b) { return sum(square(mul_row(b["a"], b["row"]))); });
  check([](const Bound& b) { return sum(square(mul_col(b["a"], b["col"]))); });
  check([](const Bound& b) { return sum(square(mul_scalar(b["a"], b["s"]))); });
  check([](const Bound& b) { return mean(exp(0.3 * b["a"])); });
  check([](const Bound& b) { return sum(cwise_mul(b["a"], b["a"] - add_scalar(b["a"], 2.0))); });
  check([](const Bound& b) { return sum(square(-b["a"])); });
  check([](const Bound& b) { return sum(relu(b["a"])); });
}

TEST_CASE("softmax family and reductions match finite differences") {
  const ParamSet p = random_set({{"a", {4, 3}}}, 2);
  using namespace ad;
  auto check = [&](const std::function<ad::Var(const Bound&)>& f) { CHECK(grad_check(p, f).max_rel_error < 1e-6); };
  Rng rng(3);
  const Matrix w = standard_normal(4, 3, rng);
  check([&](const Bound& b) { return sum(cwise_mul(softmax_rows(b["a"]), b.vars()[0].tape()->constant(w))); });
  check([&](const Bound& b) { return sum(cwise_mul(log_softmax_rows(b["a"]), b.vars()[0].tape()->constant(w))); });
  check([](const Bound& b) { return sum(square(row_sum(b["a"]))); });
  check([](const Bound& b) { return sum(square(row_mean(b["a"]))); });
  check([](const Bound& b) { return sum(square(col_mean(b["a"]))); });
  check([](const Bound& b) { return sum(safe_sqrt(add_scalar(square(b["a"]), 1.0))); });
  check([](const Bound& b) { return sum(safe_recip(add_scalar(square(b["a"]), 1.0))); });
  check([](const Bound& b) { return sum(log_clamped(add_scalar(square(b["a"]), 0.5))); });
}

TEST_CASE("indexing, concatenation and graph ops match finite differences") {
  const ParamSet p = random_set({{"h", {6, 3}}, {"w", {10, 1}}, {"x", {5, 3}}}, 4);
  const auto adj = fedrio::testing::six_node_graph();
  using namespace ad;
  auto check = [&](const std::function<ad::Var(const Bound&)>& f) { CHECK(grad_check(p, f).max_rel_error < 1e-6); };
  const std::vector<int> rows{4, 0, 0, 2};
  check([&](const Bound& b) { return sum(square(gather_rows(b["h"], rows))); });
  check([](const Bound& b) { return sum(square(column(b["h"], 1))); });
  check([](const Bound& b) { return sum(square(hconcat(b["h"], b["h"]))); });
  check([&](const Bound& b) { return sum(square(edge_aggregate(b["h"], adj, b["w"]))); });
  check([&](const Bound& b) { return sum(square(edge_aggregate(b["h"], adj, Var{}))); });
  check([](const Bound& b) { return sum(pairwise_distances(b["x"])); });
}

TEST_CASE("edge_aggregate sums weighted source rows into destinations") {
  ad::Tape tape;
  const auto adj = fedrio::testing::make_adjacency(3, {{0, 1}});
  Matrix h(3, 2);
  h << 1, 2, 3, 4, 5, 6;
  Matrix w(2, 1);
  w << 0.5, 2.0;  // 0->1 and 1->0
  const Matrix out = ad::edge_aggregate(tape.constant(h), adj, tape.constant(w)).value();
  CHECK(out(0, 0) == doctest::Approx(6.0));
  CHECK(out(0, 1) == doctest::Approx(8.0));
  CHECK(out(1, 0) == doctest::Approx(0.5));
  CHECK(out(2, 0) == 0.0);
}

TEST_CASE("straight-through forwards the hard value and passes the soft gradient") {
  ad::Tape tape;
  const ad::Var soft = tape.parameter(Matrix::Constant(2, 2, 0.3));
  const ad::Var st = ad::straight_through(soft, Matrix::Identity(2, 2));
  CHECK(st.value() == Matrix::Identity(2, 2));
  const ad::Var loss = ad::sum(ad::cwise_mul(st, tape.constant(Matrix::Constant(2, 2, 3.0))));
  tape.backward(loss);
  CHECK(tape.grad(soft).isApprox(Matrix::Constant(2, 2, 3.0)));
}

TEST_CASE("pairwise distances have zero derivative on coincident rows") {
  ad::Tape tape;
  const ad::Var x = tape.parameter(Matrix::Ones(3, 2));
  tape.backward(ad::sum(ad::pairwise_distances(x)));
  CHECK(tape.grad(x).isZero());
}

TEST_CASE("gradients accumulate over repeated uses") {
  ad::Tape tape;
  const ad::Var a = tape.parameter(Matrix::Constant(1, 1, 2.0));
  tape.backward(ad::sum(a + a + ad::cwise_mul(a, a)));
  CHECK(tape.grad(a)(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("constants receive no gradient") {
  ad::Tape tape;
  const ad::Var c = tape.constant(Matrix::Ones(2, 2));
  const ad::Var p = tape.parameter(Matrix::Ones(2, 2));
  tape.backward(ad::sum(ad::cwise_mul(c, p)));
  CHECK_FALSE(c.requires_grad());
  CHECK(tape.grad(c).isZero());
  CHECK(tape.grad(p).isApprox(Matrix::Ones(2, 2)));
}

TEST_CASE("shape mismatches are rejected") {
  ad::Tape tape;
  const ad::Var a = tape.constant(Matrix::Ones(2, 3));
  const ad::Var b = tape.constant(Matrix::Ones(2, 2));
  CHECK_THROWS(ad::matmul(a, b));
  CHECK_THROWS(a + b);
  CHECK_THROWS(tape.backward(a));
}

TEST_CASE("param set flattening round-trips and Adam moves against the gradient") {
  Rng rng(9);
  ParamSet p;
  p.add("w", standard_normal(2, 3, rng));
  p.add("b", standard_normal(1, 3, rng));
  CHECK(p.num_scalars() == 9);
  CHECK(p.offset(1) == 6);
  ParamSet q = p.zeros_like();
  q.assign_flat(p.flatten());
  CHECK(q == p);

  ParamSet grads = p.zeros_like();
  grads[0].setConstant(1.0);
  Adam opt({0.1}, p);
  const ParamSet before = p;
  opt.step(p, grads);
  CHECK((p[0].array() < before[0].array()).all());
  CHECK(p[1] == before[1]);
  CHECK(opt.steps() == 1);
}
