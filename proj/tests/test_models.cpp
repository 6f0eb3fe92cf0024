#include "doctest.h"
#include "support.hpp"

#include "fedrio/math.hpp"
#include "fedrio/models.hpp"

using namespace fedrio;
using namespace fedrio::models;

TEST_CASE("classifier: zero weights, batch independence, manual oracle") {
  Rng rng(1);
  ParamSet p = init_classifier(4, 3, rng);
  const Matrix r = standard_normal(5, 4, rng);
  ParamSet zero = p.zeros_like();
  CHECK(classifier_logits(zero, r).isZero());

  const Matrix all = classifier_logits(p, r);
  for (Eigen::Index i = 0; i < 5; ++i) CHECK(classifier_logits(p, r.row(i)).isApprox(all.row(i)));

  Matrix manual(5, 2);
  for (Eigen::Index i = 0; i < 5; ++i) {
    for (int c = 0; c < 2; ++c) {
      double z = p.at("fc2.b")(0, c);
      for (int h = 0; h < 3; ++h) {
        double a = p.at("fc1.b")(0, h);
        for (int j = 0; j < 4; ++j) a += r(i, j) * p.at("fc1.w")(j, h);
        z += std::max(a, 0.0) * p.at("fc2.w")(h, c);
      }
      manual(i, c) = z;
    }
  }
  CHECK((all - manual).cwiseAbs().maxCoeff() < 1e-12);

  ad::Tape tape;
  const Bound b(tape, p, false);
  CHECK(classifier_forward(b, tape.constant(r)).value().isApprox(all));
  CHECK(classifier_hidden(p) == 3);
}

TEST_CASE("generator: eval determinism, shapes, batch-norm guard") {
  Rng rng(2);
  const Generator g = init_generator({4, 8, 3}, rng);
  const Matrix z = standard_normal(6, 4, rng);
  const Matrix y = one_hot(std::vector<int>{0, 1, 0, 1, 1, 0});
  const Matrix a = generate(g, z, y);
  CHECK(a == generate(g, z, y));
  CHECK(a.rows() == 6);
  CHECK(a.cols() == 3);
  CHECK_THROWS(generate(g, z.topRows(1), y.topRows(1), Mode::Train));
  CHECK_NOTHROW(generate(g, z.topRows(1), y.topRows(1), Mode::Eval));
  CHECK_THROWS(generate(g, standard_normal(6, 5, rng), y));
  CHECK_THROWS(generate(g, z, y.topRows(2)));
}

TEST_CASE("generator: trained conditional outputs differ by class") {
  // Train G so a fixed classifier labels its samples with the conditioning class.
  Rng rng(3);
  Generator g = init_generator({4, 16, 2}, rng);
  ParamSet d;
  d.add("fc1.w", Matrix::Identity(2, 2));
  d.add("fc1.b", Matrix::Zero(1, 2));
  Matrix w2(2, 2);
  w2 << 1, -1, -1, 1;
  d.add("fc2.w", w2);
  d.add("fc2.b", Matrix::Zero(1, 2));
  Adam opt({1e-2}, g.params);
  for (int step = 0; step < 100; ++step) {
    std::vector<int> labels(32);
    for (int i = 0; i < 32; ++i) labels[i] = i % 2;
    const Matrix y = one_hot(labels);
    ad::Tape tape;
    const Bound gp(tape, g.params, true);
    const Bound dp(tape, d, false);
    const auto out = generator_forward(gp, g, standard_normal(32, 4, rng), y, Mode::Train);
    const ad::Var loss = cross_entropy(classifier_forward(dp, out.x), y);
    tape.backward(loss);
    opt.step(g.params, gp.grads());
    update_running_stats(g, out);
  }
  const Matrix z = standard_normal(64, 4, rng);
  const Matrix x0 = generate(g, z, one_hot(std::vector<int>(64, 0)));
  const Matrix x1 = generate(g, z, one_hot(std::vector<int>(64, 1)));
  CHECK((x0 - x1).rowwise().norm().mean() > 0.1);
}

TEST_CASE("generator gradient matches finite differences in train mode") {
  Rng rng(4);
  const Generator g = init_generator({3, 5, 2}, rng);
  ParamSet p = g.params;
  for (std::size_t i = 0; i < p.size(); ++i) p[i] += 0.1 * standard_normal(p[i].rows(), p[i].cols(), rng);
  const Matrix z = standard_normal(6, 3, rng);
  const Matrix y = one_hot(std::vector<int>{0, 1, 1, 0, 1, 0});
  const Matrix target = standard_normal(6, 2, rng);
  const auto res = fedrio::testing::grad_check(p, [&](const Bound& b) {
    ad::Tape& t = *b[std::size_t{0}].tape();
    return ad::mean(ad::square(generator_forward(b, g, z, y, Mode::Train).x - t.constant(target)));
  });
  INFO(res.worst);
  CHECK(res.max_rel_error <= 1e-3);
}

TEST_CASE("running statistics move toward the batch statistics") {
  Rng rng(5);
  Generator g = init_generator({3, 4, 2}, rng);
  ad::Tape tape;
  const Bound b(tape, g.params, false);
  const auto out = generator_forward(b, g, standard_normal(8, 3, rng), one_hot(std::vector<int>(8, 1)), Mode::Train);
  update_running_stats(g, out, 1.0);
  CHECK(g.buffers.at("bn1.mean").isApprox(out.batch_mean[0]));
  CHECK(g.buffers.at("bn2.var").isApprox(out.batch_var[1]));
}

TEST_CASE("KL divergence: identities, closed form, summation oracle") {
  Vector p(2), q(2);
  p << 0.3, 0.7;
  CHECK(kl_divergence(p, p) == doctest::Approx(0.0));
  p << 1.0, 0.0;
  q << 0.5, 0.5;
  CHECK(kl_divergence(p, q) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  Rng rng(6);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int t = 0; t < 100; ++t) {
    Vector a(3), b(3);
    for (int i = 0; i < 3; ++i) {
      a(i) = u(rng);
      b(i) = u(rng);
    }
    a /= a.sum();
    b /= b.sum();
    double oracle = 0;
    for (int i = 0; i < 3; ++i) oracle += a(i) * std::log(a(i) / b(i));
    CHECK(std::abs(kl_divergence(a, b) - oracle) < 1e-8);
    CHECK(kl_divergence(a, b) >= 0.0);
  }
}

TEST_CASE("row KL and cross-entropy match plain evaluation and finite differences") {
  Rng rng(7);
  ParamSet p;
  p.add("a", standard_normal(4, 2, rng));
  p.add("b", standard_normal(4, 2, rng));
  const std::vector<int> labels{0, 1, 1, 0};
  const Matrix y = one_hot(labels);
  ad::Tape tape;
  const Bound b(tape, p, false);
  const Matrix kl = kl_rows(b["a"], b["b"]).value();
  const Matrix pa = softmax_rows(p.at("a")), pb = softmax_rows(p.at("b"));
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(kl(i, 0) == doctest::Approx(kl_divergence(pa.row(i), pb.row(i))));
  CHECK(cross_entropy(b["a"], y).scalar() == doctest::Approx(fedrio::cross_entropy(p.at("a"), labels)));
  const Matrix w = (Matrix(4, 1) << 0.5, 0.0, 2.0, 1.0).finished();
  double manual = 0;
  for (int i = 0; i < 4; ++i) manual += w(i, 0) * fedrio::cross_entropy(p.at("a").row(i), std::vector<int>{labels[i]});
  CHECK(weighted_cross_entropy_sum(b["a"], y, w).scalar() == doctest::Approx(manual));

  CHECK(fedrio::testing::grad_check(p, [&](const Bound& v) { return ad::mean(kl_rows(v["a"], v["b"])); }).max_rel_error < 1e-6);
  CHECK(fedrio::testing::grad_check(p, [&](const Bound& v) { return cross_entropy(v["a"], y); }).max_rel_error < 1e-6);
}

TEST_CASE("label distribution: forced arithmetic, single client, re-summation") {
  std::vector<std::array<int, 2>> two{{10, 0}, {0, 10}};
  auto d = estimate_label_distribution(two);
  CHECK(d.prior(0) == 0.5);
  CHECK(d.client_weight(0, 0) == 1.0);
  CHECK(d.client_weight(1, 1) == 1.0);
  CHECK_FALSE(d.degenerate);

  std::vector<std::array<int, 2>> one{{3, 7}};
  d = estimate_label_distribution(one);
  CHECK(d.client_weight(0, 0) == 1.0);
  CHECK(d.client_weight(0, 1) == 1.0);

  std::vector<std::array<int, 2>> skew{{120, 3}, {0, 45}, {7, 0}, {33, 210}, {1, 1}};
  d = estimate_label_distribution(skew);
  for (int c = 0; c < 2; ++c) {
    CHECK(std::abs(d.client_weight.col(c).sum() - 1.0) < 1e-12);
    int col = 0;
    for (const auto& s : skew) col += s[c];
    for (std::size_t k = 0; k < skew.size(); ++k) CHECK(d.client_weight(static_cast<Eigen::Index>(k), c) == doctest::Approx(static_cast<double>(skew[k][c]) / col));
  }
  CHECK(std::abs(d.prior.sum() - 1.0) < 1e-12);

  std::vector<std::array<int, 2>> missing{{4, 0}, {6, 0}};
  d = estimate_label_distribution(missing);
  CHECK(d.degenerate);
  CHECK(d.prior(1) == 0.0);
  CHECK(d.client_weight(0, 1) == 0.5);

  std::vector<std::array<int, 2>> none{{0, 0}};
  CHECK_THROWS(estimate_label_distribution(none));
  std::vector<std::array<int, 2>> negative{{-1, 2}};
  CHECK_THROWS(estimate_label_distribution(negative));
}

TEST_CASE("one-hot rejects out-of-range labels") {
  CHECK_THROWS(one_hot(std::vector<int>{0, 2}));
  CHECK(one_hot(std::vector<int>{1}) == (Matrix(1, 2) << 0, 1).finished());
}
