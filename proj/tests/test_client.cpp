#include "doctest.h"
#include "support.hpp"

#include "fedrio/client.hpp"
#include "fedrio/math.hpp"

#include <numeric>

using namespace fedrio;
using namespace fedrio::client;
using fedrio::testing::grad_check;

namespace {

ParamSet classifier(int in, int hidden, std::uint64_t seed) {
  Rng rng(seed);
  ParamSet p = models::init_classifier(in, hidden, rng);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] += 0.1 * standard_normal(p[i].rows(), p[i].cols(), rng);
  return p;
}

// Plain-math oracles, written without the tape.
double kl_mean(const Matrix& p_logits, const Matrix& q_logits) {
  const Matrix p = softmax_rows(p_logits), q = softmax_rows(q_logits);
  double s = 0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) s += kl_divergence(p.row(i), q.row(i));
  return s / p.rows();
}

double ce(const Matrix& logits, const std::vector<int>& y) { return fedrio::cross_entropy(logits, y); }

double diversity_oracle(const Matrix& x, const Matrix& z) {
  const auto n = x.rows();
  double s = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) s -= (x.row(i) - x.row(j)).norm() * (z.row(i) - z.row(j)).norm();
  return std::exp(s / static_cast<double>(n * n));
}

double contrastive_oracle(const Vector& r, const Vector& g, const Vector& p, double tau) {
  const double a = std::exp(cosine_similarity(r, g) / tau), b = std::exp(cosine_similarity(r, p) / tau);
  return -std::log(a / (a + b));
}

struct Fixture {
  Rng rng{42};
  int dr = 3;
  ParamSet d1 = classifier(3, 4, 1);
  ParamSet d2 = classifier(3, 5, 2);
  std::vector<int> labels{0, 1, 1, 0, 1};
  Matrix y = models::one_hot(labels);
  Matrix r = standard_normal(5, 3, rng);
  Matrix xg = standard_normal(5, 3, rng);
  Matrix xl = standard_normal(5, 3, rng);
  Matrix r_glo = standard_normal(5, 3, rng);
  Matrix r_pre = standard_normal(5, 3, rng);
  Matrix z = standard_normal(5, 2, rng);
};

data::GraphDataset small_dataset(std::uint64_t seed, int per_class = 100) {
  data::SyntheticGraphConfig cfg;
  cfg.nodes_per_class = per_class;
  cfg.feature_dim = 6;
  cfg.class_mean_separation = 4.0;
  cfg.intra_class_edge_prob = 0.05;
  cfg.inter_class_edge_prob = 0.01;
  cfg.seed = seed;
  return data::generate_synthetic_bot_graph(cfg);
}

// Whole graph as one shard.
LocalData whole_graph(const data::GraphDataset& ds) {
  data::ClientShard shard;
  shard.node_indices.resize(static_cast<std::size_t>(ds.num_nodes()));
  std::iota(shard.node_indices.begin(), shard.node_indices.end(), 0);
  shard.subgraph = ds.edges;
  return make_local_data(ds, shard, 32);
}

struct World {
  backbone::Config cfg;
  ClientState state;
  ParamSet g_backbone, g_classifier;
  models::Generator g_generator;
};

World make_world(int input_dim, std::uint64_t seed) {
  World w;
  w.cfg.dims = {input_dim, 64, 32, 2};
  Rng rng(seed);
  w.g_backbone = backbone::init_params(w.cfg.dims, rng);
  w.g_classifier = models::init_classifier(32, 32, rng);
  w.g_generator = models::init_generator({16, 64, 32}, rng);
  w.state.backbone = w.g_backbone;
  w.state.prev_backbone = w.g_backbone;
  w.state.d1 = w.g_classifier;
  w.state.d2 = models::init_classifier(32, 48, rng);
  w.state.generator = models::init_generator({16, 64, 32}, rng);
  return w;
}

Hyper fast_hyper(int epochs = 1) {
  Hyper h;
  h.local_epochs = epochs;
  return h;
}

}  // namespace

TEST_CASE("hyper validation") {
  Hyper h;
  CHECK_NOTHROW(validate(h));
  h.local_epochs = 0;
  CHECK_THROWS(validate(h));
  h = {};
  h.tau_con = 0;
  CHECK_THROWS(validate(h));
  h = {};
  h.gamma_adv = -1;
  CHECK_THROWS(validate(h));
}

TEST_CASE("local data keeps shard features, both edge directions and a prefix probe") {
  const auto ds = small_dataset(3, 20);
  data::ClientShard shard;
  shard.node_indices = {1, 4, 7};
  shard.subgraph = {{0, 2}};
  const LocalData l = make_local_data(ds, shard, 2);
  CHECK(l.features.row(1) == ds.features.row(4));
  CHECK(l.adjacency->num_edges() == 2);
  CHECK(l.probe == std::vector<int>{0, 1});
}

TEST_CASE("distillation loss: echo, hand oracle, duplication invariance") {
  Fixture f;
  ad::Tape tape;
  const Bound d1(tape, f.d1, false);
  CHECK(distill_loss(d1, tape.constant(f.r), tape.constant(f.r)).scalar() == doctest::Approx(0.0));
  const Matrix r2 = f.r.topRows(2), x2 = f.xg.topRows(2);
  const double got = distill_loss(d1, tape.constant(r2), tape.constant(x2)).scalar();
  CHECK(std::abs(got - kl_mean(models::classifier_logits(f.d1, r2), models::classifier_logits(f.d1, x2))) < 1e-6);
  Matrix rr(4, 3), xx(4, 3);
  rr << r2, r2;
  xx << x2, x2;
  CHECK(distill_loss(d1, tape.constant(rr), tape.constant(xx)).scalar() == doctest::Approx(got).epsilon(1e-12));
  CHECK(got >= 0.0);
}

TEST_CASE("adversarial loss: identical classifiers, closed form, shift invariance") {
  Fixture f;
  ad::Tape tape;
  const Bound a(tape, f.d1, false), a2(tape, f.d1, false);
  CHECK(adversarial_loss(a, a2, tape.constant(f.r)).scalar() == doctest::Approx(0.0));

  // D1 gives logits (1, 0) and D2 gives (0, 1) on r = (1, 0).
  ParamSet p1, p2;
  p1.add("fc1.w", Matrix::Identity(2, 2));
  p1.add("fc1.b", Matrix::Zero(1, 2));
  p1.add("fc2.w", Matrix::Identity(2, 2));
  p1.add("fc2.b", Matrix::Zero(1, 2));
  p2 = p1;
  p2.at("fc2.w") << 0, 1, 1, 0;
  const Matrix r = (Matrix(1, 2) << 1, 0).finished();
  const Bound b1(tape, p1, false), b2(tape, p2, false);
  const double e = std::exp(1.0);
  const double closed = (e - 1) / (e + 1);  // (sigma_0 - sigma_1) * ln(sigma_0 / sigma_1), the log ratio is 1
  CHECK(adversarial_loss(b1, b2, tape.constant(r)).scalar() == doctest::Approx(closed).epsilon(1e-12));
  CHECK(closed == doctest::Approx(0.4621).epsilon(1e-4));

  p1.at("fc2.b").setConstant(3.0);
  p2.at("fc2.b").setConstant(-2.0);
  const Bound s1(tape, p1, false), s2(tape, p2, false);
  CHECK(adversarial_loss(s1, s2, tape.constant(r)).scalar() == doctest::Approx(closed).epsilon(1e-12));
}

TEST_CASE("contrastive loss: symmetric case, closed form, monotonicity") {
  Vector r(3), g(3), p(3);
  r << 1, 2, 3;
  CHECK(std::abs(contrastive_loss(r, r, r, 0.5) - std::log(2.0)) < 1e-9);
  Vector e1 = Vector::Unit(3, 0), e2 = Vector::Unit(3, 1);
  CHECK(contrastive_loss(e1, e1, e2, 1.0) == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 1))));
  CHECK(contrastive_loss(e1, e1, e2, 1.0) == doctest::Approx(0.3133).epsilon(1e-4));
  double prev = 1e9;
  for (double a = 0.0; a <= 1.0; a += 0.1) {
    g = std::cos(a * 1.5) * e2 + std::sin(a * 1.5) * e1;  // cosine with e1 increases in a
    const double v = contrastive_loss(e1, g, e2 + 0.5 * Vector::Unit(3, 2), 0.5);
    CHECK(v < prev);
    prev = v;
  }
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const Vector a = standard_normal(4, 1, rng), b = standard_normal(4, 1, rng), c = standard_normal(4, 1, rng);
    CHECK(contrastive_loss(a, b, c, 0.7) == doctest::Approx(contrastive_oracle(a, b, c, 0.7)).epsilon(1e-10));
  }
  CHECK(std::isfinite(contrastive_loss(Vector::Zero(3), r, r, 0.5)));
  CHECK_THROWS(contrastive_loss(r, r, r, 0.0));
}

TEST_CASE("diversity loss: identical outputs, strict bound, hand computation") {
  ad::Tape tape;
  Rng rng(4);
  const Matrix z = standard_normal(3, 2, rng);
  CHECK(diversity_loss(tape.constant(Matrix::Ones(3, 4)), z).scalar() == 1.0);
  const Matrix x = standard_normal(3, 4, rng);
  const double v = diversity_loss(tape.constant(x), z).scalar();
  CHECK(v < 1.0);
  CHECK(v > 0.0);
  CHECK(std::abs(v - diversity_oracle(x, z)) < 1e-6);
  CHECK_THROWS(diversity_loss(tape.constant(x.topRows(1)), z.topRows(1)));
}

TEST_CASE("stage 1 loss: annihilation, identical classifiers, compositional oracle") {
  Fixture f;
  Hyper h;
  ad::Tape tape;
  const Bound d1(tape, f.d1, false), d2(tape, f.d2, false);
  const Stage1Batch b{tape.constant(f.r), f.y, f.xg, f.xl};
  const auto L = [&](const ParamSet& a, const ParamSet& c, const Matrix& x) {
    return std::pair{models::classifier_logits(a, x), models::classifier_logits(c, x)};
  };
  const auto [d1r, d2r] = L(f.d1, f.d2, f.r);
  const auto [d1g, d2g] = L(f.d1, f.d2, f.xg);
  const auto [d1l, d2l] = L(f.d1, f.d2, f.xl);
  const double cls = ce(d1r, f.labels) + ce(d2r, f.labels) + ce(d1g, f.labels) + ce(d2g, f.labels);
  const double dis = kl_mean(d1r, d1g), dis2 = kl_mean(d2r, d2g);
  const double adv = kl_mean(d1r, d2r), advg = kl_mean(d1l, d2l);

  const StageLoss full = stage1_loss(d1, d2, b, h);
  CHECK(std::abs(full.total.scalar() - (cls + h.alpha_dis * (dis + dis2) + h.gamma_adv * (advg - adv))) < 1e-6);
  CHECK(full.parts.at("adv") == doctest::Approx(adv));

  Hyper zero = h;
  zero.alpha_dis = zero.gamma_adv = 0;
  CHECK(std::abs(stage1_loss(d1, d2, b, zero).total.scalar() - cls) < 1e-12);

  const Bound same(tape, f.d1, false);
  const StageLoss eq = stage1_loss(d1, same, b, h);
  CHECK(eq.parts.at("adv") == doctest::Approx(0.0));
  CHECK(eq.parts.at("advg") == doctest::Approx(0.0));
}

TEST_CASE("stage 2 loss: annihilation, round-1 contrastive, compositional oracle") {
  Fixture f;
  Hyper h;
  ad::Tape tape;
  const Bound d1(tape, f.d1, false), d2(tape, f.d2, false);
  const StageLoss full = stage2_loss(d1, d2, {tape.constant(f.r), f.y, f.r_glo, f.r_pre}, h);
  const Matrix d1r = models::classifier_logits(f.d1, f.r), d2r = models::classifier_logits(f.d2, f.r);
  double con = 0;
  for (int i = 0; i < 5; ++i) con += contrastive_oracle(f.r.row(i), f.r_glo.row(i), f.r_pre.row(i), h.tau_con) / 5;
  const double cls = ce(d1r, f.labels) + ce(d2r, f.labels);
  CHECK(std::abs(full.total.scalar() - (cls + h.gamma_adv * kl_mean(d1r, d2r) + h.mu_con * con)) < 1e-6);

  Hyper zero = h;
  zero.mu_con = zero.gamma_adv = 0;
  CHECK(std::abs(stage2_loss(d1, d2, {tape.constant(f.r), f.y, f.r_glo, f.r_pre}, zero).total.scalar() - cls) < 1e-12);

  // Snapshot equal to the global backbone: the symmetric case for every sample.
  const StageLoss round1 = stage2_loss(d1, d2, {tape.constant(f.r), f.y, f.r_glo, f.r_glo}, h);
  CHECK(std::abs(round1.parts.at("con") - std::log(2.0)) < 1e-9);
}

TEST_CASE("stage 3 loss: compositional oracle and sign of the adversarial term") {
  Fixture f;
  ad::Tape tape;
  const Bound d1(tape, f.d1, false), d2(tape, f.d2, false);
  const StageLoss s = stage3_loss(d1, d2, {tape.constant(f.xl), f.z, f.y});
  const double cls = ce(models::classifier_logits(f.d1, f.xl), f.labels);
  const double advg = kl_mean(models::classifier_logits(f.d1, f.xl), models::classifier_logits(f.d2, f.xl));
  CHECK(std::abs(s.total.scalar() - (cls - advg + diversity_oracle(f.xl, f.z))) < 1e-6);
  // Larger disagreement lowers the total when the other terms are fixed.
  CHECK(s.parts.at("total") == doctest::Approx(s.parts.at("cls") - s.parts.at("advg") + s.parts.at("var")));
}

TEST_CASE("every client loss matches finite differences on a micro-batch") {
  Fixture f;
  Hyper h;
  ParamSet both;
  for (const auto& e : f.d1) both.add("d1." + e.name, e.value);
  for (const auto& e : f.d2) both.add("d2." + e.name, e.value);
  both.add("r", f.r);
  both.add("x", f.xl);
  auto run = [&](const std::function<ad::Var(const Bound&)>& f_) {
    const auto res = grad_check(both, f_);
    INFO(res.worst);
    CHECK(res.max_rel_error <= 1e-3);
  };
  // Classifier forward written against the prefixed names.
  auto fwd = [&](const Bound& b, const std::string& pre, const ad::Var& x) {
    using namespace ad;
    const Var hdn = relu(add_row(matmul(x, b[pre + "fc1.w"]), b[pre + "fc1.b"]));
    return add_row(matmul(hdn, b[pre + "fc2.w"]), b[pre + "fc2.b"]);
  };
  run([&](const Bound& b) { return ad::mean(models::kl_rows(fwd(b, "d1.", b["r"]), fwd(b, "d1.", b["x"]))); });
  run([&](const Bound& b) { return ad::mean(models::kl_rows(fwd(b, "d1.", b["r"]), fwd(b, "d2.", b["r"]))); });
  run([&](const Bound& b) { return ad::mean(contrastive_loss(b["r"], b["x"], b.vars()[0].tape()->constant(f.r_pre), h.tau_con)); });
  run([&](const Bound& b) { return diversity_loss(b["x"], f.z); });

  // Composite stage losses through the real entry points, classifiers and inputs trainable.
  ParamSet cls1 = f.d1, cls2 = f.d2;
  ParamSet inputs;
  inputs.add("r", f.r);
  inputs.add("x", f.xl);
  auto merged = [&](const std::function<ad::Var(const Bound&, const Bound&, const Bound&)>& g) {
    for (int which = 0; which < 3; ++which) {
      const ParamSet& target = which == 0 ? cls1 : (which == 1 ? cls2 : inputs);
      const auto res = grad_check(target, [&](const Bound& tb) {
        ad::Tape& t = *tb[std::size_t{0}].tape();
        const Bound o1(t, cls1, false), o2(t, cls2, false), oi(t, inputs, false);
        return g(which == 0 ? tb : o1, which == 1 ? tb : o2, which == 2 ? tb : oi);
      });
      INFO("group " << which << " worst " << res.worst);
      CHECK(res.max_rel_error <= 1e-3);
    }
  };
  merged([&](const Bound& a, const Bound& c, const Bound& in) {
    return stage1_loss(a, c, {in["r"], f.y, f.xg, f.xl}, h).total;
  });
  merged([&](const Bound& a, const Bound& c, const Bound& in) {
    return stage2_loss(a, c, {in["r"], f.y, f.r_glo, f.r_pre}, h).total;
  });
  merged([&](const Bound& a, const Bound& c, const Bound& in) {
    return stage3_loss(a, c, {in["x"], f.z, f.y}).total;
  });
}

TEST_CASE("diversity-only optimization of a generator lowers the diversity loss") {
  Rng rng(5);
  models::Generator g = models::init_generator({4, 16, 3}, rng);
  Adam opt({1e-2}, g.params);
  const Matrix y = models::one_hot(std::vector<int>{0, 1, 0, 1, 0, 1, 0, 1});
  double first = 0, last = 0;
  for (int step = 0; step < 50; ++step) {
    const Matrix z = standard_normal(8, 4, rng);
    ad::Tape tape;
    const Bound gp(tape, g.params, true);
    const auto out = models::generator_forward(gp, g, z, y, models::Mode::Train);
    const ad::Var loss = diversity_loss(out.x, z);
    if (step == 0) first = loss.scalar();
    last = loss.scalar();
    tape.backward(loss);
    opt.step(g.params, gp.grads());
  }
  CHECK(last < first);
}

TEST_CASE("local round: determinism, isolation of downloaded globals, metrics") {
  const auto ds = small_dataset(6, 60);
  const LocalData local = whole_graph(ds);
  World a = make_world(6, 7), b = make_world(6, 7);
  const Globals ga{a.g_backbone, a.g_classifier, a.g_generator};
  const Globals gb{b.g_backbone, b.g_classifier, b.g_generator};
  const ParamSet global_copy = a.g_backbone;
  Rng r1(8), r2(8);
  const RoundMetrics m1 = run_local_round(a.state, local, ga, fast_hyper(), a.cfg, r1);
  const RoundMetrics m2 = run_local_round(b.state, local, gb, fast_hyper(), b.cfg, r2);
  CHECK(a.state.backbone == b.state.backbone);
  CHECK(a.state.d1 == b.state.d1);
  CHECK(a.state.generator.params == b.state.generator.params);
  CHECK(m1.losses == m2.losses);
  CHECK(a.g_backbone == global_copy);
  CHECK(a.state.prev_backbone == a.state.backbone);
  CHECK_FALSE(a.state.backbone == global_copy);
  CHECK(m1.pooled_repr.size() == 32);
  CHECK(m1.pred_dist.sum() == doctest::Approx(1.0));
  for (const char* k : {"stage1.total", "stage2.total", "stage3.total", "stage2.con", "stage3.var"}) CHECK(m1.losses.contains(k));

  Hyper bad = fast_hyper();
  bad.local_epochs = 0;
  CHECK_THROWS(run_local_round(a.state, local, ga, bad, a.cfg, r1));
}

TEST_CASE("non-finite loss aborts the round") {
  const auto ds = small_dataset(9, 20);
  const LocalData local = whole_graph(ds);
  World w = make_world(6, 10);
  w.state.d1.at("fc2.b")(0, 0) = std::numeric_limits<double>::quiet_NaN();
  Rng rng(11);
  CHECK_THROWS_AS(run_local_round(w.state, local, {w.g_backbone, w.g_classifier, w.g_generator}, fast_hyper(), w.cfg, rng),
                  RoundAbort);
}

TEST_CASE("local accuracy after one round beats a label-permutation null") {
  const auto ds = small_dataset(12, 100);
  const LocalData local = whole_graph(ds);
  auto accuracy = [&](const LocalData& l, std::uint64_t seed) {
    World w = make_world(6, 13);
    Rng rng(seed);
    return run_local_round(w.state, l, {w.g_backbone, w.g_classifier, w.g_generator}, fast_hyper(3), w.cfg, rng)
        .local_accuracy;
  };
  const double real = accuracy(local, 14);
  std::vector<double> null;
  Rng perm_rng(15);
  for (int i = 0; i < 8; ++i) {
    LocalData shuffled = local;
    std::shuffle(shuffled.labels.begin(), shuffled.labels.end(), perm_rng);
    null.push_back(accuracy(shuffled, 16 + static_cast<std::uint64_t>(i)));
  }
  const double mu = std::accumulate(null.begin(), null.end(), 0.0) / null.size();
  double var = 0;
  for (double v : null) var += (v - mu) * (v - mu);
  const double sd = std::sqrt(var / (null.size() - 1));
  INFO("real " << real << " null " << mu << " +- " << sd);
  CHECK(real > std::max(0.5, mu) + 3 * sd);
}

TEST_CASE("supervised round and proximal term") {
  const auto ds = small_dataset(17, 40);
  const LocalData local = whole_graph(ds);
  World w = make_world(6, 18);
  Rng rng(19);
  ParamSet p;
  p.add("a", standard_normal(2, 3, rng));
  ParamSet anchor = p;
  anchor[0] += standard_normal(2, 3, rng);
  const auto res = grad_check(p, [&](const Bound& b) { return proximal_term(b, anchor, 0.7); });
  CHECK(res.max_rel_error < 1e-6);
  {
    ad::Tape tape;
    const Bound b(tape, p, false);
    CHECK(proximal_term(b, anchor, 0.7).scalar() == doctest::Approx(0.35 * (p[0] - anchor[0]).squaredNorm()));
  }

  // A very large proximal weight keeps the client close to the global models.
  const ProxAnchor prox{w.g_backbone, w.g_classifier, 1e3};
  ClientState free_state = w.state, prox_state = w.state;
  Rng r1(20), r2(20);
  run_supervised_round(free_state, local, fast_hyper(3), w.cfg, r1);
  const auto m = run_supervised_round(prox_state, local, fast_hyper(3), w.cfg, r2, &prox);
  const double drift_free = (free_state.backbone.flatten() - w.g_backbone.flatten()).norm();
  const double drift_prox = (prox_state.backbone.flatten() - w.g_backbone.flatten()).norm();
  CHECK(drift_prox < 0.5 * drift_free);
  CHECK(m.losses.contains("supervised.total"));
}
