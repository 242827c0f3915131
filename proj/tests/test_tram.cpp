#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tram/rng.hpp"
#include "tram/synth.hpp"
#include "tram/tram_model.hpp"

using namespace tram;
using namespace tram::model;

namespace {

Dataset small_regression(int n, std::uint64_t seed) {
  synth::RegressionTaskSpec spec;
  spec.n = n;
  auto tri = synth::gen_regression(spec, seed);
  return {synth::x_matrix(tri), synth::a_matrix(tri), synth::y_matrix(tri)};
}

Dataset small_classification(int n, std::uint64_t seed) {
  synth::ClassificationTaskSpec spec;
  spec.n = n;
  auto tri = synth::gen_classification(spec, seed);
  return {synth::x_matrix(tri), synth::a_matrix(tri), synth::y_matrix(tri)};
}

TrainConfig quick_config(int epochs = 2) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 64;
  cfg.lr = 1e-3;
  cfg.seed = 99;
  return cfg;
}

bool blocks_equal(const nn::ParamBlock& a, const nn::ParamBlock& b) {
  return a.flatten() == b.flatten();  // bit-exact
}

}  // namespace

TEST_CASE("one-step shared parameters are bit-identical to the L1-only trajectory") {
  Dataset data = small_regression(256, 1);
  for (bool a_encoder : {false, true}) {
    TramModel one = build_tram(1, 1, Task::Regression, 0, {16, 16}, 8, 7,
                               false, a_encoder);
    TramModel two = build_tram(1, 1, Task::Regression, 0, {16, 16}, 8, 7,
                               false, a_encoder);
    TrainConfig cfg = quick_config(3);
    train_one_step(one, data, cfg);
    // Two-step's first stage is exactly L1-only training.
    train_two_step(two, data, cfg);
    CHECK(blocks_equal(one.phi, two.phi));
    CHECK(blocks_equal(one.psi, two.psi));
    CHECK(blocks_equal(one.head_u, two.head_u));
    if (a_encoder) CHECK(blocks_equal(one.psi_a, two.psi_a));
    // The marginal heads see different optimizer histories and must differ.
    CHECK(!blocks_equal(one.head_w, two.head_w));
  }
}

TEST_CASE("marginal loss never leaks into the shared trunk") {
  // Two one-step runs that differ only in the marginal-head loss: the shared
  // parameters must match bit for bit, which is the stop-gradient contract.
  Dataset data = small_classification(256, 2);
  TramModel a = build_tram(1, 1, Task::Classification, 2, {16}, 8, 11);
  TramModel b = build_tram(1, 1, Task::Classification, 2, {16}, 8, 11);
  TrainConfig cfg = quick_config(2);
  cfg.loss_l1.type = nn::LossKind::SoftmaxCE;
  cfg.loss_l2.type = nn::LossKind::SoftmaxCE;
  train_one_step(a, data, cfg);
  cfg.loss_l2.type = nn::LossKind::MSE;
  train_one_step(b, data, cfg);
  CHECK(blocks_equal(a.phi, b.phi));
  CHECK(blocks_equal(a.psi, b.psi));
  CHECK(blocks_equal(a.psi_a, b.psi_a));
  CHECK(blocks_equal(a.head_u, b.head_u));
  CHECK(!blocks_equal(a.head_w, b.head_w));
}

TEST_CASE("two-step freezes phi after its first stage") {
  Dataset data = small_regression(256, 3);
  TramModel ref = build_tram(1, 1, Task::Regression, 0, {16}, 8, 13);
  TramModel two = build_tram(1, 1, Task::Regression, 0, {16}, 8, 13);
  TrainConfig cfg = quick_config(2);
  // L1-only reference: one-step shares the L1 trajectory (checked above).
  train_one_step(ref, data, cfg);
  train_two_step(two, data, cfg);
  CHECK(blocks_equal(two.phi, ref.phi));
}

TEST_CASE("training is deterministic") {
  Dataset data = small_classification(128, 5);
  TramModel a = build_tram(1, 1, Task::Classification, 2, {8}, 4, 17);
  TramModel b = build_tram(1, 1, Task::Classification, 2, {8}, 4, 17);
  TrainConfig cfg = quick_config(2);
  cfg.loss_l1.type = cfg.loss_l2.type = nn::LossKind::SoftmaxCE;
  auto ca = train_one_step(a, data, cfg);
  auto cb = train_one_step(b, data, cfg);
  CHECK(blocks_equal(a.phi, b.phi));
  CHECK(blocks_equal(a.head_w, b.head_w));
  CHECK(ca.l1 == cb.l1);
  CHECK(ca.l2 == cb.l2);
}

TEST_CASE("training reduces both losses on an easy task") {
  Dataset data = small_regression(512, 8);
  TramModel m = build_tram(1, 1, Task::Regression, 0, {32}, 16, 19);
  TrainConfig cfg = quick_config(40);
  cfg.lr = 3e-3;
  auto curves = train_one_step(m, data, cfg);
  CHECK(curves.l1.back() < curves.l1.front());
  CHECK(curves.l2.back() < curves.l2.front());
  // Conditional residual floor is Var(v)/3-ish plus the label noise; the
  // marginal floor sits near Var(y | x). Both should be approached.
  CHECK(curves.l1.back() < 0.25);
  CHECK(curves.l2.back() < 0.30);
}

TEST_CASE("classification predictions are valid distributions") {
  Dataset data = small_classification(128, 6);
  for (bool het : {false, true}) {
    TramModel m = build_tram(1, 1, Task::Classification, 2, {8}, 4, 23, het);
    TrainConfig cfg = quick_config(1);
    cfg.loss_l1.type = cfg.loss_l2.type = nn::LossKind::SoftmaxCE;
    train_one_step(m, data, cfg);
    Eigen::MatrixXd grid(11, 1);
    for (int i = 0; i < 11; ++i) grid(i, 0) = -2.0 + 0.4 * i;
    for (const Eigen::MatrixXd& p :
         {predict_marginal(m, grid),
          predict_conditional(m, grid, Eigen::MatrixXd::Ones(11, 1)),
          predict_full_marg(m, grid, data.A, 32, 4),
          predict_impute(m, grid, "zero"),
          predict_impute(m, grid, "mean", &data.A)}) {
      for (int i = 0; i < p.rows(); ++i) {
        CHECK(p.row(i).minCoeff() >= 0.0);
        CHECK(p.row(i).sum() == doctest::Approx(1.0).epsilon(1e-8));
      }
    }
  }
}

TEST_CASE("vanilla regression predictions carry unit variance") {
  Dataset data = small_regression(128, 7);
  TramModel m = build_tram(1, 1, Task::Regression, 0, {8}, 4, 29);
  train_one_step(m, data, quick_config(1));
  Eigen::MatrixXd p = predict_marginal(m, data.X.topRows(16));
  CHECK(p.cols() == 2);
  CHECK((p.col(1).array() == 1.0).all());
}

TEST_CASE("het regression variance head is positive and input-dependent") {
  Dataset data = small_regression(512, 9);
  TramModel m = build_tram(1, 1, Task::Regression, 0, {16}, 8, 31, /*het=*/true);
  TrainConfig cfg = quick_config(5);
  train_one_step(m, data, cfg);
  Eigen::MatrixXd p = predict_marginal(m, data.X.topRows(64));
  CHECK((p.col(1).array() > 0.0).all());
  CHECK(p.col(1).maxCoeff() > p.col(1).minCoeff());
}

TEST_CASE("exhaustive full marginalization equals the pool average") {
  Dataset data = small_classification(64, 10);
  TramModel m = build_tram(1, 1, Task::Classification, 2, {8}, 4, 37);
  TrainConfig cfg = quick_config(1);
  cfg.loss_l1.type = cfg.loss_l2.type = nn::LossKind::SoftmaxCE;
  train_one_step(m, data, cfg);

  Eigen::MatrixXd pool = data.A.topRows(10);
  Eigen::MatrixXd grid(5, 1);
  grid << -1.5, -0.5, 0.0, 0.5, 1.5;
  Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(5, 2);
  for (int r = 0; r < pool.rows(); ++r)
    expected += predict_conditional(m, grid, pool.row(r).replicate(5, 1)) / pool.rows();
  Eigen::MatrixXd got = predict_full_marg(m, grid, pool, static_cast<int>(pool.rows()), 1);
  CHECK((got - expected).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("full marginalization of a regression model mixes means and variances") {
  Dataset data = small_regression(64, 11);
  TramModel m = build_tram(1, 1, Task::Regression, 0, {8}, 4, 41);
  train_one_step(m, data, quick_config(1));
  Eigen::MatrixXd pool(2, 1);
  pool << 0.0, 1.0;
  Eigen::MatrixXd grid(4, 1);
  grid << 0.1, 0.3, 0.6, 0.9;
  Eigen::MatrixXd p0 = predict_conditional(m, grid, Eigen::MatrixXd::Zero(4, 1));
  Eigen::MatrixXd p1 = predict_conditional(m, grid, Eigen::MatrixXd::Ones(4, 1));
  Eigen::MatrixXd got = predict_full_marg(m, grid, pool, 2, 1);
  for (int i = 0; i < 4; ++i) {
    double mean = 0.5 * (p0(i, 0) + p1(i, 0));
    double var = 1.0 + 0.5 * (p0(i, 0) * p0(i, 0) + p1(i, 0) * p1(i, 0)) - mean * mean;
    CHECK(got(i, 0) == doctest::Approx(mean).epsilon(1e-12));
    CHECK(got(i, 1) == doctest::Approx(var).epsilon(1e-12));
  }
}

TEST_CASE("imputation modes reduce to conditional prediction") {
  Dataset data = small_classification(64, 12);
  TramModel m = build_tram(1, 1, Task::Classification, 2, {8}, 4, 43);
  TrainConfig cfg = quick_config(1);
  cfg.loss_l1.type = cfg.loss_l2.type = nn::LossKind::SoftmaxCE;
  train_one_step(m, data, cfg);
  Eigen::MatrixXd grid(3, 1);
  grid << -1.0, 0.0, 1.0;
  Eigen::MatrixXd zero = predict_impute(m, grid, "zero");
  CHECK((zero - predict_conditional(m, grid, Eigen::MatrixXd::Zero(3, 1)))
            .lpNorm<Eigen::Infinity>() == 0.0);
  Eigen::MatrixXd mean = predict_impute(m, grid, "mean", &data.A);
  Eigen::MatrixXd abar = data.A.colwise().mean().replicate(3, 1);
  CHECK((mean - predict_conditional(m, grid, abar)).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK_THROWS_AS(predict_impute(m, grid, "median"), std::exception);
  CHECK_THROWS_AS(predict_impute(m, grid, "mean"), std::exception);
}

TEST_CASE("regression probe is the exact ridge solution") {
  Dataset data = small_regression(256, 13);
  TramModel m = build_tram(1, 1, Task::Regression, 0, {8}, 4, 47);
  train_one_step(m, data, quick_config(1));
  const double lam = 1e-3;
  ProbeResult probe = linear_probe(m, data.X, data.Y, Task::Regression, lam);

  Eigen::MatrixXd phi_out = nn::forward(m.phi_spec, m.phi, data.X);
  Eigen::MatrixXd F(phi_out.rows(), phi_out.cols() + 1);
  F << phi_out, Eigen::VectorXd::Ones(phi_out.rows());
  Eigen::MatrixXd G = F.transpose() * F;
  for (int i = 0; i + 1 < G.rows(); ++i) G(i, i) += lam;
  Eigen::VectorXd expect = G.ldlt().solve(F.transpose() * data.Y.col(0));
  CHECK((probe.weights - expect).lpNorm<Eigen::Infinity>() < 1e-8);

  Eigen::VectorXd pred = probe_predict(m, probe, data.X, Task::Regression);
  CHECK((pred - F * expect).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("classification probe separates separable data on random features") {
  // Labels split at x = 0 are monotone in x, so even an untrained tanh trunk
  // preserves separability and the probe should recover it.
  Rng rng(2718);
  const int n = 2000;
  Eigen::MatrixXd X(n, 1), Y(n, 1);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = rng.uniform(-2.0, 2.0);
    Y(i, 0) = X(i, 0) > 0.0 ? 1.0 : 0.0;
  }
  TramModel m = build_tram(1, 1, Task::Classification, 2, {16, 16}, 8, 53);
  ProbeResult probe = linear_probe(m, X, Y, Task::Classification, 1e-3);
  CHECK(probe.iterations > 0);
  Eigen::VectorXd q = probe_predict(m, probe, X, Task::Classification);
  int hits = 0;
  for (int i = 0; i < q.size(); ++i) hits += (q(i) > 0.5) == (Y(i, 0) > 0.5);
  CHECK(static_cast<double>(hits) / q.size() > 0.95);
  CHECK((q.array() >= 0.0).all());
  CHECK((q.array() <= 1.0).all());
}

TEST_CASE("distillation at lambda zero reproduces the vanilla trajectory") {
  Dataset data = small_classification(256, 15);
  TramModel teacher = build_tram(1, 1, Task::Classification, 2, {8}, 4, 59);
  TrainConfig cfg = quick_config(2);
  cfg.loss_l1.type = cfg.loss_l2.type = nn::LossKind::SoftmaxCE;
  train_one_step(teacher, data, cfg);

  TramModel student = train_distilled(teacher, data, cfg, 3.0, 0.0);
  TramModel vanilla = build_tram(1, 1, Task::Classification, 2, {8}, 4,
                                 Rng::mix(cfg.seed ^ 0xD15), false,
                                 teacher.has_a_encoder);
  train_one_step(vanilla, data, cfg);
  CHECK(blocks_equal(student.phi, vanilla.phi));
  CHECK(blocks_equal(student.head_w, vanilla.head_w));
  CHECK(blocks_equal(student.head_u, vanilla.head_u));
}

TEST_CASE("no-pi distilled student has no psi path") {
  Dataset data = small_classification(128, 16);
  TramModel teacher = build_no_pi(1, Task::Classification, 2, {8}, 61);
  TrainConfig cfg = quick_config(1);
  cfg.loss_l1.type = cfg.loss_l2.type = nn::LossKind::SoftmaxCE;
  train_one_step(teacher, data, cfg);
  TramModel student = train_distilled(teacher, data, cfg, 3.0, 0.5, true);
  CHECK(!student.has_psi);
  CHECK_THROWS_AS(predict_conditional(student, data.X.topRows(2), data.A.topRows(2)),
                  std::exception);
}

TEST_CASE("evaluate scores distributions correctly") {
  Eigen::MatrixXd Y(4, 1);
  Y << 0, 1, 1, 0;

  SUBCASE("uniform classifier attains ln C") {
    Eigen::MatrixXd p = Eigen::MatrixXd::Constant(4, 2, 0.5);
    RunResult r = evaluate(PredictorKind::NoPI, p, Y, Task::Classification);
    CHECK(r.nll == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(r.accuracy <= 1.0);
  }

  SUBCASE("confident correct classifier") {
    Eigen::MatrixXd p(4, 2);
    p << 0.9, 0.1, 0.1, 0.9, 0.2, 0.8, 0.8, 0.2;
    RunResult r = evaluate(PredictorKind::TRAM, p, Y, Task::Classification);
    CHECK(r.accuracy == 1.0);
    CHECK(r.nll < std::log(2.0));
  }

  SUBCASE("regression nll and reference rmse") {
    Eigen::MatrixXd p(4, 2);
    p.col(0) = Y.col(0);
    p.col(1).setOnes();
    Eigen::VectorXd ref = Y.col(0).array() + 0.5;
    RunResult r = evaluate(PredictorKind::TRAM, p, Y, Task::Regression, &ref);
    CHECK(r.nll == doctest::Approx(0.9189385332046727).epsilon(1e-10));
    CHECK(r.rmse_to_reference == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("one-hot targets") {
  Eigen::MatrixXd Y(3, 1);
  Y << 2, 0, 1;
  Eigen::MatrixXd T = one_hot_targets(Y, 3);
  Eigen::MatrixXd want(3, 3);
  want << 0, 0, 1, 1, 0, 0, 0, 1, 0;
  CHECK(T == want);
}

TEST_CASE("stop_gradient is the identity in value") {
  Eigen::MatrixXd v(2, 2);
  v << 1, 2, 3, 4;
  CHECK(nn::stop_gradient(v) == v);
}
