#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tram/linear_risk.hpp"
#include "tram/rng.hpp"

using namespace tram;
using namespace tram::linrisk;

namespace {

LinearGenerator default_gen(int d, int m, double sigma) {
  LinearGenerator gen;
  gen.w_star = Eigen::VectorXd::LinSpaced(d, 1.0, 2.0);
  gen.v_star = Eigen::VectorXd::LinSpaced(m, 0.5, 1.5);
  gen.sigma = sigma;
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(m, d);
  for (int i = 0; i < m; ++i) B(i, i % d) = 0.7;
  gen.mu_fn = [B](const Eigen::VectorXd& x) { return Eigen::VectorXd(B * x); };
  gen.cov_fn = [m](const Eigen::VectorXd&) {
    return Eigen::MatrixXd(0.3 * Eigen::MatrixXd::Identity(m, m));
  };
  return gen;
}

}  // namespace

TEST_CASE("projector is symmetric idempotent and reproduces its columns") {
  FixedDesign design = make_design(40, 6, 2, 5);
  Eigen::MatrixXd P = projector(design.X);
  CHECK((P - P.transpose()).lpNorm<Eigen::Infinity>() < 1e-8);
  CHECK((P * P - P).lpNorm<Eigen::Infinity>() < 1e-8);
  CHECK((P * design.X - design.X).lpNorm<Eigen::Infinity>() < 1e-8);
  // Trace of a projector is its rank.
  CHECK(P.trace() == doctest::Approx(6.0).epsilon(1e-8));
}

TEST_CASE("projector throws on rank-deficient input") {
  Eigen::MatrixXd M(4, 2);
  M << 1, 2, 2, 4, 3, 6, 4, 8;  // second column is twice the first
  CHECK_THROWS_AS(projector(M), std::exception);
}

TEST_CASE("fit_no_pi solves the normal equations") {
  FixedDesign design = make_design(60, 4, 1, 9);
  LinearGenerator gen = default_gen(4, 1, 0.3);
  Eigen::MatrixXd A = sample_pi(design, gen, 2);
  Eigen::VectorXd y = sample_targets(design.X, A, gen, 3);
  Eigen::VectorXd w = fit_no_pi(design.X, y);
  // Residual orthogonal to the column space.
  CHECK((design.X.transpose() * (y - design.X * w)).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("joint fit agrees with the blockwise route and with lstsq on [X A]") {
  FixedDesign design = make_design(80, 5, 2, 11);
  LinearGenerator gen = default_gen(5, 2, 0.5);
  Eigen::MatrixXd A = sample_pi(design, gen, 21);
  Eigen::VectorXd y = sample_targets(design.X, A, gen, 22);

  auto [w1, v1] = fit_joint(design.X, A, y);
  auto [w2, v2] = fit_joint_blockwise(design.X, A, y);
  CHECK((w1 - w2).lpNorm<Eigen::Infinity>() < 1e-8);
  CHECK((v1 - v2).lpNorm<Eigen::Infinity>() < 1e-8);

  Eigen::MatrixXd Z(design.n, design.d + design.m);
  Z << design.X, A;
  Eigen::VectorXd sol = Z.colPivHouseholderQr().solve(y);
  CHECK((w1 - sol.head(design.d)).lpNorm<Eigen::Infinity>() < 1e-8);
  CHECK((v1 - sol.tail(design.m)).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("h_a_perp and g_x_perp recover the joint coefficients") {
  FixedDesign design = make_design(50, 3, 2, 31);
  LinearGenerator gen = default_gen(3, 2, 0.4);
  Eigen::MatrixXd A = sample_pi(design, gen, 41);
  Eigen::VectorXd y = sample_targets(design.X, A, gen, 42);
  auto [w, v] = fit_joint(design.X, A, y);
  CHECK((h_a_perp(design.X, A) * y - w).lpNorm<Eigen::Infinity>() < 1e-8);
  CHECK((g_x_perp(design.X, A) * y - v).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("noiseless joint fit recovers the generator exactly") {
  FixedDesign design = make_design(100, 4, 2, 51);
  LinearGenerator gen = default_gen(4, 2, 0.0);
  Eigen::MatrixXd A = sample_pi(design, gen, 52);
  Eigen::VectorXd y = sample_targets(design.X, A, gen, 53);
  auto [w, v] = fit_joint(design.X, A, y);
  CHECK((w - gen.w_star).lpNorm<Eigen::Infinity>() < 1e-8);
  CHECK((v - gen.v_star).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("closed-form risks agree with Monte Carlo within 3 standard errors") {
  FixedDesign design = make_design(120, 4, 2, 61);
  LinearGenerator gen = default_gen(4, 2, 0.5);
  for (EstimatorKind kind : {EstimatorKind::NoPI, EstimatorKind::PIMeanImpute,
                             EstimatorKind::MargNoPI, EstimatorKind::MargPI}) {
    RiskEstimate est = risk_mc(kind, design, gen, 2000, 7, 8, 500);
    double cf = risk_closed_form(kind, design, gen, 8, 500);
    CHECK(std::abs(cf - est.mc_mean) <= 3.0 * est.mc_stderr);
  }
}

TEST_CASE("sherman-morrison bound holds on random m=1 instances") {
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(1000 + trial);
    int n = 20 + static_cast<int>(rng.next_u64() % 30);
    int d = 2 + static_cast<int>(rng.next_u64() % 4);
    Eigen::MatrixXd X(n, d);
    Eigen::VectorXd A(n), mu(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) X(i, j) = rng.gaussian();
      mu(i) = rng.gaussian();
      A(i) = mu(i) + 0.5 * rng.gaussian();
    }
    for (bool variant : {true, false}) {
      BoundResult b = sherman_morrison_bound(X, A, mu, variant);
      CHECK(b.lhs <= b.rhs + 1e-10);
    }
  }
}

TEST_CASE("proposition checks agree with Monte Carlo ordering") {
  // Large out-of-span mean component: PI should win under both propositions.
  FixedDesign design = make_design(60, 3, 1, 71);
  LinearGenerator gen;
  gen.w_star = Eigen::VectorXd::Ones(3);
  gen.v_star = Eigen::VectorXd::Constant(1, 2.0);
  gen.sigma = 0.3;
  gen.mu_fn = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd out(1);
    out(0) = std::sin(3.0 * x(0)) + x.squaredNorm();  // far from span(X)
    return out;
  };
  gen.cov_fn = [](const Eigen::VectorXd&) {
    return Eigen::MatrixXd(0.05 * Eigen::MatrixXd::Identity(1, 1));
  };
  for (int which : {1, 2}) {
    PropositionResult res = check_proposition(which, design, gen, 2000, 77);
    CHECK(res.pi_wins);
    CHECK(res.consistent);
  }
}

TEST_CASE("generator_from_config parses the documented keys") {
  std::map<std::string, std::string> kv = {
      {"d", "3"},          {"m", "2"},        {"sigma", "0.5"},
      {"w_star", "1,2,3"}, {"v_star", "4,5"}, {"mu_kind", "linear"},
      {"mu_B", "1,0,0,0,1,0"},                {"cov_kind", "isotropic"},
      {"cov_s", "0.25"},
  };
  LinearGenerator gen = generator_from_config(kv);
  CHECK(gen.w_star.size() == 3);
  CHECK(gen.w_star(2) == 3.0);
  CHECK(gen.v_star(1) == 5.0);
  CHECK(gen.sigma == 0.5);
  Eigen::VectorXd x(3);
  x << 7, 8, 9;
  Eigen::VectorXd mu = gen.mu_fn(x);
  CHECK(mu(0) == doctest::Approx(7.0));
  CHECK(mu(1) == doctest::Approx(8.0));
  Eigen::MatrixXd S = gen.cov_fn(x);
  CHECK(S(0, 0) == doctest::Approx(0.25));
  CHECK(S(0, 1) == 0.0);
}
