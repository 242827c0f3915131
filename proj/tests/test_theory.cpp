#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>

#include "tram/theory.hpp"

using namespace tram::theory;

TEST_CASE("validate rejects bad mass functions") {
  DiscreteJoint j;
  j.n_x = 1; j.n_a = 1; j.n_y = 2;
  j.p = {0.5, 0.6};
  CHECK_THROWS_AS(j.validate(), std::exception);
  j.p = {1.2, -0.2};
  CHECK_THROWS_AS(j.validate(), std::exception);
  j.p = {0.25, 0.75};
  CHECK_NOTHROW(j.validate());
}

TEST_CASE("dirichlet joints are valid and seed-deterministic") {
  DiscreteJoint a = random_dirichlet_joint(3, 2, 4, 9);
  DiscreteJoint b = random_dirichlet_joint(3, 2, 4, 9);
  DiscreteJoint c = random_dirichlet_joint(3, 2, 4, 10);
  CHECK_NOTHROW(a.validate());
  CHECK(a.p == b.p);
  CHECK(a.p != c.p);
}

TEST_CASE("conditioning on a never raises entropy") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    DiscreteJoint j = random_dirichlet_joint(4, 3, 3, seed);
    Lemma1Result res = lemma1_check(j);
    CHECK(res.holds);
    CHECK(res.I >= -1e-12);
    CHECK(res.H_y_given_xa <= res.H_y_given_x + 1e-12);
    // Identity I(y;a|x) = H(y|x) - H(y|x,a).
    CHECK(res.I == doctest::Approx(res.H_y_given_x - res.H_y_given_xa).epsilon(1e-9));
  }
}

TEST_CASE("conditional independence makes the information vanish") {
  // p(x,a,y) = p(x) p(a) p(y|x): a carries nothing beyond x.
  DiscreteJoint j;
  j.n_x = 2; j.n_a = 2; j.n_y = 2;
  j.p.assign(8, 0.0);
  double px[2] = {0.4, 0.6};
  double pa[2] = {0.3, 0.7};
  double py_x[2][2] = {{0.2, 0.8}, {0.9, 0.1}};
  for (int x = 0; x < 2; ++x)
    for (int a = 0; a < 2; ++a)
      for (int y = 0; y < 2; ++y) j.at(x, a, y) = px[x] * pa[a] * py_x[x][y];
  Lemma1Result res = lemma1_check(j);
  CHECK(res.I == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("a fully informative annotator attains H(y|x)") {
  // y == a deterministically: H(y|x,a) = 0, so I = H(y|x).
  DiscreteJoint j;
  j.n_x = 1; j.n_a = 2; j.n_y = 2;
  j.p.assign(4, 0.0);
  j.at(0, 0, 0) = 0.5;
  j.at(0, 1, 1) = 0.5;
  Lemma1Result res = lemma1_check(j);
  CHECK(res.H_y_given_xa == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(res.I == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("the marginal beats every challenger in expected KL") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    DiscreteJoint j = random_dirichlet_joint(3, 3, 4, 1000 + seed);
    MarginalOptimalityResult res = marginal_optimality_check(j, 100, seed);
    CHECK(res.holds);
    CHECK(res.kl_marginal <= res.min_challenger_kl + 1e-12);
  }
}

TEST_CASE("moment matching agrees with the numeric KL minimizer") {
  GaussianMixtureSpec spec;
  spec.means = {
      [](double x) { return std::sin(x); },
      [](double x) { return 0.5 * x; },
      [](double x) { return -0.3; },
  };
  for (double x : {-2.0, -0.5, 0.0, 1.0, 2.5}) {
    HetMomentResult res = het_moment_match(spec, x);
    CHECK(std::abs(res.mu_star - res.numeric_mu) < 1e-5);
    CHECK(std::abs(res.sigma2_star - res.numeric_sigma2) < 1e-5);
    // Mixture variance always at least the component variance.
    CHECK(res.sigma2_star >= 1.0 - 1e-12);
  }
}

TEST_CASE("single-component mixture collapses to that component") {
  GaussianMixtureSpec spec;
  spec.means = {[](double x) { return 2.0 * x; }};
  HetMomentResult res = het_moment_match(spec, 1.5);
  CHECK(res.mu_star == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(res.sigma2_star == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("theory suite passes end to end within budget") {
  auto t0 = std::chrono::steady_clock::now();
  TheoryReport report = run_theory_suite(2027);
  auto ms = std::chrono::duration<double, std::milli>(
                std::chrono::steady_clock::now() - t0).count();
  CHECK(report.ok);
  CHECK(!report.lines.empty());
  CHECK(ms < 30000.0);
}
