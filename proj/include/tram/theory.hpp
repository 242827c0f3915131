#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace tram::theory {

// p(x, a, y) on a finite grid; entries sum to 1.
struct DiscreteJoint {
  int n_x = 0, n_a = 0, n_y = 0;
  std::vector<double> p;  // indexed x*(n_a*n_y) + a*n_y + y

  double& at(int x, int a, int y) { return p[(x * n_a + a) * n_y + y]; }
  double at(int x, int a, int y) const { return p[(x * n_a + a) * n_y + y]; }
  void validate() const;  // throws on negative entries or sum != 1
};

DiscreteJoint random_dirichlet_joint(int n_x, int n_a, int n_y, std::uint64_t seed);

struct Lemma1Result {
  double I = 0.0;             // I(y; a | x), nats
  double H_y_given_x = 0.0;
  double H_y_given_xa = 0.0;
  bool holds = false;
};

Lemma1Result lemma1_check(const DiscreteJoint& joint);

struct MarginalOptimalityResult {
  double kl_marginal = 0.0;
  double min_challenger_kl = 0.0;
  bool holds = false;
};

// Challengers: half Dirichlet-perturbed around the marginal, half fully random.
MarginalOptimalityResult marginal_optimality_check(const DiscreteJoint& joint,
                                                   int n_challengers,
                                                   std::uint64_t seed);

struct GaussianMixtureSpec {
  std::vector<std::function<double(double)>> means;  // mu_{theta_m}(x), unit variance
};

struct HetMomentResult {
  double mu_star = 0.0;
  double sigma2_star = 0.0;     // moment-matching value 1 + mean(mu_m^2) - mu_star^2
  double numeric_mu = 0.0;
  double numeric_sigma2 = 0.0;  // golden-section KL minimizer (ground truth)
};

HetMomentResult het_moment_match(const GaussianMixtureSpec& spec, double x);

// One line per check with computed quantities; `ok` set false on any failure.
struct TheoryReport {
  std::vector<std::string> lines;
  bool ok = true;
};

TheoryReport run_theory_suite(std::uint64_t seed);

}  // namespace tram::theory
