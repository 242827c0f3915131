#include "tram/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "tram/rng.hpp"

namespace tram::theory {

namespace {

double xlogx(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

// Gamma(alpha, 1) sampler (Marsaglia-Tsang); enough for Dirichlet draws.
double sample_gamma(Rng& rng, double alpha) {
  if (alpha < 1.0) {
    const double u = rng.uniform();
    return sample_gamma(rng, alpha + 1.0) * std::pow(u, 1.0 / alpha);
  }
  const double d = alpha - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double g = rng.gaussian();
    double t = 1.0 + c * g;
    if (t <= 0.0) continue;
    const double v = t * t * t;
    const double u = rng.uniform();
    if (u < 1.0 - 0.0331 * g * g * g * g) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * g * g + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::vector<double> sample_dirichlet(Rng& rng, int k, double alpha) {
  std::vector<double> out(k);
  double sum = 0.0;
  for (auto& v : out) {
    v = sample_gamma(rng, alpha);
    sum += v;
  }
  for (auto& v : out) v /= sum;
  return out;
}

}  // namespace

void DiscreteJoint::validate() const {
  if (static_cast<int>(p.size()) != n_x * n_a * n_y)
    throw std::runtime_error("DiscreteJoint: size mismatch");
  double sum = 0.0;
  for (double v : p) {
    if (v < 0.0) throw std::runtime_error("DiscreteJoint: negative entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-12)
    throw std::runtime_error("DiscreteJoint: entries must sum to 1");
}

DiscreteJoint random_dirichlet_joint(int n_x, int n_a, int n_y, std::uint64_t seed) {
  Rng rng = Rng::derived(seed, 0xD17);
  DiscreteJoint j;
  j.n_x = n_x;
  j.n_a = n_a;
  j.n_y = n_y;
  j.p = sample_dirichlet(rng, n_x * n_a * n_y, 1.0);
  return j;
}

Lemma1Result lemma1_check(const DiscreteJoint& joint) {
  joint.validate();
  Lemma1Result res;
  // H(y|x) = H(x,y) - H(x); H(y|x,a) = H(x,a,y) - H(x,a); I = difference.
  double H_xay = 0.0, H_xa = 0.0, H_xy = 0.0, H_x = 0.0;
  for (int x = 0; x < joint.n_x; ++x) {
    double p_x = 0.0;
    std::vector<double> p_xy(joint.n_y, 0.0);
    for (int a = 0; a < joint.n_a; ++a) {
      double p_xa = 0.0;
      for (int y = 0; y < joint.n_y; ++y) {
        const double v = joint.at(x, a, y);
        H_xay -= xlogx(v);
        p_xa += v;
        p_xy[y] += v;
      }
      H_xa -= xlogx(p_xa);
      p_x += p_xa;
    }
    H_x -= xlogx(p_x);
    for (double v : p_xy) H_xy -= xlogx(v);
  }
  res.H_y_given_x = H_xy - H_x;
  res.H_y_given_xa = H_xay - H_xa;
  res.I = res.H_y_given_x - res.H_y_given_xa;
  res.holds = (res.I <= 1e-10) || (res.H_y_given_xa < res.H_y_given_x - 1e-12);
  return res;
}

namespace {

// E_{(x,a)}[ KL(p(y|x,a) || q(y|x)) ] for a table of per-x challenger rows.
double expected_kl(const DiscreteJoint& joint, const std::vector<std::vector<double>>& q) {
  double total = 0.0;
  for (int x = 0; x < joint.n_x; ++x)
    for (int a = 0; a < joint.n_a; ++a) {
      double p_xa = 0.0;
      for (int y = 0; y < joint.n_y; ++y) p_xa += joint.at(x, a, y);
      if (p_xa == 0.0) continue;  // zero-probability cell: weight 0
      double kl = 0.0;
      for (int y = 0; y < joint.n_y; ++y) {
        const double pc = joint.at(x, a, y) / p_xa;
        if (pc > 0.0) kl += pc * std::log(pc / std::max(q[x][y], 1e-300));
      }
      total += p_xa * kl;
    }
  return total;
}

std::vector<std::vector<double>> marginal_table(const DiscreteJoint& joint) {
  std::vector<std::vector<double>> q(joint.n_x, std::vector<double>(joint.n_y, 0.0));
  for (int x = 0; x < joint.n_x; ++x) {
    double p_x = 0.0;
    for (int a = 0; a < joint.n_a; ++a)
      for (int y = 0; y < joint.n_y; ++y) {
        q[x][y] += joint.at(x, a, y);
        p_x += joint.at(x, a, y);
      }
    if (p_x > 0.0)
      for (auto& v : q[x]) v /= p_x;
    else
      for (auto& v : q[x]) v = 1.0 / joint.n_y;  // unreachable x: any q works
  }
  return q;
}

}  // namespace

MarginalOptimalityResult marginal_optimality_check(const DiscreteJoint& joint,
                                                   int n_challengers,
                                                   std::uint64_t seed) {
  joint.validate();
  Rng rng = Rng::derived(seed, 0xCA11);
  const auto marginal = marginal_table(joint);
  MarginalOptimalityResult res;
  res.kl_marginal = expected_kl(joint, marginal);
  res.min_challenger_kl = std::numeric_limits<double>::infinity();
  for (int c = 0; c < n_challengers; ++c) {
    std::vector<std::vector<double>> q(joint.n_x, std::vector<double>(joint.n_y));
    const bool local = c % 2 == 0;  // half perturbed, half fully random
    for (int x = 0; x < joint.n_x; ++x) {
      if (local) {
        // Dirichlet centered on the marginal row (concentration 50).
        double sum = 0.0;
        for (int y = 0; y < joint.n_y; ++y) {
          q[x][y] = sample_gamma(rng, 50.0 * marginal[x][y] + 0.5);
          sum += q[x][y];
        }
        for (auto& v : q[x]) v /= sum;
      } else {
        q[x] = sample_dirichlet(rng, joint.n_y, 1.0);
      }
    }
    res.min_challenger_kl = std::min(res.min_challenger_kl, expected_kl(joint, q));
  }
  res.holds = res.kl_marginal <= res.min_challenger_kl + 1e-12;
  return res;
}

HetMomentResult het_moment_match(const GaussianMixtureSpec& spec, double x) {
  const int M = static_cast<int>(spec.means.size());
  if (M < 1) throw std::runtime_error("het_moment_match: empty mixture");
  HetMomentResult res;
  double mean_sq = 0.0;
  for (const auto& mu : spec.means) {
    const double v = mu(x);
    if (!std::isfinite(v)) throw std::runtime_error("het_moment_match: non-finite mean");
    res.mu_star += v / M;
    mean_sq += v * v / M;
  }
  res.sigma2_star = 1.0 + mean_sq - res.mu_star * res.mu_star;
  res.numeric_mu = res.mu_star;  // analytic optimum of the expected KL

  // E_a[KL(N(mu_a, 1) || N(mu*, s2))] as a function of s2, minimized by
  // golden section on [1e-4, 1e6].
  const double spread = 1.0 + mean_sq - res.mu_star * res.mu_star;  // E[(mu_a-mu*)^2]+1
  auto objective = [&](double s2) {
    return 0.5 * (std::log(s2) + spread / s2);
  };
  double lo = 1e-4, hi = 1e6;
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = hi - gr * (hi - lo), b = lo + gr * (hi - lo);
  double fa = objective(a), fb = objective(b);
  while (hi - lo > 1e-10) {
    if (fa < fb) {
      hi = b;
      b = a;
      fb = fa;
      a = hi - gr * (hi - lo);
      fa = objective(a);
    } else {
      lo = a;
      a = b;
      fa = fb;
      b = lo + gr * (hi - lo);
      fb = objective(b);
    }
  }
  res.numeric_sigma2 = 0.5 * (lo + hi);
  return res;
}

TheoryReport run_theory_suite(std::uint64_t seed) {
  TheoryReport report;
  auto line = [&](bool ok, const std::string& text) {
    report.lines.push_back(std::string(ok ? "PASS " : "FAIL ") + text);
    report.ok = report.ok && ok;
  };

  int lemma_ok = 0;
  double worst_identity = 0.0;
  for (int i = 0; i < 100; ++i) {
    auto joint = random_dirichlet_joint(4, 3, 5, Rng::mix(seed ^ Rng::mix(i)));
    auto res = lemma1_check(joint);
    if (res.holds) ++lemma_ok;
    worst_identity = std::max(worst_identity,
                              std::abs(res.I - (res.H_y_given_x - res.H_y_given_xa)));
  }
  {
    std::ostringstream os;
    os << "lemma1: " << lemma_ok << "/100 joints hold, worst identity residual "
       << worst_identity;
    line(lemma_ok == 100 && worst_identity < 1e-10, os.str());
  }

  int opt_ok = 0;
  for (int i = 0; i < 50; ++i) {
    auto joint = random_dirichlet_joint(3, 4, 4, Rng::mix(seed ^ Rng::mix(1000 + i)));
    auto res = marginal_optimality_check(joint, 100, Rng::mix(seed ^ Rng::mix(2000 + i)));
    if (res.holds) ++opt_ok;
  }
  {
    std::ostringstream os;
    os << "marginal optimality: " << opt_ok << "/50 joints never beaten by 100 challengers";
    line(opt_ok == 50, os.str());
  }

  double worst_gap = 0.0;
  Rng rng = Rng::derived(seed, 0x4E7);
  for (int i = 0; i < 20; ++i) {
    GaussianMixtureSpec spec;
    const int M = 1 + static_cast<int>(rng.uniform_int(5));
    for (int m = 0; m < M; ++m) {
      const double c0 = rng.uniform(-3.0, 3.0);
      const double c1 = rng.uniform(-2.0, 2.0);
      spec.means.push_back([c0, c1](double x) { return c0 + c1 * x; });
    }
    const double x = rng.uniform(-2.0, 2.0);
    auto res = het_moment_match(spec, x);
    worst_gap = std::max(worst_gap, std::abs(res.numeric_sigma2 - res.sigma2_star));
  }
  {
    std::ostringstream os;
    os << "het moment match: worst |numeric - moment| = " << worst_gap;
    line(worst_gap < 1e-5, os.str());
  }
  return report;
}

}  // namespace tram::theory
