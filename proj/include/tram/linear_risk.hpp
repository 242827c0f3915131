#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>

namespace tram::linrisk {

// Appendix-A generative model: y = x'w* + a'v* + eps, a ~ N(mu(x), Sigma(x)).
struct LinearGenerator {
  Eigen::VectorXd w_star;  // length d
  Eigen::VectorXd v_star;  // length m
  double sigma = 0.0;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> mu_fn;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> cov_fn;
};

struct FixedDesign {
  Eigen::MatrixXd X;  // n×d
  int n = 0, d = 0, m = 0;
};

enum class EstimatorKind { NoPI, PIMeanImpute, MargNoPI, MargPI };

struct RiskEstimate {
  double closed_form = 0.0;
  double mc_mean = 0.0;
  double mc_stderr = 0.0;
  int n_reps = 0;
};

// Standard-normal design, the default X for experiments.
FixedDesign make_design(int n, int d, int m, std::uint64_t seed);

// Row i of A ~ N(mu(x_i), Sigma(x_i)).
Eigen::MatrixXd sample_pi(const FixedDesign& design, const LinearGenerator& gen,
                          std::uint64_t seed);

Eigen::VectorXd sample_targets(const Eigen::MatrixXd& X, const Eigen::MatrixXd& A,
                               const LinearGenerator& gen, std::uint64_t seed);

// mu(x_i) stacked into an n×m matrix.
Eigen::MatrixXd mu_of(const FixedDesign& design, const LinearGenerator& gen);

// Pi = M (M'M)^-1 M'. Throws on rank deficiency.
Eigen::MatrixXd projector(const Eigen::MatrixXd& M);

Eigen::VectorXd fit_no_pi(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);

std::pair<Eigen::VectorXd, Eigen::VectorXd> fit_joint(const Eigen::MatrixXd& X,
                                                      const Eigen::MatrixXd& A,
                                                      const Eigen::VectorXd& y);

// Block-inverse route: w = H_{a⊥} y, v = G_{x⊥} y.
std::pair<Eigen::VectorXd, Eigen::VectorXd> fit_joint_blockwise(const Eigen::MatrixXd& X,
                                                                const Eigen::MatrixXd& A,
                                                                const Eigen::VectorXd& y);

// H_{a⊥} = (X_{a⊥}'X_{a⊥})^-1 X_{a⊥}' with X_{a⊥} = (I-Pi_a)X; G_{x⊥} analogous.
Eigen::MatrixXd h_a_perp(const Eigen::MatrixXd& X, const Eigen::MatrixXd& A);
Eigen::MatrixXd g_x_perp(const Eigen::MatrixXd& X, const Eigen::MatrixXd& A);

struct FittedParams {
  Eigen::VectorXd w;
  Eigen::VectorXd v;  // empty for NoPI/MargNoPI
};

// mu_X required for PIMeanImpute/MargPI, ignored otherwise.
Eigen::VectorXd predict(EstimatorKind kind, const FittedParams& fitted,
                        const Eigen::MatrixXd& X, const Eigen::MatrixXd* mu_X = nullptr);

// Excess risk of the cited Appendix-A expression; the shared (1/n)tr(sigma^2 I + Lambda)
// term is omitted on both the closed-form and MC sides. PI kinds estimate
// E[||K||^2] / ||E[L]||^2 with n_inner fresh draws of A from inner_seed.
double risk_closed_form(EstimatorKind kind, const FixedDesign& design,
                        const LinearGenerator& gen, std::uint64_t inner_seed,
                        int n_inner);

RiskEstimate risk_mc(EstimatorKind kind, const FixedDesign& design,
                     const LinearGenerator& gen, int n_reps, std::uint64_t seed,
                     std::uint64_t inner_seed, int n_inner);

struct PropositionResult {
  double lhs = 0.0;  // non-PI side of the inequality
  double rhs = 0.0;  // PI side
  bool pi_wins = false;
  RiskEstimate mc_no_pi;
  RiskEstimate mc_pi;
  bool consistent = false;  // verdict agrees with MC ordering within 3 sigma
};

PropositionResult check_proposition(int which, const FixedDesign& design,
                                    const LinearGenerator& gen, int n_reps,
                                    std::uint64_t seed);

struct BoundResult {
  double lhs = 0.0;
  double rhs = 0.0;
};

// m=1 Sherman-Morrison bound. mu_variant=true uses ||mu||^2 (the K bound),
// false uses ||A||^2 (the E[L] bound).
BoundResult sherman_morrison_bound(const Eigen::MatrixXd& X, const Eigen::VectorXd& A,
                                   const Eigen::VectorXd& mu, bool mu_variant = true);

// Config text: keys d, m, n, sigma, w_star, v_star, mu_kind in {zero, linear, constant},
// mu_B (m*d row-major comma list), mu_c (m comma list),
// cov_kind in {zero, isotropic, diagonal}, cov_s, cov_diag (m comma list).
LinearGenerator generator_from_config(const std::map<std::string, std::string>& kv);

}  // namespace tram::linrisk
