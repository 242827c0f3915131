#include "tram/linear_risk.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "tram/rng.hpp"

namespace tram::linrisk {

namespace {

constexpr double kRankTol = 1e-10;

// Least-squares solve M z = B via QR with an explicit rank check, i.e.
// z = (M'M)^-1 M' B; the paper assumes exact invertibility, so no jitter.
Eigen::MatrixXd lsq_solve(const Eigen::MatrixXd& M, const Eigen::MatrixXd& B) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(M);
  qr.setThreshold(kRankTol);
  if (qr.rank() < M.cols()) throw std::runtime_error("rank-deficient design matrix");
  return qr.solve(B);
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stod(tok));
  }
  return out;
}

}  // namespace

FixedDesign make_design(int n, int d, int m, std::uint64_t seed) {
  Rng rng = Rng::derived(seed, 0x5831);
  FixedDesign design;
  design.n = n;
  design.d = d;
  design.m = m;
  design.X.resize(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) design.X(i, j) = rng.gaussian();
  return design;
}

Eigen::MatrixXd sample_pi(const FixedDesign& design, const LinearGenerator& gen,
                          std::uint64_t seed) {
  Rng rng = Rng::derived(seed, 0xA51);
  const int m = design.m;
  Eigen::MatrixXd A(design.n, m);
  for (int i = 0; i < design.n; ++i) {
    const Eigen::VectorXd x = design.X.row(i);
    Eigen::VectorXd mu = gen.mu_fn(x);
    Eigen::MatrixXd cov = gen.cov_fn(x);
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-9)
      throw std::runtime_error("sample_pi: non-symmetric Sigma(x) at row " +
                               std::to_string(i));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.eigenvalues().minCoeff() < -1e-10)
      throw std::runtime_error("sample_pi: non-PSD Sigma(x) at row " + std::to_string(i));
    Eigen::MatrixXd root =
        eig.eigenvectors() *
        eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    Eigen::VectorXd g(m);
    for (int j = 0; j < m; ++j) g(j) = rng.gaussian();
    A.row(i) = (mu + root * g).transpose();
  }
  return A;
}

Eigen::VectorXd sample_targets(const Eigen::MatrixXd& X, const Eigen::MatrixXd& A,
                               const LinearGenerator& gen, std::uint64_t seed) {
  if (X.rows() != A.rows()) throw std::runtime_error("sample_targets: row mismatch");
  Rng rng = Rng::derived(seed, 0x7A6);
  Eigen::VectorXd y = X * gen.w_star + A * gen.v_star;
  for (Eigen::Index i = 0; i < y.size(); ++i) y(i) += gen.sigma * rng.gaussian();
  return y;
}

Eigen::MatrixXd mu_of(const FixedDesign& design, const LinearGenerator& gen) {
  Eigen::MatrixXd mu(design.n, design.m);
  for (int i = 0; i < design.n; ++i)
    mu.row(i) = gen.mu_fn(design.X.row(i)).transpose();
  return mu;
}

Eigen::MatrixXd projector(const Eigen::MatrixXd& M) {
  return M * lsq_solve(M, Eigen::MatrixXd::Identity(M.rows(), M.rows()));
}

Eigen::VectorXd fit_no_pi(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  return lsq_solve(X, y);
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> fit_joint(const Eigen::MatrixXd& X,
                                                      const Eigen::MatrixXd& A,
                                                      const Eigen::VectorXd& y) {
  Eigen::MatrixXd Q(X.rows(), X.cols() + A.cols());
  Q << X, A;
  Eigen::VectorXd s = lsq_solve(Q, y);
  return {s.head(X.cols()), s.tail(A.cols())};
}

Eigen::MatrixXd h_a_perp(const Eigen::MatrixXd& X, const Eigen::MatrixXd& A) {
  Eigen::MatrixXd Xp = X - projector(A) * X;
  return lsq_solve(Xp, Eigen::MatrixXd::Identity(Xp.rows(), Xp.rows()));
}

Eigen::MatrixXd g_x_perp(const Eigen::MatrixXd& X, const Eigen::MatrixXd& A) {
  Eigen::MatrixXd Ap = A - projector(X) * A;
  return lsq_solve(Ap, Eigen::MatrixXd::Identity(Ap.rows(), Ap.rows()));
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> fit_joint_blockwise(const Eigen::MatrixXd& X,
                                                                const Eigen::MatrixXd& A,
                                                                const Eigen::VectorXd& y) {
  return {h_a_perp(X, A) * y, g_x_perp(X, A) * y};
}

Eigen::VectorXd predict(EstimatorKind kind, const FittedParams& fitted,
                        const Eigen::MatrixXd& X, const Eigen::MatrixXd* mu_X) {
  switch (kind) {
    case EstimatorKind::NoPI:
    case EstimatorKind::MargNoPI:
      return X * fitted.w;
    case EstimatorKind::PIMeanImpute:
    case EstimatorKind::MargPI:
      if (!mu_X) throw std::runtime_error("predict: missing mu(X) context");
      return X * fitted.w + (*mu_X) * fitted.v;
  }
  throw std::runtime_error("predict: unknown kind");
}

namespace {

// Lambda_ii = v*' Sigma(x_i) v*.
Eigen::VectorXd lambda_diag(const FixedDesign& design, const LinearGenerator& gen) {
  Eigen::VectorXd lam(design.n);
  for (int i = 0; i < design.n; ++i) {
    Eigen::MatrixXd cov = gen.cov_fn(design.X.row(i));
    lam(i) = gen.v_star.dot(cov * gen.v_star);
  }
  return lam;
}

double mean_k_sq(const FixedDesign& design, const LinearGenerator& gen,
                 const Eigen::MatrixXd& mu, std::uint64_t inner_seed, int n_inner) {
  double acc = 0.0;
  for (int r = 0; r < n_inner; ++r) {
    Eigen::MatrixXd A = sample_pi(design, gen, Rng::mix(inner_seed ^ Rng::mix(r)));
    Eigen::MatrixXd K = design.X * h_a_perp(design.X, A) + mu * g_x_perp(design.X, A);
    acc += K.squaredNorm();
  }
  return acc / n_inner;
}

Eigen::MatrixXd mean_l(const FixedDesign& design, const LinearGenerator& gen,
                       std::uint64_t inner_seed, int n_inner) {
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(design.n, design.n);
  for (int r = 0; r < n_inner; ++r) {
    Eigen::MatrixXd A = sample_pi(design, gen, Rng::mix(inner_seed ^ Rng::mix(r)));
    acc += design.X * h_a_perp(design.X, A) + A * g_x_perp(design.X, A);
  }
  return acc / n_inner;
}

}  // namespace

double risk_closed_form(EstimatorKind kind, const FixedDesign& design,
                        const LinearGenerator& gen, std::uint64_t inner_seed,
                        int n_inner) {
  const double n = design.n;
  const Eigen::MatrixXd mu = mu_of(design, gen);
  const double s2 = gen.sigma * gen.sigma;
  switch (kind) {
    case EstimatorKind::NoPI: {
      Eigen::MatrixXd Pi = projector(design.X);
      Eigen::VectorXd bias = (Eigen::MatrixXd::Identity(design.n, design.n) - Pi) * mu *
                             gen.v_star;
      Eigen::VectorXd lam = lambda_diag(design, gen);
      return bias.squaredNorm() / n + s2 * design.d / n + Pi.diagonal().dot(lam) / n;
    }
    case EstimatorKind::MargNoPI: {
      Eigen::MatrixXd Pi = projector(design.X);
      Eigen::VectorXd bias = (Eigen::MatrixXd::Identity(design.n, design.n) - Pi) * mu *
                             gen.v_star;
      return bias.squaredNorm() / n + s2 * design.d / n;
    }
    case EstimatorKind::PIMeanImpute:
      return s2 / n * mean_k_sq(design, gen, mu, inner_seed, n_inner);
    case EstimatorKind::MargPI:
      return s2 / n * mean_l(design, gen, inner_seed, n_inner).squaredNorm();
  }
  throw std::runtime_error("risk_closed_form: unknown kind");
}

RiskEstimate risk_mc(EstimatorKind kind, const FixedDesign& design,
                     const LinearGenerator& gen, int n_reps, std::uint64_t seed,
                     std::uint64_t inner_seed, int n_inner) {
  if (n_reps < 100) throw std::runtime_error("risk_mc: n_reps must be >= 100");
  const double n = design.n;
  const Eigen::MatrixXd mu = mu_of(design, gen);
  const Eigen::VectorXd target = design.X * gen.w_star + mu * gen.v_star;

  // MargPI shares the E[L] estimate with risk_closed_form so the consistency
  // comparison isolates the outer (epsilon) Monte-Carlo error.
  Eigen::MatrixXd EL;
  if (kind == EstimatorKind::MargPI) EL = mean_l(design, gen, inner_seed, n_inner);

  double sum = 0.0, sum_sq = 0.0;
  for (int r = 0; r < n_reps; ++r) {
    const std::uint64_t sr = Rng::mix(seed ^ Rng::mix(r + 1));
    double risk;
    try {
      switch (kind) {
        case EstimatorKind::NoPI: {
          Eigen::MatrixXd A = sample_pi(design, gen, Rng::mix(sr ^ 0x11));
          Eigen::VectorXd y = sample_targets(design.X, A, gen, Rng::mix(sr ^ 0x22));
          FittedParams f{fit_no_pi(design.X, y), {}};
          risk = (target - predict(kind, f, design.X)).squaredNorm() / n;
          break;
        }
        case EstimatorKind::PIMeanImpute: {
          Eigen::MatrixXd A = sample_pi(design, gen, Rng::mix(sr ^ 0x11));
          Eigen::VectorXd y = sample_targets(design.X, A, gen, Rng::mix(sr ^ 0x22));
          auto [w, v] = fit_joint(design.X, A, y);
          FittedParams f{w, v};
          risk = (target - predict(kind, f, design.X, &mu)).squaredNorm() / n;
          break;
        }
        case EstimatorKind::MargNoPI: {
          // E_a[w_hat0]: A-dependent terms replaced by mu(X) in y's decomposition.
          Eigen::VectorXd y = sample_targets(design.X, mu, gen, Rng::mix(sr ^ 0x22));
          FittedParams f{fit_no_pi(design.X, y), {}};
          risk = (target - predict(kind, f, design.X)).squaredNorm() / n;
          break;
        }
        case EstimatorKind::MargPI: {
          Rng rng = Rng::derived(Rng::mix(sr ^ 0x33), 0xE5);
          Eigen::VectorXd eps(design.n);
          for (int i = 0; i < design.n; ++i) eps(i) = gen.sigma * rng.gaussian();
          risk = (EL * eps).squaredNorm() / n;
          break;
        }
        default:
          throw std::runtime_error("risk_mc: unknown kind");
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("risk_mc: replicate " + std::to_string(r) +
                               " failed: " + e.what());
    }
    sum += risk;
    sum_sq += risk * risk;
  }
  RiskEstimate est;
  est.n_reps = n_reps;
  est.mc_mean = sum / n_reps;
  const double var = (sum_sq - sum * sum / n_reps) / (n_reps - 1);
  est.mc_stderr = std::sqrt(std::max(var, 0.0) / n_reps);
  return est;
}

PropositionResult check_proposition(int which, const FixedDesign& design,
                                    const LinearGenerator& gen, int n_reps,
                                    std::uint64_t seed) {
  if (which != 1 && which != 2) throw std::runtime_error("check_proposition: which must be 1 or 2");
  const std::uint64_t inner_seed = Rng::mix(seed ^ 0xC0FFEE);
  const int n_inner = 2000;
  PropositionResult res;
  const EstimatorKind base = which == 1 ? EstimatorKind::NoPI : EstimatorKind::MargNoPI;
  const EstimatorKind pi = which == 1 ? EstimatorKind::PIMeanImpute : EstimatorKind::MargPI;
  res.lhs = risk_closed_form(base, design, gen, inner_seed, n_inner);
  res.rhs = risk_closed_form(pi, design, gen, inner_seed, n_inner);
  res.pi_wins = res.lhs > res.rhs;
  res.mc_no_pi = risk_mc(base, design, gen, n_reps, seed, inner_seed, n_inner);
  res.mc_pi = risk_mc(pi, design, gen, n_reps, Rng::mix(seed ^ 0x9), inner_seed, n_inner);
  const double gap = res.mc_no_pi.mc_mean - res.mc_pi.mc_mean;
  const double noise = 3.0 * std::hypot(res.mc_no_pi.mc_stderr, res.mc_pi.mc_stderr);
  // Consistency: the MC ordering either matches the verdict or is within noise.
  res.consistent = res.pi_wins ? (gap > -noise) : (gap < noise);
  return res;
}

BoundResult sherman_morrison_bound(const Eigen::MatrixXd& X, const Eigen::VectorXd& A,
                                   const Eigen::VectorXd& mu, bool mu_variant) {
  Eigen::MatrixXd Pi = projector(X);
  Eigen::VectorXd A_perp = A - Pi * A;
  const double denom = A_perp.squaredNorm();
  if (denom < 1e-14) throw std::runtime_error("sherman_morrison_bound: A in span(X)");
  Eigen::MatrixXd Am = A;
  Eigen::MatrixXd mum = mu;
  Eigen::MatrixXd K = X * h_a_perp(X, Am) + (mu_variant ? mum : Am) * g_x_perp(X, Am);
  BoundResult res;
  res.lhs = K.squaredNorm();
  const double num = (Pi * A).squaredNorm() + (mu_variant ? mu.squaredNorm() : A.squaredNorm());
  res.rhs = 2.0 * X.cols() + 2.0 * num / denom;
  return res;
}

LinearGenerator generator_from_config(const std::map<std::string, std::string>& kv) {
  auto get = [&](const std::string& k) -> std::string {
    auto it = kv.find(k);
    if (it == kv.end()) throw std::runtime_error("generator config missing key " + k);
    return it->second;
  };
  auto get_or = [&](const std::string& k, const std::string& dflt) {
    auto it = kv.find(k);
    return it == kv.end() ? dflt : it->second;
  };
  const int d = std::stoi(get("d"));
  const int m = std::stoi(get("m"));
  LinearGenerator gen;
  gen.sigma = std::stod(get_or("sigma", "1.0"));
  auto w = parse_list(get("w_star"));
  auto v = parse_list(get("v_star"));
  if (static_cast<int>(w.size()) != d || static_cast<int>(v.size()) != m)
    throw std::runtime_error("generator config: w_star/v_star length mismatch");
  gen.w_star = Eigen::Map<Eigen::VectorXd>(w.data(), d);
  gen.v_star = Eigen::Map<Eigen::VectorXd>(v.data(), m);

  const std::string mu_kind = get_or("mu_kind", "zero");
  if (mu_kind == "zero") {
    gen.mu_fn = [m](const Eigen::VectorXd&) { return Eigen::VectorXd::Zero(m); };
  } else if (mu_kind == "linear") {
    auto b = parse_list(get("mu_B"));
    if (static_cast<int>(b.size()) != m * d)
      throw std::runtime_error("generator config: mu_B needs m*d entries");
    Eigen::MatrixXd B(m, d);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < d; ++j) B(i, j) = b[i * d + j];
    gen.mu_fn = [B](const Eigen::VectorXd& x) { return (B * x).eval(); };
  } else if (mu_kind == "constant") {
    auto c = parse_list(get("mu_c"));
    if (static_cast<int>(c.size()) != m)
      throw std::runtime_error("generator config: mu_c needs m entries");
    Eigen::VectorXd cv = Eigen::Map<Eigen::VectorXd>(c.data(), m);
    gen.mu_fn = [cv](const Eigen::VectorXd&) { return cv; };
  } else {
    throw std::runtime_error("generator config: unknown mu_kind " + mu_kind);
  }

  const std::string cov_kind = get_or("cov_kind", "zero");
  if (cov_kind == "zero") {
    gen.cov_fn = [m](const Eigen::VectorXd&) { return Eigen::MatrixXd::Zero(m, m).eval(); };
  } else if (cov_kind == "isotropic") {
    const double s = std::stod(get("cov_s"));
    gen.cov_fn = [m, s](const Eigen::VectorXd&) {
      return (s * Eigen::MatrixXd::Identity(m, m)).eval();
    };
  } else if (cov_kind == "diagonal") {
    auto dvec = parse_list(get("cov_diag"));
    if (static_cast<int>(dvec.size()) != m)
      throw std::runtime_error("generator config: cov_diag needs m entries");
    Eigen::VectorXd diag = Eigen::Map<Eigen::VectorXd>(dvec.data(), m);
    gen.cov_fn = [diag](const Eigen::VectorXd&) {
      return Eigen::MatrixXd(diag.asDiagonal()).eval();
    };
  } else {
    throw std::runtime_error("generator config: unknown cov_kind " + cov_kind);
  }
  return gen;
}

}  // namespace tram::linrisk
