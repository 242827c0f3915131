#include "tram/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "tram/rng.hpp"

namespace tram::synth {

namespace {

constexpr double kPi = 3.14159265358979323846;

double eq2_score(double x, bool noisy, double v, double eps) {
  return (noisy ? v : std::sin(2.0 * kPi * x)) + eps;
}

}  // namespace

std::vector<PITriplet> gen_regression(const RegressionTaskSpec& spec, std::uint64_t seed) {
  Rng rng = Rng::derived(seed, 0x9E6);
  std::vector<PITriplet> out(spec.n);
  for (auto& t : out) {
    t.x = rng.uniform(spec.x_lo, spec.x_hi);
    t.latent_is_noisy = rng.uniform() < spec.p_noise;
    t.latent_v = rng.uniform(spec.v_lo, spec.v_hi);
    const double eps = spec.eps_std * rng.gaussian();
    t.a_raw = t.latent_is_noisy ? 1.0 : 0.0;
    t.a_encoded = {t.a_raw};
    t.y = eq2_score(t.x, t.latent_is_noisy, t.latent_v, eps);
  }
  return out;
}

std::vector<PITriplet> gen_classification(const ClassificationTaskSpec& spec,
                                          std::uint64_t seed) {
  Rng rng = Rng::derived(seed, 0xC1A);
  std::vector<PITriplet> out(spec.n);
  for (auto& t : out) {
    t.x = rng.uniform(spec.x_lo, spec.x_hi);
    t.latent_is_noisy = rng.uniform() < spec.p_noise;
    t.latent_v = rng.uniform(spec.v_lo, spec.v_hi);
    const double eps = spec.eps_std * rng.gaussian();
    t.a_raw = t.latent_is_noisy ? 1.0 : 0.0;
    t.a_encoded = {t.a_raw};
    const double s = 1.0 / (1.0 + std::exp(-eq2_score(t.x, t.latent_is_noisy, t.latent_v, eps)));
    t.y = s > spec.threshold ? 1.0 : 0.0;
  }
  return out;
}

double true_marginal_regression(double x, double p_noise) {
  return (1.0 - p_noise) * std::sin(2.0 * kPi * x);
}

namespace {

// Physicists' Gauss-Hermite rule by Golub-Welsch on the Jacobi matrix.
struct GaussHermite {
  Eigen::VectorXd nodes, weights;
  explicit GaussHermite(int k) {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(k, k);
    for (int i = 1; i < k; ++i) {
      const double b = std::sqrt(i / 2.0);
      J(i, i - 1) = J(i - 1, i) = b;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(J);
    nodes = eig.eigenvalues();
    weights = std::sqrt(kPi) * eig.eigenvectors().row(0).transpose().array().square();
  }
};

}  // namespace

double oracle_class1_prob(double x, const ClassificationTaskSpec& spec) {
  // sigmoid(score) > threshold  <=>  score > logit(threshold).
  const double cut = std::log(spec.threshold / (1.0 - spec.threshold));
  static const GaussHermite gh(160);
  // P(mean + eps > cut), eps ~ N(0, sd^2), by Gauss-Hermite over eps.
  auto p_exceed = [&](double mean) {
    double p = 0.0;
    for (Eigen::Index k = 0; k < gh.nodes.size(); ++k) {
      const double eps = std::sqrt(2.0) * spec.eps_std * gh.nodes(k);
      if (mean + eps > cut) p += gh.weights(k);
    }
    return p / std::sqrt(kPi);
  };
  const double p_clean = p_exceed(std::sin(2.0 * kPi * x));
  // Uniform quadrature over v (midpoint rule).
  const int nv = 401;
  double p_noisy = 0.0;
  for (int i = 0; i < nv; ++i) {
    const double v = spec.v_lo + (spec.v_hi - spec.v_lo) * (i + 0.5) / nv;
    p_noisy += p_exceed(v);
  }
  p_noisy /= nv;
  return (1.0 - spec.p_noise) * p_clean + spec.p_noise * p_noisy;
}

int oracle_classifier(double x, const ClassificationTaskSpec& spec) {
  return oracle_class1_prob(x, spec) > 0.5 ? 1 : 0;
}

Eigen::MatrixXd encode_one_hot(const std::vector<int>& values,
                               std::vector<int>* category_order) {
  std::vector<int> cats;
  for (int v : values)
    if (std::find(cats.begin(), cats.end(), v) == cats.end()) cats.push_back(v);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(values.size(), cats.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto it = std::find(cats.begin(), cats.end(), values[i]);
    out(i, std::distance(cats.begin(), it)) = 1.0;
  }
  if (category_order) *category_order = cats;
  return out;
}

QuantileEncoder fit_quantile_encoder(const std::vector<double>& values, int q) {
  if (q < 2) throw std::runtime_error("fit_quantile_encoder: q must be >= 2");
  if (static_cast<int>(values.size()) < q)
    throw std::runtime_error("fit_quantile_encoder: need at least q values");
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  QuantileEncoder enc;
  if (sorted.front() == sorted.back()) {
    enc.constant_column = true;
    return enc;
  }
  for (int i = 1; i < q; ++i) {
    std::size_t idx = static_cast<std::size_t>(
        static_cast<double>(i) * sorted.size() / q);
    idx = std::min(idx, sorted.size() - 1);
    enc.edges.push_back(sorted[idx]);
  }
  return enc;
}

Eigen::MatrixXd QuantileEncoder::encode(const std::vector<double>& values) const {
  const int q = constant_column ? 1 : static_cast<int>(edges.size()) + 1;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(values.size(), q);
  for (std::size_t i = 0; i < values.size(); ++i) {
    int bin = 0;
    if (!constant_column) {
      // Ties go to the lower bin: advance only on strictly greater.
      while (bin < static_cast<int>(edges.size()) && values[i] > edges[bin]) ++bin;
    }
    out(i, bin) = 1.0;
  }
  return out;
}

CmiEstimate estimate_cmi(const std::vector<PITriplet>& triplets, int bins_x, int bins_y) {
  const std::size_t n = triplets.size();
  if (n == 0) throw std::runtime_error("estimate_cmi: empty dataset");
  double x_lo = triplets[0].x, x_hi = triplets[0].x;
  double y_lo = triplets[0].y, y_hi = triplets[0].y;
  for (const auto& t : triplets) {
    x_lo = std::min(x_lo, t.x);
    x_hi = std::max(x_hi, t.x);
    y_lo = std::min(y_lo, t.y);
    y_hi = std::max(y_hi, t.y);
  }
  auto bin_of = [](double v, double lo, double hi, int bins) {
    if (hi <= lo) return 0;
    int b = static_cast<int>((v - lo) / (hi - lo) * bins);
    return std::clamp(b, 0, bins - 1);
  };
  // counts[xb][yb][a]
  std::vector<std::vector<std::array<double, 2>>> counts(
      bins_x, std::vector<std::array<double, 2>>(bins_y, {0.0, 0.0}));
  for (const auto& t : triplets) {
    const int xb = bin_of(t.x, x_lo, x_hi, bins_x);
    const int yb = bin_of(t.y, y_lo, y_hi, bins_y);
    const int a = t.a_raw > 0.5 ? 1 : 0;
    counts[xb][yb][a] += 1.0;
  }
  CmiEstimate est;
  est.low_count_warning = static_cast<double>(n) / bins_x < 10.0;
  double cmi = 0.0;
  for (int xb = 0; xb < bins_x; ++xb) {
    double n_x = 0.0;
    std::array<double, 2> n_a = {0.0, 0.0};
    std::vector<double> n_y(bins_y, 0.0);
    for (int yb = 0; yb < bins_y; ++yb)
      for (int a = 0; a < 2; ++a) {
        n_x += counts[xb][yb][a];
        n_a[a] += counts[xb][yb][a];
        n_y[yb] += counts[xb][yb][a];
      }
    if (n_x == 0.0) continue;
    double local = 0.0;
    for (int yb = 0; yb < bins_y; ++yb)
      for (int a = 0; a < 2; ++a) {
        const double c = counts[xb][yb][a];
        if (c == 0.0) continue;
        const double p_ya = c / n_x;
        const double p_y = n_y[yb] / n_x;
        const double p_a = n_a[a] / n_x;
        local += p_ya * std::log(p_ya / (p_y * p_a));
      }
    cmi += (n_x / static_cast<double>(n)) * local;
  }
  est.value = cmi;
  return est;
}

void export_dataset(const std::vector<PITriplet>& triplets, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("export_dataset: cannot open " + path);
  const std::size_t k = triplets.empty() ? 0 : triplets[0].a_encoded.size();
  out << "x\ta_raw";
  for (std::size_t j = 0; j < k; ++j) out << "\ta_enc_" << j;
  out << "\ty\tlatent.is_noisy\tlatent.v\n";
  char buf[64];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (const auto& t : triplets) {
    out << fmt(t.x) << '\t' << fmt(t.a_raw);
    for (double e : t.a_encoded) out << '\t' << fmt(e);
    out << '\t' << fmt(t.y) << '\t' << (t.latent_is_noisy ? 1 : 0) << '\t'
        << fmt(t.latent_v) << '\n';
  }
}

Eigen::MatrixXd x_matrix(const std::vector<PITriplet>& triplets) {
  Eigen::MatrixXd X(triplets.size(), 1);
  for (std::size_t i = 0; i < triplets.size(); ++i) X(i, 0) = triplets[i].x;
  return X;
}

Eigen::MatrixXd a_matrix(const std::vector<PITriplet>& triplets) {
  const std::size_t k = triplets.empty() ? 0 : triplets[0].a_encoded.size();
  Eigen::MatrixXd A(triplets.size(), k);
  for (std::size_t i = 0; i < triplets.size(); ++i)
    for (std::size_t j = 0; j < k; ++j) A(i, j) = triplets[i].a_encoded[j];
  return A;
}

Eigen::MatrixXd y_matrix(const std::vector<PITriplet>& triplets) {
  Eigen::MatrixXd Y(triplets.size(), 1);
  for (std::size_t i = 0; i < triplets.size(); ++i) Y(i, 0) = triplets[i].y;
  return Y;
}

}  // namespace tram::synth
