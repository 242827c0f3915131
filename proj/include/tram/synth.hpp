#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace tram::synth {

struct RegressionTaskSpec {
  int n = 2500;
  double p_noise = 0.3;
  double eps_std = 0.1;
  double x_lo = 0.0, x_hi = 1.0;
  double v_lo = -1.0, v_hi = 1.0;
};

struct ClassificationTaskSpec {
  int n = 20000;
  double p_noise = 0.3;
  double eps_std = 0.4;
  double x_lo = -2.0, x_hi = 2.0;
  double v_lo = -1.0, v_hi = 1.0;
  double threshold = 0.5;
};

struct PITriplet {
  double x = 0.0;
  double a_raw = 0.0;               // annotator flag (binary here)
  std::vector<double> a_encoded;
  double y = 0.0;                   // real target or class index
  bool latent_is_noisy = false;     // generator bookkeeping, never fed to models
  double latent_v = 0.0;
};

std::vector<PITriplet> gen_regression(const RegressionTaskSpec& spec, std::uint64_t seed);
std::vector<PITriplet> gen_classification(const ClassificationTaskSpec& spec,
                                          std::uint64_t seed);

// E[y|x] under Eq. (2): (1 - p_noise) * sin(2*pi*x).
double true_marginal_regression(double x, double p_noise = 0.3);

// Bayes class after marginalizing (a, v, eps); numeric integration
// (Gauss-Hermite over eps, analytic over a, uniform quadrature over v).
int oracle_classifier(double x, const ClassificationTaskSpec& spec = {});
// The marginal P(label = 1 | x) behind the oracle.
double oracle_class1_prob(double x, const ClassificationTaskSpec& spec = {});

Eigen::MatrixXd encode_one_hot(const std::vector<int>& values,
                               std::vector<int>* category_order = nullptr);

struct QuantileEncoder {
  std::vector<double> edges;  // q-1 interior edges
  bool constant_column = false;
  Eigen::MatrixXd encode(const std::vector<double>& values) const;
};
QuantileEncoder fit_quantile_encoder(const std::vector<double>& values, int q = 10);

struct CmiEstimate {
  double value = 0.0;        // nats
  bool low_count_warning = false;
};

CmiEstimate estimate_cmi(const std::vector<PITriplet>& triplets, int bins_x = 20,
                         int bins_y = 20);

// Columns: x, a_raw, a_enc_0..k, y, latent.is_noisy, latent.v; 17 significant digits.
void export_dataset(const std::vector<PITriplet>& triplets, const std::string& path);

// Dense views for training code.
Eigen::MatrixXd x_matrix(const std::vector<PITriplet>& triplets);
Eigen::MatrixXd a_matrix(const std::vector<PITriplet>& triplets);
Eigen::MatrixXd y_matrix(const std::vector<PITriplet>& triplets);

}  // namespace tram::synth
