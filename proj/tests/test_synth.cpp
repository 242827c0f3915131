#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tram/synth.hpp"

using namespace tram;
using namespace tram::synth;

namespace {
constexpr double kPi = 3.14159265358979323846;
}

TEST_CASE("regression generator matches its own latent bookkeeping") {
  RegressionTaskSpec spec;
  auto data = gen_regression(spec, 7);
  REQUIRE(static_cast<int>(data.size()) == spec.n);

  int noisy = 0;
  double resid_sum2 = 0.0;
  for (const auto& t : data) {
    CHECK(t.x >= spec.x_lo);
    CHECK(t.x <= spec.x_hi);
    CHECK((t.a_raw == 0.0 || t.a_raw == 1.0));
    CHECK(t.latent_is_noisy == (t.a_raw == 1.0));
    noisy += t.latent_is_noisy;
    if (t.latent_is_noisy) {
      CHECK(t.latent_v >= spec.v_lo);
      CHECK(t.latent_v <= spec.v_hi);
    }
    // Subtracting the structural part leaves only the Gaussian noise.
    double structural = t.latent_is_noisy ? t.latent_v : std::sin(2.0 * kPi * t.x);
    resid_sum2 += (t.y - structural) * (t.y - structural);
  }
  double rate = static_cast<double>(noisy) / spec.n;
  CHECK(std::abs(rate - spec.p_noise) < 0.03);
  double resid_std = std::sqrt(resid_sum2 / spec.n);
  CHECK(std::abs(resid_std - spec.eps_std) < 0.01);
}

TEST_CASE("regression generator is seed-deterministic and seed-sensitive") {
  RegressionTaskSpec spec;
  spec.n = 200;
  auto a = gen_regression(spec, 5);
  auto b = gen_regression(spec, 5);
  auto c = gen_regression(spec, 6);
  bool same = true, differ = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    same = same && a[i].x == b[i].x && a[i].y == b[i].y && a[i].a_raw == b[i].a_raw;
    differ = differ || a[i].x != c[i].x;
  }
  CHECK(same);
  CHECK(differ);
}

TEST_CASE("true marginal is the de-noised scaled sine") {
  CHECK(true_marginal_regression(0.25) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(true_marginal_regression(0.75) == doctest::Approx(-0.7).epsilon(1e-12));
  CHECK(true_marginal_regression(0.5) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(true_marginal_regression(0.1, 0.5) ==
        doctest::Approx(0.5 * std::sin(0.2 * kPi)).epsilon(1e-12));
}

TEST_CASE("classification generator produces balanced labels in-range") {
  ClassificationTaskSpec spec;
  spec.n = 5000;
  auto data = gen_classification(spec, 13);
  REQUIRE(static_cast<int>(data.size()) == spec.n);
  int ones = 0;
  for (const auto& t : data) {
    CHECK(t.x >= spec.x_lo);
    CHECK(t.x <= spec.x_hi);
    CHECK((t.y == 0.0 || t.y == 1.0));
    ones += t.y == 1.0;
  }
  // The construction is symmetric around zero.
  double frac = static_cast<double>(ones) / spec.n;
  CHECK(std::abs(frac - 0.5) < 0.03);
}

TEST_CASE("oracle classifier equals the sign of the sine") {
  ClassificationTaskSpec spec;
  for (int i = 0; i < 401; ++i) {
    double x = spec.x_lo + (spec.x_hi - spec.x_lo) * i / 400.0;
    double s = std::sin(2.0 * kPi * x);
    if (std::abs(s) < 1e-3) continue;  // skip the boundary itself
    CHECK(oracle_classifier(x, spec) == (s > 0.0 ? 1 : 0));
  }
}

TEST_CASE("oracle class-1 probability is a valid, symmetric marginal") {
  ClassificationTaskSpec spec;
  double p_peak = oracle_class1_prob(0.25, spec);
  double p_trough = oracle_class1_prob(-0.25, spec);
  CHECK(p_peak > 0.5);
  CHECK(p_trough < 0.5);
  CHECK(p_peak <= 1.0);
  CHECK(p_trough >= 0.0);
  CHECK(p_peak + p_trough == doctest::Approx(1.0).epsilon(1e-6));
  // At a sine zero the two classes are equally likely.
  CHECK(oracle_class1_prob(0.5, spec) == doctest::Approx(0.5).epsilon(1e-6));
  // The noisy-annotator mass bounds the probability away from 0 and 1.
  CHECK(p_peak < 1.0 - spec.p_noise / 2.0 + 1e-6);
}

TEST_CASE("one-hot encoding partitions the rows") {
  std::vector<int> values = {3, 1, 4, 1, 5, 9, 2, 6, 5, 3};
  std::vector<int> order;
  Eigen::MatrixXd enc = encode_one_hot(values, &order);
  CHECK(enc.rows() == 10);
  CHECK(enc.cols() == static_cast<int>(order.size()));
  for (int i = 0; i < enc.rows(); ++i) {
    CHECK(enc.row(i).sum() == 1.0);
    CHECK(enc.row(i).maxCoeff() == 1.0);
    CHECK(enc.row(i).minCoeff() == 0.0);
  }
  // Re-encoding identical values yields identical rows.
  CHECK(enc.row(1) == enc.row(3));
  CHECK(enc.row(4) == enc.row(8));
}

TEST_CASE("quantile encoder buckets evenly and handles constants") {
  std::vector<double> values;
  for (int i = 0; i < 1000; ++i) values.push_back(std::sqrt(i + 1.0));
  QuantileEncoder enc = fit_quantile_encoder(values, 10);
  CHECK(!enc.constant_column);
  Eigen::MatrixXd code = enc.encode(values);
  CHECK(code.cols() == 10);
  Eigen::VectorXd counts = code.colwise().sum();
  for (int j = 0; j < 10; ++j) CHECK(std::abs(counts(j) - 100.0) <= 10.0);

  std::vector<double> flat(50, 3.14);
  QuantileEncoder cenc = fit_quantile_encoder(flat, 10);
  CHECK(cenc.constant_column);
  Eigen::MatrixXd ccode = cenc.encode(flat);
  for (int i = 0; i < ccode.rows(); ++i) CHECK(ccode.row(i).sum() == 1.0);
}

TEST_CASE("cmi estimate vanishes under conditional independence") {
  // Break the a->y link: y depends only on x, a is independent noise.
  RegressionTaskSpec spec;
  spec.n = 50000;
  auto data = gen_regression(spec, 3);
  auto indep = gen_regression(spec, 4);
  for (std::size_t i = 0; i < data.size(); ++i) {
    // Pair y from one draw with a from another.
    data[i].a_raw = indep[i].a_raw;
    data[i].a_encoded = indep[i].a_encoded;
  }
  CmiEstimate est = estimate_cmi(data);
  CHECK(est.value < 0.02);
}

TEST_CASE("cmi decreases as additive noise drowns the privileged signal") {
  RegressionTaskSpec lo, hi;
  lo.n = hi.n = 50000;
  lo.eps_std = 0.1;
  hi.eps_std = 2.0;
  double cmi_lo = estimate_cmi(gen_regression(lo, 11)).value;
  double cmi_hi = estimate_cmi(gen_regression(hi, 11)).value;
  CHECK(cmi_lo > cmi_hi);
  CHECK(cmi_lo > 0.2);
  CHECK(cmi_hi < 0.1);
}

TEST_CASE("dense views line up with the triplets") {
  RegressionTaskSpec spec;
  spec.n = 64;
  auto data = gen_regression(spec, 21);
  Eigen::MatrixXd X = x_matrix(data), A = a_matrix(data), Y = y_matrix(data);
  CHECK(X.rows() == 64);
  CHECK(Y.cols() == 1);
  for (int i = 0; i < 64; ++i) {
    CHECK(X(i, 0) == data[i].x);
    CHECK(Y(i, 0) == data[i].y);
    for (int j = 0; j < A.cols(); ++j)
      CHECK(A(i, j) == data[i].a_encoded[static_cast<std::size_t>(j)]);
  }
}

TEST_CASE("export writes one full-precision row per triplet") {
  RegressionTaskSpec spec;
  spec.n = 10;
  auto data = gen_regression(spec, 33);
  std::string path = (std::filesystem::temp_directory_path() / "synth_export.csv").string();
  export_dataset(data, path);
  std::ifstream in(path);
  std::string line;
  int rows = -1;  // header
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  std::filesystem::remove(path);
  CHECK(rows == 10);
}
