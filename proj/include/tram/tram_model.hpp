#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tram/nn.hpp"

namespace tram::model {

enum class Task { Regression, Classification };

struct TramModel {
  nn::MLPSpec phi_spec;
  nn::ParamBlock phi;
  // Optional psi stage 1 consumes a only; stage 2 consumes
  // concat(stage-1 output or raw a, phi(x)).
  nn::MLPSpec psi_a_spec;
  nn::ParamBlock psi_a;
  bool has_a_encoder = true;
  int pi_dim = 0;
  nn::MLPSpec psi_spec;
  nn::ParamBlock psi;
  nn::MLPSpec head_w_spec;  // affine on phi(x)
  nn::ParamBlock head_w;
  nn::MLPSpec head_u_spec;  // affine on psi output
  nn::ParamBlock head_u;
  Task task = Task::Regression;
  int n_classes = 0;
  bool has_psi = true;  // false for the NoPI baseline (single head on phi)
  // Het-TRAM variance sub-head on phi(x): regression -> softplus scalar;
  // classification -> per-class logit-noise scale.
  std::optional<nn::MLPSpec> het_spec;
  std::optional<nn::ParamBlock> het_w;
};

struct TrainConfig {
  enum Mode { OneStep, TwoStep } mode = OneStep;
  double beta = 1.0;
  int epochs = 10;
  int batch_size = 128;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  nn::LossKind loss_l1;  // conditional head
  nn::LossKind loss_l2;  // marginal head
};

struct Dataset {
  Eigen::MatrixXd X;        // n×dx
  Eigen::MatrixXd A;        // n×da (encoded PI)
  Eigen::MatrixXd Y;        // n×1 (real target or class index)
};

enum class PredictorKind {
  NoPI,
  ZeroImpute,
  MeanImpute,
  FullMarg,
  TRAM,
  HetTRAM,
  DistillNoPI,
  DistilledTRAM,
  OracleTeacher
};

std::string predictor_name(PredictorKind kind);

struct RunResult {
  PredictorKind predictor = PredictorKind::TRAM;
  std::uint64_t seed = 0;
  double nll = 0.0;
  double accuracy = 0.0;           // classification only
  double rmse_to_reference = 0.0;  // when a reference fn is supplied
  double wall_ms = 0.0;
};

// widths: hidden widths of phi; psi_width: psi stage widths (a-encoder when
// enabled, plus the joint tanh layer). a_encoder=false feeds raw a straight
// into the joint layer, the single-layer form used on the synthetic tasks;
// het=true attaches the variance sub-head.
TramModel build_tram(int input_dim, int pi_dim, Task task, int n_classes,
                     const std::vector<int>& widths, int psi_width,
                     std::uint64_t init_seed, bool het = false,
                     bool a_encoder = true);
// Single-head baseline: same phi architecture, marginal head only.
TramModel build_no_pi(int input_dim, Task task, int n_classes,
                      const std::vector<int>& widths, std::uint64_t init_seed,
                      bool het = false);

struct LossCurves {
  std::vector<double> l1;  // per-epoch means (zero for models without psi)
  std::vector<double> l2;
};

LossCurves train_one_step(TramModel& model, const Dataset& data, const TrainConfig& cfg);
LossCurves train_two_step(TramModel& model, const Dataset& data, const TrainConfig& cfg);

// Distribution parameters: classification -> n×C probabilities; regression ->
// n×2 (mu, sigma^2).
Eigen::MatrixXd predict_marginal(const TramModel& model, const Eigen::MatrixXd& X);
Eigen::MatrixXd predict_conditional(const TramModel& model, const Eigen::MatrixXd& X,
                                    const Eigen::MatrixXd& A);
Eigen::MatrixXd predict_full_marg(const TramModel& model, const Eigen::MatrixXd& X,
                                  const Eigen::MatrixXd& pi_pool, int S,
                                  std::uint64_t seed);
Eigen::MatrixXd predict_impute(const TramModel& model, const Eigen::MatrixXd& X,
                               const std::string& mode,  // "zero" | "mean"
                               const Eigen::MatrixXd* pi_pool = nullptr);

// Student trained one-step with L1 = Distill(T, lambda) against the teacher's
// conditional-head logits (marginal-head logits for DistillNoPI teachers).
TramModel train_distilled(const TramModel& teacher, const Dataset& data,
                          const TrainConfig& cfg, double T, double lambda,
                          bool no_pi_variant = false);

struct ProbeResult {
  Eigen::VectorXd weights;  // includes trailing intercept
  double train_objective = 0.0;
  int iterations = 0;
};

// Regression: exact ridge on [phi(x), 1] (intercept unpenalized).
// Classification: full-batch GD logistic regression, stop at grad norm < 1e-6
// or 10k iterations, step size 1/L from the logistic Lipschitz constant.
ProbeResult linear_probe(const TramModel& model, const Eigen::MatrixXd& X,
                         const Eigen::MatrixXd& Y, Task task, double l2_penalty = 1e-3);
Eigen::VectorXd probe_predict(const TramModel& model, const ProbeResult& probe,
                              const Eigen::MatrixXd& X, Task task);

// dist_params: classification n×C probabilities, regression n×2 (mu, sigma^2).
// reference: per-row reference values for rmse_to_reference (regression).
RunResult evaluate(PredictorKind kind, const Eigen::MatrixXd& dist_params,
                   const Eigen::MatrixXd& Y, Task task,
                   const Eigen::VectorXd* reference = nullptr);

Eigen::MatrixXd one_hot_targets(const Eigen::MatrixXd& Y, int n_classes);

}  // namespace tram::model
