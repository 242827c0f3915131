#include "tram/tram_model.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <map>
#include <numeric>
#include <stdexcept>

#include "tram/rng.hpp"

namespace tram::model {

using nn::Activation;
using nn::ForwardCache;
using nn::LossKind;
using nn::MLPSpec;
using nn::ParamBlock;

std::string predictor_name(PredictorKind kind) {
  switch (kind) {
    case PredictorKind::NoPI: return "no_pi";
    case PredictorKind::ZeroImpute: return "zero_impute";
    case PredictorKind::MeanImpute: return "mean_impute";
    case PredictorKind::FullMarg: return "full_marg";
    case PredictorKind::TRAM: return "tram";
    case PredictorKind::HetTRAM: return "het_tram";
    case PredictorKind::DistillNoPI: return "distill_no_pi";
    case PredictorKind::DistilledTRAM: return "distilled_tram";
    case PredictorKind::OracleTeacher: return "oracle_teacher";
  }
  return "unknown";
}

namespace {

MLPSpec make_mlp_spec(int input_dim, const std::vector<int>& widths, Activation act,
                      std::uint64_t seed) {
  MLPSpec spec;
  spec.input_dim = input_dim;
  spec.layer_dims = widths;
  spec.activations.assign(widths.size(), act);
  spec.init_seed = seed;
  return spec;
}

MLPSpec make_affine_spec(int input_dim, int output_dim, std::uint64_t seed) {
  MLPSpec spec;
  spec.input_dim = input_dim;
  spec.layer_dims = {output_dim};
  spec.activations = {Activation::Identity};
  spec.init_seed = seed;
  return spec;
}

int head_out_dim(Task task, int n_classes) {
  return task == Task::Classification ? n_classes : 1;
}

}  // namespace

TramModel build_tram(int input_dim, int pi_dim, Task task, int n_classes,
                     const std::vector<int>& widths, int psi_width,
                     std::uint64_t init_seed, bool het, bool a_encoder) {
  for (int w : widths)
    if (w <= 0) throw std::runtime_error("build_tram: zero width");
  if (psi_width <= 0) throw std::runtime_error("build_tram: zero psi width");
  TramModel m;
  m.task = task;
  m.n_classes = n_classes;
  m.has_psi = true;
  m.has_a_encoder = a_encoder;
  m.pi_dim = pi_dim;
  m.phi_spec = make_mlp_spec(input_dim, widths, Activation::Tanh, Rng::mix(init_seed ^ 1));
  m.phi = nn::mlp_init(m.phi_spec);
  const int phi_out = m.phi_spec.output_dim();
  int joint_a_width = pi_dim;
  if (a_encoder) {
    m.psi_a_spec = make_mlp_spec(pi_dim, {psi_width}, Activation::Tanh,
                                 Rng::mix(init_seed ^ 2));
    m.psi_a = nn::mlp_init(m.psi_a_spec);
    joint_a_width = psi_width;
  }
  m.psi_spec = make_mlp_spec(joint_a_width + phi_out, {psi_width}, Activation::Tanh,
                             Rng::mix(init_seed ^ 3));
  m.psi = nn::mlp_init(m.psi_spec);
  const int out = head_out_dim(task, n_classes);
  m.head_w_spec = make_affine_spec(phi_out, out, Rng::mix(init_seed ^ 4));
  m.head_w = nn::mlp_init(m.head_w_spec);
  m.head_u_spec = make_affine_spec(psi_width, out, Rng::mix(init_seed ^ 5));
  m.head_u = nn::mlp_init(m.head_u_spec);
  if (het) {
    m.het_spec = make_affine_spec(phi_out, task == Task::Classification ? n_classes : 1,
                                  Rng::mix(init_seed ^ 6));
    m.het_w = nn::mlp_init(*m.het_spec);
  }
  return m;
}

TramModel build_no_pi(int input_dim, Task task, int n_classes,
                      const std::vector<int>& widths, std::uint64_t init_seed, bool het) {
  TramModel m = build_tram(input_dim, 1, task, n_classes, widths,
                           widths.empty() ? 1 : widths.back(), init_seed, het);
  m.has_psi = false;
  return m;
}

namespace {

struct PathCaches {
  ForwardCache phi, psi_a, psi, head_u, head_w, het;
  Eigen::MatrixXd phi_out, psi_out, cond_out, marg_out, het_out;
};

// Forward through every path the model has; caches retained for backward.
void forward_all(const TramModel& m, const Eigen::MatrixXd& X, const Eigen::MatrixXd& A,
                 PathCaches& c) {
  c.phi_out = nn::forward(m.phi_spec, m.phi, X, &c.phi);
  if (m.has_psi) {
    Eigen::MatrixXd h_a =
        m.has_a_encoder ? nn::forward(m.psi_a_spec, m.psi_a, A, &c.psi_a) : A;
    Eigen::MatrixXd joint(X.rows(), h_a.cols() + c.phi_out.cols());
    joint << h_a, c.phi_out;
    c.psi_out = nn::forward(m.psi_spec, m.psi, joint, &c.psi);
    c.cond_out = nn::forward(m.head_u_spec, m.head_u, c.psi_out, &c.head_u);
  }
  c.marg_out = nn::forward(m.head_w_spec, m.head_w, c.phi_out, &c.head_w);
  if (m.het_w) c.het_out = nn::forward(*m.het_spec, *m.het_w, c.phi_out, &c.het);
}

struct Optimizers {
  nn::AdamState phi, psi_a, psi, head_u, head_w, het;
  void init(const TramModel& m, double lr) {
    for (nn::AdamState* s : {&phi, &psi_a, &psi, &head_u, &head_w, &het}) s->lr = lr;
    phi.init(m.phi);
    if (m.has_psi) {
      if (m.has_a_encoder) psi_a.init(m.psi_a);
      psi.init(m.psi);
      head_u.init(m.head_u);
    }
    head_w.init(m.head_w);
    if (m.het_w) het.init(*m.het_w);
  }
};

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& M, const std::vector<int>& idx) {
  Eigen::MatrixXd out(idx.size(), M.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(i) = M.row(idx[i]);
  return out;
}

struct DistillSetup {
  const TramModel* teacher = nullptr;
  double T = 3.0;
  double lambda = 0.5;
  bool on_marginal = false;  // DistillNoPI: distill through the marginal head
  // MSE-trained teachers emit (approximate) class probabilities, not logits;
  // feeding those straight into softmax(·/T) flattens the soft labels to
  // near-uniform. Map them back to logit scale first.
  bool teacher_probs = false;
};

Eigen::MatrixXd as_teacher_logits(const Eigen::MatrixXd& head_out, bool probs) {
  if (!probs) return head_out;
  return head_out.unaryExpr(
      [](double p) { return std::log(std::clamp(p, 1e-6, 1.0)); });
}

// Shared engine behind one-step, two-step and distilled training.
// update_l1 drives (phi, psi_a, psi, head_u) from L1; update_l2 drives
// (head_w, het) from L2 — plus phi when the model has no psi path.
LossCurves run_epochs(TramModel& m, const Dataset& data, const TrainConfig& cfg,
                      bool update_l1, bool update_l2, Optimizers& opt,
                      const DistillSetup* distill, std::uint64_t shuffle_salt) {
  const int n = static_cast<int>(data.X.rows());
  const bool classification = m.task == Task::Classification;
  Eigen::MatrixXd targets =
      classification ? one_hot_targets(data.Y, m.n_classes) : data.Y;

  LossCurves curves;
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Shuffle stream is independent of parameter updates so identical batch
    // schedules are reproducible across training variants.
    Rng shuffle_rng = Rng::derived(cfg.seed, shuffle_salt + epoch);
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(order);
    double epoch_l1 = 0.0, epoch_l2 = 0.0;
    int batches = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int len = std::min(cfg.batch_size, n - start);
      std::vector<int> idx(order.begin() + start, order.begin() + start + len);
      Eigen::MatrixXd Xb = rows_of(data.X, idx);
      Eigen::MatrixXd Ab = rows_of(data.A, idx);
      Eigen::MatrixXd Tb = rows_of(targets, idx);

      PathCaches c;
      forward_all(m, Xb, Ab, c);

      ParamBlock g_phi = ParamBlock::zeros_like(m.phi);
      ParamBlock g_head_w = ParamBlock::zeros_like(m.head_w);

      double l1_val = 0.0, l2_val = 0.0;

      if (update_l1 && m.has_psi) {
        nn::LossResult l1;
        if (distill && !distill->on_marginal) {
          PathCaches tc;
          forward_all(*distill->teacher, Xb, Ab, tc);
          Eigen::MatrixXd soft = as_teacher_logits(tc.cond_out, distill->teacher_probs);
          LossKind kind{LossKind::Distill, distill->T, distill->lambda};
          l1 = nn::loss_and_grad(kind, c.cond_out, Tb, &soft);
        } else {
          l1 = nn::loss_and_grad(cfg.loss_l1, c.cond_out, Tb);
        }
        l1_val = l1.loss;
        if (!std::isfinite(l1_val))
          throw std::runtime_error("train: non-finite L1 at epoch " +
                                   std::to_string(epoch) + " batch " +
                                   std::to_string(start / cfg.batch_size));
        ParamBlock g_psi = ParamBlock::zeros_like(m.psi);
        ParamBlock g_head_u = ParamBlock::zeros_like(m.head_u);
        Eigen::MatrixXd up = cfg.beta * l1.grad;
        Eigen::MatrixXd g_psi_out =
            nn::backward(m.head_u_spec, m.head_u, c.head_u, up, g_head_u);
        Eigen::MatrixXd g_joint =
            nn::backward(m.psi_spec, m.psi, c.psi, g_psi_out, g_psi);
        if (m.has_a_encoder) {
          ParamBlock g_psi_a = ParamBlock::zeros_like(m.psi_a);
          nn::backward(m.psi_a_spec, m.psi_a, c.psi_a,
                       g_joint.leftCols(m.psi_a_spec.output_dim()), g_psi_a);
          opt.psi_a.step(m.psi_a, g_psi_a);
        }
        nn::backward(m.phi_spec, m.phi, c.phi, g_joint.rightCols(c.phi_out.cols()),
                     g_phi);
        opt.head_u.step(m.head_u, g_head_u);
        opt.psi.step(m.psi, g_psi);
      }

      if (update_l2) {
        nn::LossResult l2;
        Eigen::MatrixXd l2_preds = c.marg_out;
        bool het_regression = false;
        if (m.het_w && !classification) {
          het_regression = true;
          l2_preds.conservativeResize(Eigen::NoChange, 2);
          l2_preds.col(1) = c.het_out.col(0);
        }
        if (distill && distill->on_marginal) {
          PathCaches tc;
          forward_all(*distill->teacher, Xb, Ab, tc);
          Eigen::MatrixXd soft = as_teacher_logits(tc.marg_out, distill->teacher_probs);
          LossKind kind{LossKind::Distill, distill->T, distill->lambda};
          l2 = nn::loss_and_grad(kind, c.marg_out, Tb, &soft);
        } else if (het_regression) {
          l2 = nn::loss_and_grad(LossKind{LossKind::GaussianNLL}, l2_preds, Tb);
        } else {
          l2 = nn::loss_and_grad(cfg.loss_l2, c.marg_out, Tb);
        }
        l2_val = l2.loss;
        if (!std::isfinite(l2_val))
          throw std::runtime_error("train: non-finite L2 at epoch " +
                                   std::to_string(epoch) + " batch " +
                                   std::to_string(start / cfg.batch_size));
        Eigen::MatrixXd g_marg =
            het_regression ? Eigen::MatrixXd(l2.grad.col(0)) : l2.grad;
        Eigen::MatrixXd g_phi_from_w =
            nn::backward(m.head_w_spec, m.head_w, c.head_w, g_marg, g_head_w);
        if (m.het_w) {
          ParamBlock g_het = ParamBlock::zeros_like(*m.het_w);
          Eigen::MatrixXd g_het_up;
          if (het_regression) {
            g_het_up = l2.grad.col(1);
          } else {
            // Classification het head: MC logit noise, reparameterized grads.
            g_het_up = Eigen::MatrixXd::Zero(len, m.n_classes);
            Rng noise_rng = Rng::derived(cfg.seed, 0xE70 + epoch * 10007 + start);
            Eigen::MatrixXd sigma = c.het_out.unaryExpr(
                [](double s) { return nn::softplus(s); });
            Eigen::MatrixXd dsig = c.het_out.unaryExpr(
                [](double s) { return 1.0 / (1.0 + std::exp(-s)); });
            const int K = 10;
            Eigen::MatrixXd g_logits = Eigen::MatrixXd::Zero(len, m.n_classes);
            for (int k = 0; k < K; ++k) {
              Eigen::MatrixXd gk(len, m.n_classes);
              for (Eigen::Index i = 0; i < gk.size(); ++i)
                gk(i / m.n_classes, i % m.n_classes) = noise_rng.gaussian();
              Eigen::MatrixXd noisy = c.marg_out + sigma.cwiseProduct(gk);
              auto lk = nn::loss_and_grad(cfg.loss_l2, noisy, Tb);
              g_logits += lk.grad / K;
              g_het_up += lk.grad.cwiseProduct(gk).cwiseProduct(dsig) / K;
            }
            // Replace the clean-logit grad with the MC average.
            g_head_w = ParamBlock::zeros_like(m.head_w);
            g_phi_from_w =
                nn::backward(m.head_w_spec, m.head_w, c.head_w, g_logits, g_head_w);
          }
          nn::backward(*m.het_spec, *m.het_w, c.het, g_het_up, g_het);
          opt.het.step(*m.het_w, g_het);
        }
        // Stop-gradient boundary: phi receives the L2 gradient only for the
        // single-head (no-psi) baseline.
        if (!m.has_psi)
          nn::backward(m.phi_spec, m.phi, c.phi, g_phi_from_w, g_phi);
        opt.head_w.step(m.head_w, g_head_w);
      }

      if (update_l1 && m.has_psi) {
        opt.phi.step(m.phi, g_phi);
      } else if (!m.has_psi && update_l2) {
        opt.phi.step(m.phi, g_phi);
      }

      epoch_l1 += l1_val;
      epoch_l2 += l2_val;
      ++batches;
    }
    curves.l1.push_back(epoch_l1 / batches);
    curves.l2.push_back(epoch_l2 / batches);
  }
  return curves;
}

}  // namespace

LossCurves train_one_step(TramModel& model, const Dataset& data, const TrainConfig& cfg) {
  Optimizers opt;
  opt.init(model, cfg.lr);
  return run_epochs(model, data, cfg, /*update_l1=*/true, /*update_l2=*/true, opt,
                    nullptr, 0x50);
}

LossCurves train_two_step(TramModel& model, const Dataset& data, const TrainConfig& cfg) {
  Optimizers opt;
  opt.init(model, cfg.lr);
  LossCurves step1 = run_epochs(model, data, cfg, true, false, opt, nullptr, 0x50);
  Optimizers opt2;
  opt2.init(model, cfg.lr);
  LossCurves step2 = run_epochs(model, data, cfg, false, true, opt2, nullptr, 0x2500);
  step1.l2 = step2.l2;
  return step1;
}

TramModel train_distilled(const TramModel& teacher, const Dataset& data,
                          const TrainConfig& cfg, double T, double lambda,
                          bool no_pi_variant) {
  if (teacher.task != Task::Classification)
    throw std::runtime_error("train_distilled: classification teachers only");
  std::vector<int> widths = teacher.phi_spec.layer_dims;
  TramModel student =
      no_pi_variant
          ? build_no_pi(teacher.phi_spec.input_dim, teacher.task, teacher.n_classes,
                        widths, Rng::mix(cfg.seed ^ 0xD15))
          : build_tram(teacher.phi_spec.input_dim, teacher.pi_dim,
                       teacher.task, teacher.n_classes, widths,
                       teacher.psi_spec.output_dim(), Rng::mix(cfg.seed ^ 0xD15),
                       /*het=*/false, teacher.has_a_encoder);
  if (student.n_classes != teacher.n_classes)
    throw std::runtime_error("train_distilled: class count mismatch");
  DistillSetup distill{&teacher, T, lambda, no_pi_variant,
                       cfg.loss_l1.type == nn::LossKind::MSE};
  // Distillation is a soft-label cross-entropy method; the student's
  // non-distill head trains with CE even when the teacher used MSE,
  // otherwise the marginal head re-enters the MSE optimization trap the
  // soft labels are supposed to pull it out of.
  TrainConfig scfg = cfg;
  if (scfg.loss_l1.type == nn::LossKind::MSE) scfg.lr = std::min(scfg.lr, 1e-3);
  scfg.loss_l1.type = nn::LossKind::SoftmaxCE;
  scfg.loss_l2.type = nn::LossKind::SoftmaxCE;
  Optimizers opt;
  opt.init(student, scfg.lr);
  run_epochs(student, data, scfg, /*update_l1=*/!no_pi_variant, /*update_l2=*/true, opt,
             &distill, 0x50);
  return student;
}

namespace {

Eigen::MatrixXd marginal_regression_params(const TramModel& m,
                                           const Eigen::MatrixXd& phi_out,
                                           const Eigen::MatrixXd& mu) {
  Eigen::MatrixXd out(mu.rows(), 2);
  out.col(0) = mu.col(0);
  if (m.het_w) {
    Eigen::MatrixXd s = nn::forward(*m.het_spec, *m.het_w, phi_out);
    out.col(1) = s.col(0).unaryExpr(
        [](double v) { return std::max(nn::softplus(v), 1e-6); });
  } else {
    out.col(1).setOnes();
  }
  return out;
}

}  // namespace

Eigen::MatrixXd predict_marginal(const TramModel& model, const Eigen::MatrixXd& X) {
  Eigen::MatrixXd phi_out = nn::forward(model.phi_spec, model.phi, X);
  Eigen::MatrixXd logits = nn::forward(model.head_w_spec, model.head_w, phi_out);
  if (model.task == Task::Regression)
    return marginal_regression_params(model, phi_out, logits);
  if (!model.het_w) return nn::softmax_rows(logits);
  // Diagonal Gaussian logit noise, 100 MC softmax samples, fixed stream so
  // predictions are deterministic.
  Eigen::MatrixXd s = nn::forward(*model.het_spec, *model.het_w, phi_out);
  Eigen::MatrixXd sigma = s.unaryExpr([](double v) { return nn::softplus(v); });
  Rng rng = Rng::derived(0x9E7A11, 0);
  const int K = 100;
  Eigen::MatrixXd probs = Eigen::MatrixXd::Zero(X.rows(), model.n_classes);
  for (int k = 0; k < K; ++k) {
    Eigen::MatrixXd g(X.rows(), model.n_classes);
    for (Eigen::Index i = 0; i < g.rows(); ++i)
      for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = rng.gaussian();
    probs += nn::softmax_rows(logits + sigma.cwiseProduct(g)) / K;
  }
  return probs;
}

Eigen::MatrixXd predict_conditional(const TramModel& model, const Eigen::MatrixXd& X,
                                    const Eigen::MatrixXd& A) {
  if (!model.has_psi) throw std::runtime_error("predict_conditional: model has no psi path");
  PathCaches c;
  forward_all(model, X, A, c);
  if (model.task == Task::Classification) return nn::softmax_rows(c.cond_out);
  Eigen::MatrixXd out(X.rows(), 2);
  out.col(0) = c.cond_out.col(0);
  out.col(1).setOnes();
  return out;
}

Eigen::MatrixXd predict_full_marg(const TramModel& model, const Eigen::MatrixXd& X,
                                  const Eigen::MatrixXd& pi_pool, int S,
                                  std::uint64_t seed) {
  if (pi_pool.rows() == 0) throw std::runtime_error("predict_full_marg: empty pool");
  if (S < 1) throw std::runtime_error("predict_full_marg: S must be >= 1");
  const bool exhaustive = S == pi_pool.rows();
  Rng rng = Rng::derived(seed, 0xF0);
  // Duplicate pool rows (e.g. a binary indicator) share one forward pass.
  std::map<std::vector<double>, int> draw_counts;
  for (int s = 0; s < S; ++s) {
    const Eigen::Index row =
        exhaustive ? s : static_cast<Eigen::Index>(rng.uniform_int(pi_pool.rows()));
    std::vector<double> key(pi_pool.row(row).begin(), pi_pool.row(row).end());
    ++draw_counts[key];
  }
  const int cols = model.task == Task::Classification ? model.n_classes : 2;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(X.rows(), cols);
  Eigen::MatrixXd second = Eigen::MatrixXd::Zero(X.rows(), 1);  // E[mu^2] for regression
  for (const auto& [key, count] : draw_counts) {
    Eigen::RowVectorXd a = Eigen::Map<const Eigen::RowVectorXd>(key.data(), key.size());
    Eigen::MatrixXd p = predict_conditional(model, X, a.replicate(X.rows(), 1));
    const double w = static_cast<double>(count) / S;
    acc += w * p;
    if (model.task == Task::Regression)
      second += w * p.col(0).cwiseProduct(p.col(0));
  }
  if (model.task == Task::Regression) {
    // Mixture of unit-variance components: var = 1 + E[mu^2] - mean^2.
    acc.col(1) = (second.col(0).array() + 1.0 - acc.col(0).array().square()).matrix();
  }
  return acc;
}

Eigen::MatrixXd predict_impute(const TramModel& model, const Eigen::MatrixXd& X,
                               const std::string& mode,
                               const Eigen::MatrixXd* pi_pool) {
  Eigen::RowVectorXd a;
  if (mode == "zero") {
    a = Eigen::RowVectorXd::Zero(model.pi_dim);
  } else if (mode == "mean") {
    if (!pi_pool || pi_pool->rows() == 0)
      throw std::runtime_error("predict_impute: mean mode needs a PI pool");
    a = pi_pool->colwise().mean();
  } else {
    throw std::runtime_error("predict_impute: unknown mode " + mode);
  }
  return predict_conditional(model, X, a.replicate(X.rows(), 1));
}

namespace {

Eigen::MatrixXd probe_features(const TramModel& model, const Eigen::MatrixXd& X) {
  Eigen::MatrixXd phi_out = nn::forward(model.phi_spec, model.phi, X);
  Eigen::MatrixXd F(phi_out.rows(), phi_out.cols() + 1);
  F << phi_out, Eigen::VectorXd::Ones(phi_out.rows());
  return F;
}

}  // namespace

ProbeResult linear_probe(const TramModel& model, const Eigen::MatrixXd& X,
                         const Eigen::MatrixXd& Y, Task task, double l2_penalty) {
  Eigen::MatrixXd F = probe_features(model, X);
  const Eigen::Index p = F.cols();
  ProbeResult res;
  if (task == Task::Regression) {
    Eigen::MatrixXd G = F.transpose() * F;
    for (Eigen::Index i = 0; i + 1 < p; ++i) G(i, i) += l2_penalty;  // intercept free
    Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
      throw std::runtime_error("linear_probe: singular ridge system");
    res.weights = ldlt.solve(F.transpose() * Y.col(0));
    res.train_objective = (F * res.weights - Y.col(0)).squaredNorm() / F.rows();
    return res;
  }
  // Logistic regression, full-batch gradient descent. Plain 1/L steps crawl on
  // these ill-conditioned tanh features, so the step length follows the
  // Barzilai-Borwein rule with a non-monotone (Grippo) backtracking safeguard;
  // the descent direction is always the exact full-batch gradient.
  const double n = static_cast<double>(F.rows());
  const Eigen::VectorXd y = Y.col(0);
  auto objective = [&](const Eigen::VectorXd& th) {
    Eigen::VectorXd z = F * th;
    double l = ((1.0 + (-z.array()).exp()).log() + (1.0 - y.array()) * z.array()).sum() / n;
    return l + 0.5 * (l2_penalty / n) * th.head(p - 1).squaredNorm();
  };
  auto gradient = [&](const Eigen::VectorXd& th) {
    Eigen::VectorXd z = F * th;
    Eigen::VectorXd prob = (1.0 / (1.0 + (-z.array()).exp())).matrix();
    Eigen::VectorXd g = F.transpose() * (prob - y) / n;
    g.head(p - 1) += (l2_penalty / n) * th.head(p - 1);
    return g;
  };
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd grad = gradient(theta);
  double f = objective(theta);
  std::deque<double> recent{f};
  double step;
  {
    // First step from the logistic Lipschitz bound L = sigma_max(F)^2/(4n) + lambda/n.
    Eigen::MatrixXd G = F.transpose() * F;
    Eigen::VectorXd pw = Eigen::VectorXd::Ones(p).normalized();
    for (int i = 0; i < 200; ++i) pw = (G * pw).normalized();
    step = 1.0 / (0.25 * pw.dot(G * pw) / n + l2_penalty / n);
  }
  int it = 0;
  for (; it < 10000; ++it) {
    if (grad.norm() < 1e-6) break;
    const double f_ref = *std::max_element(recent.begin(), recent.end());
    double s = step;
    Eigen::VectorXd theta_new;
    double f_new = f;
    for (int k = 0; k < 60; ++k) {
      theta_new = theta - s * grad;
      f_new = objective(theta_new);
      if (f_new <= f_ref - 1e-4 * s * grad.squaredNorm()) break;
      s *= 0.5;
    }
    Eigen::VectorXd grad_new = gradient(theta_new);
    Eigen::VectorXd dth = theta_new - theta;
    Eigen::VectorXd dg = grad_new - grad;
    const double sy = dth.dot(dg);
    step = (sy > 1e-300 && std::isfinite(sy)) ? dth.squaredNorm() / sy : s;
    theta = theta_new;
    grad = grad_new;
    f = f_new;
    recent.push_back(f);
    if (recent.size() > 10) recent.pop_front();
  }
  res.weights = theta;
  res.iterations = it;
  res.train_objective = objective(theta);
  return res;
}

Eigen::VectorXd probe_predict(const TramModel& model, const ProbeResult& probe,
                              const Eigen::MatrixXd& X, Task task) {
  Eigen::MatrixXd F = probe_features(model, X);
  Eigen::VectorXd z = F * probe.weights;
  if (task == Task::Regression) return z;
  return (1.0 / (1.0 + (-z.array()).exp())).matrix();
}

RunResult evaluate(PredictorKind kind, const Eigen::MatrixXd& dist_params,
                   const Eigen::MatrixXd& Y, Task task,
                   const Eigen::VectorXd* reference) {
  RunResult res;
  res.predictor = kind;
  const Eigen::Index n = dist_params.rows();
  if (task == Task::Classification) {
    double nll = 0.0;
    int correct = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int label = static_cast<int>(Y(i, 0));
      nll -= std::log(std::max(dist_params(i, label), 1e-12));
      Eigen::Index argmax;
      dist_params.row(i).maxCoeff(&argmax);
      if (argmax == label) ++correct;
    }
    res.nll = nll / n;
    res.accuracy = static_cast<double>(correct) / n;
  } else {
    double nll = 0.0;
    constexpr double kLog2Pi = 1.8378770664093453;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mu = dist_params(i, 0);
      const double var = dist_params(i, 1);
      const double r = Y(i, 0) - mu;
      nll += 0.5 * (kLog2Pi + std::log(var)) + 0.5 * r * r / var;
    }
    res.nll = nll / n;
    if (reference)
      res.rmse_to_reference =
          std::sqrt((dist_params.col(0) - *reference).squaredNorm() / n);
  }
  return res;
}

Eigen::MatrixXd one_hot_targets(const Eigen::MatrixXd& Y, int n_classes) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(Y.rows(), n_classes);
  for (Eigen::Index i = 0; i < Y.rows(); ++i)
    out(i, static_cast<int>(Y(i, 0))) = 1.0;
  return out;
}

}  // namespace tram::model
