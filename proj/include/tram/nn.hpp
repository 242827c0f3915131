#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace tram::nn {

enum class Activation { Identity, Tanh, Relu, Sigmoid, Softplus };

Activation activation_from_string(const std::string& s);

struct MLPSpec {
  int input_dim = 0;
  std::vector<int> layer_dims;          // output width per layer
  std::vector<Activation> activations;  // one per layer
  std::uint64_t init_seed = 0;

  int output_dim() const { return layer_dims.empty() ? input_dim : layer_dims.back(); }
};

struct NamedTensor {
  std::string name;
  Eigen::MatrixXd value;
};

// Named weight/bias collection with a flat view for optimizers and
// finite-difference checks.
struct ParamBlock {
  std::vector<NamedTensor> tensors;

  Eigen::MatrixXd& at(const std::string& name);
  const Eigen::MatrixXd& at(const std::string& name) const;
  std::size_t scalar_count() const;
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& flat);
  void set_zero();
  static ParamBlock zeros_like(const ParamBlock& other);
};

// Glorot-uniform weights, zero biases. Blocks named W0,b0,W1,b1,...
ParamBlock mlp_init(const MLPSpec& spec);

struct ForwardCache {
  Eigen::MatrixXd input;
  std::vector<Eigen::MatrixXd> pre;   // pre-activation per layer
  std::vector<Eigen::MatrixXd> post;  // post-activation per layer
};

// Rows of X are examples. Cache may be null for inference.
Eigen::MatrixXd forward(const MLPSpec& spec, const ParamBlock& params,
                        const Eigen::MatrixXd& X, ForwardCache* cache = nullptr);

// Accumulates parameter gradients into `grads` (+=) and returns d loss / d input.
// The stop-gradient boundary is realized by the caller discarding this return.
Eigen::MatrixXd backward(const MLPSpec& spec, const ParamBlock& params,
                         const ForwardCache& cache, const Eigen::MatrixXd& upstream,
                         ParamBlock& grads);

// Identity in value; the gradient boundary lives in how training loops compose
// backward calls (see tram_model training).
inline Eigen::MatrixXd stop_gradient(const Eigen::MatrixXd& v) { return v; }

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-7;
  long t = 0;
  ParamBlock m, v;

  void init(const ParamBlock& params);
  // Throws std::runtime_error naming the offending tensor on non-finite grads.
  void step(ParamBlock& params, const ParamBlock& grads);
};

struct LossKind {
  enum Type { MSE, SoftmaxCE, GaussianNLL, Distill } type = MSE;
  double T = 3.0;      // Distill temperature
  double lambda = 0.5; // Distill soft/hard mixing
};

struct LossResult {
  double loss = 0.0;
  Eigen::MatrixXd grad;  // d loss / d predictions
};

// predictions: MSE n×k; SoftmaxCE/Distill n×C logits (targets one-hot);
// GaussianNLL n×2 columns (mu, raw s) with targets n×1.
// aux: teacher logits for Distill, else ignored.
LossResult loss_and_grad(const LossKind& kind, const Eigen::MatrixXd& predictions,
                         const Eigen::MatrixXd& targets,
                         const Eigen::MatrixXd* aux = nullptr);

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);
double softplus(double x);

// Flat little-endian float64 payload behind a text header of names and shapes.
void save_params(const ParamBlock& params, const std::string& path);
ParamBlock load_params(const std::string& path);

}  // namespace tram::nn
