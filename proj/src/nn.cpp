#include "tram/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "tram/rng.hpp"

namespace tram::nn {

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::Identity;
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "softplus") return Activation::Softplus;
  throw std::runtime_error("unknown activation: " + s);
}

Eigen::MatrixXd& ParamBlock::at(const std::string& name) {
  for (auto& t : tensors)
    if (t.name == name) return t.value;
  throw std::runtime_error("no tensor named " + name);
}

const Eigen::MatrixXd& ParamBlock::at(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw std::runtime_error("no tensor named " + name);
}

std::size_t ParamBlock::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += static_cast<std::size_t>(t.value.size());
  return n;
}

Eigen::VectorXd ParamBlock::flatten() const {
  Eigen::VectorXd flat(scalar_count());
  Eigen::Index k = 0;
  for (const auto& t : tensors) {
    // Column-major flattening matches Eigen's internal layout.
    flat.segment(k, t.value.size()) =
        Eigen::Map<const Eigen::VectorXd>(t.value.data(), t.value.size());
    k += t.value.size();
  }
  return flat;
}

void ParamBlock::unflatten(const Eigen::VectorXd& flat) {
  if (static_cast<std::size_t>(flat.size()) != scalar_count())
    throw std::runtime_error("unflatten: size mismatch");
  Eigen::Index k = 0;
  for (auto& t : tensors) {
    Eigen::Map<Eigen::VectorXd>(t.value.data(), t.value.size()) =
        flat.segment(k, t.value.size());
    k += t.value.size();
  }
}

void ParamBlock::set_zero() {
  for (auto& t : tensors) t.value.setZero();
}

ParamBlock ParamBlock::zeros_like(const ParamBlock& other) {
  ParamBlock out;
  out.tensors.reserve(other.tensors.size());
  for (const auto& t : other.tensors)
    out.tensors.push_back({t.name, Eigen::MatrixXd::Zero(t.value.rows(), t.value.cols())});
  return out;
}

ParamBlock mlp_init(const MLPSpec& spec) {
  if (spec.layer_dims.empty()) throw std::runtime_error("mlp_init: empty layer list");
  if (spec.activations.size() != spec.layer_dims.size())
    throw std::runtime_error("mlp_init: activations/layer_dims length mismatch");
  ParamBlock params;
  Rng rng(Rng::mix(spec.init_seed ^ 0x5eedf00dULL));
  int fan_in = spec.input_dim;
  for (std::size_t l = 0; l < spec.layer_dims.size(); ++l) {
    int fan_out = spec.layer_dims[l];
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Eigen::MatrixXd W(fan_in, fan_out);
    for (Eigen::Index j = 0; j < W.cols(); ++j)
      for (Eigen::Index i = 0; i < W.rows(); ++i) W(i, j) = rng.uniform(-limit, limit);
    params.tensors.push_back({"W" + std::to_string(l), W});
    params.tensors.push_back({"b" + std::to_string(l), Eigen::MatrixXd::Zero(1, fan_out)});
    fan_in = fan_out;
  }
  return params;
}

namespace {

void apply_activation(Activation act, const Eigen::MatrixXd& z, Eigen::MatrixXd& out) {
  switch (act) {
    case Activation::Identity:
      out = z;
      break;
    case Activation::Tanh:
      out = z.array().tanh();
      break;
    case Activation::Relu:
      out = z.array().max(0.0);
      break;
    case Activation::Sigmoid:
      out = 1.0 / (1.0 + (-z.array()).exp());
      break;
    case Activation::Softplus:
      out = z.unaryExpr([](double x) { return softplus(x); });
      break;
  }
}

// d activation / d pre-activation, elementwise, given pre (z) and post (h).
Eigen::MatrixXd activation_grad(Activation act, const Eigen::MatrixXd& z,
                                const Eigen::MatrixXd& h) {
  switch (act) {
    case Activation::Identity:
      return Eigen::MatrixXd::Ones(z.rows(), z.cols());
    case Activation::Tanh:
      return (1.0 - h.array().square()).matrix();
    case Activation::Relu:
      return (z.array() > 0.0).cast<double>().matrix();
    case Activation::Sigmoid:
      return (h.array() * (1.0 - h.array())).matrix();
    case Activation::Softplus:
      return (1.0 / (1.0 + (-z.array()).exp())).matrix();
  }
  return {};
}

}  // namespace

Eigen::MatrixXd forward(const MLPSpec& spec, const ParamBlock& params,
                        const Eigen::MatrixXd& X, ForwardCache* cache) {
  if (X.cols() != spec.input_dim)
    throw std::runtime_error("forward: input width mismatch");
  if (cache) {
    cache->input = X;
    cache->pre.clear();
    cache->post.clear();
  }
  Eigen::MatrixXd h = X;
  for (std::size_t l = 0; l < spec.layer_dims.size(); ++l) {
    const auto& W = params.at("W" + std::to_string(l));
    const auto& b = params.at("b" + std::to_string(l));
    Eigen::MatrixXd z = (h * W).rowwise() + b.row(0);
    Eigen::MatrixXd out;
    apply_activation(spec.activations[l], z, out);
    if (cache) {
      cache->pre.push_back(z);
      cache->post.push_back(out);
    }
    h = std::move(out);
  }
  return h;
}

Eigen::MatrixXd backward(const MLPSpec& spec, const ParamBlock& params,
                         const ForwardCache& cache, const Eigen::MatrixXd& upstream,
                         ParamBlock& grads) {
  const std::size_t L = spec.layer_dims.size();
  if (cache.pre.size() != L) throw std::runtime_error("backward: stale cache");
  Eigen::MatrixXd g = upstream;
  for (std::size_t l = L; l-- > 0;) {
    const Eigen::MatrixXd& z = cache.pre[l];
    const Eigen::MatrixXd& h = cache.post[l];
    g = g.cwiseProduct(activation_grad(spec.activations[l], z, h));
    const Eigen::MatrixXd& below = (l == 0) ? cache.input : cache.post[l - 1];
    grads.at("W" + std::to_string(l)).noalias() += below.transpose() * g;
    grads.at("b" + std::to_string(l)).row(0) += g.colwise().sum();
    g = g * params.at("W" + std::to_string(l)).transpose();
  }
  return g;
}

void AdamState::init(const ParamBlock& params) {
  t = 0;
  m = ParamBlock::zeros_like(params);
  v = ParamBlock::zeros_like(params);
}

void AdamState::step(ParamBlock& params, const ParamBlock& grads) {
  if (m.tensors.empty()) init(params);
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const Eigen::MatrixXd& g = grads.tensors[i].value;
    if (!g.allFinite())
      throw std::runtime_error("adam_step: non-finite gradient in " +
                               params.tensors[i].name);
    Eigen::MatrixXd& mi = m.tensors[i].value;
    Eigen::MatrixXd& vi = v.tensors[i].value;
    mi = beta1 * mi + (1.0 - beta1) * g;
    vi = beta2 * vi.array().matrix() + (1.0 - beta2) * g.cwiseProduct(g);
    params.tensors[i].value.array() -=
        lr * (mi.array() / bc1) / ((vi.array() / bc2).sqrt() + eps_hat);
  }
}

double softplus(double x) {
  // log(1+e^x) computed stably on both tails.
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd shifted = logits.colwise() - logits.rowwise().maxCoeff();
  Eigen::MatrixXd e = shifted.array().exp();
  return e.array().colwise() / e.rowwise().sum().array();
}

namespace {

// Mean-over-rows cross-entropy between row-distributions p and softmax(logits).
double cross_entropy(const Eigen::MatrixXd& p, const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd shifted = logits.colwise() - logits.rowwise().maxCoeff();
  Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log();
  Eigen::MatrixXd logq = shifted.colwise() - lse;
  return -(p.array() * logq.array()).sum() / static_cast<double>(p.rows());
}

}  // namespace

LossResult loss_and_grad(const LossKind& kind, const Eigen::MatrixXd& predictions,
                         const Eigen::MatrixXd& targets, const Eigen::MatrixXd* aux) {
  const double n = static_cast<double>(predictions.rows());
  LossResult res;
  switch (kind.type) {
    case LossKind::MSE: {
      if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols())
        throw std::runtime_error("loss_and_grad: MSE shape mismatch");
      Eigen::MatrixXd diff = predictions - targets;
      const double denom = n * static_cast<double>(predictions.cols());
      res.loss = diff.squaredNorm() / denom;
      res.grad = 2.0 * diff / denom;
      break;
    }
    case LossKind::SoftmaxCE: {
      Eigen::MatrixXd q = softmax_rows(predictions);
      res.loss = cross_entropy(targets, predictions);
      res.grad = (q - targets) / n;
      break;
    }
    case LossKind::GaussianNLL: {
      if (predictions.cols() != 2 || targets.cols() != 1)
        throw std::runtime_error("loss_and_grad: GaussianNLL expects (mu, s) and y");
      res.grad = Eigen::MatrixXd::Zero(predictions.rows(), 2);
      double total = 0.0;
      constexpr double kVarFloor = 1e-6;
      constexpr double kLog2Pi = 1.8378770664093453;
      for (Eigen::Index i = 0; i < predictions.rows(); ++i) {
        const double mu = predictions(i, 0);
        const double s = predictions(i, 1);
        double var = softplus(s);
        double dvar_ds = 1.0 / (1.0 + std::exp(-s));
        if (var < kVarFloor) {
          var = kVarFloor;
          dvar_ds = 0.0;
        }
        const double r = targets(i, 0) - mu;
        total += 0.5 * (kLog2Pi + std::log(var)) + 0.5 * r * r / var;
        res.grad(i, 0) = -r / var / n;
        res.grad(i, 1) = (0.5 / var - 0.5 * r * r / (var * var)) * dvar_ds / n;
      }
      res.loss = total / n;
      break;
    }
    case LossKind::Distill: {
      if (!aux) throw std::runtime_error("loss_and_grad: Distill needs teacher logits");
      const double T = kind.T;
      const double lam = kind.lambda;
      Eigen::MatrixXd pt = softmax_rows(*aux / T);
      Eigen::MatrixXd qs_T = softmax_rows(predictions / T);
      Eigen::MatrixXd qs = softmax_rows(predictions);
      const double soft = cross_entropy(pt, predictions / T) * T * T;
      const double hard = cross_entropy(targets, predictions);
      res.loss = lam * soft + (1.0 - lam) * hard;
      res.grad = (lam * T * (qs_T - pt) + (1.0 - lam) * (qs - targets)) / n;
      break;
    }
  }
  return res;
}

void save_params(const ParamBlock& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_params: cannot open " + path);
  out << "TRAMPB 1\n" << params.tensors.size() << "\n";
  for (const auto& t : params.tensors)
    out << t.name << " " << t.value.rows() << " " << t.value.cols() << "\n";
  out << "DATA\n";
  for (const auto& t : params.tensors) {
    // Eigen stores column-major; dump as-is (little-endian host assumed,
    // asserted by the header magic on load).
    out.write(reinterpret_cast<const char*>(t.value.data()),
              static_cast<std::streamsize>(sizeof(double) * t.value.size()));
  }
}

ParamBlock load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_params: cannot open " + path);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "TRAMPB" || version != 1)
    throw std::runtime_error("load_params: bad header in " + path);
  std::size_t count = 0;
  in >> count;
  ParamBlock params;
  for (std::size_t i = 0; i < count; ++i) {
    std::string name;
    Eigen::Index rows = 0, cols = 0;
    in >> name >> rows >> cols;
    params.tensors.push_back({name, Eigen::MatrixXd(rows, cols)});
  }
  std::string data_tag;
  in >> data_tag;
  if (data_tag != "DATA") throw std::runtime_error("load_params: missing DATA tag");
  in.get();  // trailing newline
  for (auto& t : params.tensors)
    in.read(reinterpret_cast<char*>(t.value.data()),
            static_cast<std::streamsize>(sizeof(double) * t.value.size()));
  if (!in) throw std::runtime_error("load_params: truncated payload in " + path);
  return params;
}

}  // namespace tram::nn
