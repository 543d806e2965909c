#pragma once

// Small dense feed-forward networks with exact backpropagation and Adam.
// Batches are stored column-wise: a batch of N inputs of dimension d is a
// d x N matrix.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dpil/error.hpp"
#include "dpil/io.hpp"
#include "dpil/random.hpp"

namespace dpil::nn {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Activation { ReLU, Tanh, Identity };
enum class Mode { Train, Eval };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
  }
  return "identity";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "tanh") return Activation::Tanh;
  if (s == "identity") return Activation::Identity;
  throw InvalidInput("unknown activation: " + s);
}

struct LayerParams {
  MatrixXd weight;  // out x in
  VectorXd bias;
  VectorXd bn_scale;  // empty when the layer has no batch norm
  VectorXd bn_shift;
};

/// Parameters (or gradients, or optimizer moments) of a whole network.
using ParamSet = std::vector<LayerParams>;

inline ParamSet zeros_like(const ParamSet& p) {
  ParamSet z(p.size());
  for (std::size_t l = 0; l < p.size(); ++l) {
    z[l].weight = MatrixXd::Zero(p[l].weight.rows(), p[l].weight.cols());
    z[l].bias = VectorXd::Zero(p[l].bias.size());
    z[l].bn_scale = VectorXd::Zero(p[l].bn_scale.size());
    z[l].bn_shift = VectorXd::Zero(p[l].bn_shift.size());
  }
  return z;
}

inline bool same_shape(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t l = 0; l < a.size(); ++l) {
    if (a[l].weight.rows() != b[l].weight.rows() || a[l].weight.cols() != b[l].weight.cols() ||
        a[l].bias.size() != b[l].bias.size() || a[l].bn_scale.size() != b[l].bn_scale.size() ||
        a[l].bn_shift.size() != b[l].bn_shift.size())
      return false;
  }
  return true;
}

/// Visits every scalar in layer order: weight (column-major), bias, scale, shift.
template <typename P, typename Fn>
void for_each_scalar(P& params, Fn&& fn) {
  for (auto& layer : params) {
    for (Index k = 0; k < layer.weight.size(); ++k) fn(layer.weight.data()[k]);
    for (Index k = 0; k < layer.bias.size(); ++k) fn(layer.bias[k]);
    for (Index k = 0; k < layer.bn_scale.size(); ++k) fn(layer.bn_scale[k]);
    for (Index k = 0; k < layer.bn_shift.size(); ++k) fn(layer.bn_shift[k]);
  }
}

inline bool all_finite(const ParamSet& p) {
  bool ok = true;
  for_each_scalar(p, [&](double v) { ok = ok && std::isfinite(v); });
  return ok;
}

inline std::size_t parameter_count(const ParamSet& p) {
  std::size_t n = 0;
  for_each_scalar(p, [&](double) { ++n; });
  return n;
}

/// Elementwise a += s * b.
inline void axpy(ParamSet& a, double s, const ParamSet& b) {
  for (std::size_t l = 0; l < a.size(); ++l) {
    a[l].weight += s * b[l].weight;
    a[l].bias += s * b[l].bias;
    a[l].bn_scale += s * b[l].bn_scale;
    a[l].bn_shift += s * b[l].bn_shift;
  }
}

struct MlpConfig {
  std::vector<int> layer_dims;          // input dim followed by each layer's output dim
  std::vector<Activation> activations;  // one per layer
  double dropout_rate = 0.0;            // hidden layers only, train mode only
  std::vector<bool> batch_norm;         // one per layer, or empty for none
};

/// Convenience: hidden layers share one activation, output layer is Identity.
inline MlpConfig dense_config(std::vector<int> dims, Activation hidden, double dropout = 0.0,
                              bool hidden_batch_norm = false) {
  MlpConfig cfg;
  cfg.layer_dims = std::move(dims);
  const std::size_t n = cfg.layer_dims.empty() ? 0 : cfg.layer_dims.size() - 1;
  for (std::size_t l = 0; l < n; ++l) {
    const bool last = l + 1 == n;
    cfg.activations.push_back(last ? Activation::Identity : hidden);
    cfg.batch_norm.push_back(!last && hidden_batch_norm);
  }
  cfg.dropout_rate = dropout;
  return cfg;
}

/// Forward-pass cache needed by backprop.
struct Tape {
  Mode mode = Mode::Eval;
  std::vector<MatrixXd> inputs;      // layer input
  std::vector<MatrixXd> normalized;  // batch-normalized pre-activation (x_hat)
  std::vector<VectorXd> inv_std;     // batch-norm 1/sqrt(var + eps) used
  std::vector<VectorXd> batch_mean;
  std::vector<VectorXd> batch_var;
  std::vector<MatrixXd> activated;  // post-activation, pre-dropout
  std::vector<MatrixXd> dropout_mask;
};

class Mlp {
 public:
  static constexpr double kBatchNormMomentum = 0.9;
  static constexpr double kBatchNormEps = 1e-5;

  Mlp() = default;

  /// Weights and biases drawn uniformly from [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  Mlp(MlpConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    validate_config();
    const std::size_t n = num_layers();
    params_.resize(n);
    running_mean_.resize(n);
    running_var_.resize(n);
    for (std::size_t l = 0; l < n; ++l) {
      const int in = cfg_.layer_dims[l];
      const int out = cfg_.layer_dims[l + 1];
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      std::uniform_real_distribution<double> u(-bound, bound);
      auto& p = params_[l];
      p.weight.resize(out, in);
      for (Index k = 0; k < p.weight.size(); ++k) p.weight.data()[k] = u(rng);
      p.bias.resize(out);
      for (Index k = 0; k < out; ++k) p.bias[k] = u(rng);
      if (has_batch_norm(l)) {
        p.bn_scale = VectorXd::Ones(out);
        p.bn_shift = VectorXd::Zero(out);
        running_mean_[l] = VectorXd::Zero(out);
        running_var_[l] = VectorXd::Ones(out);
      }
    }
  }

  Mlp(MlpConfig cfg, ParamSet params, std::vector<VectorXd> running_mean,
      std::vector<VectorXd> running_var)
      : cfg_(std::move(cfg)),
        params_(std::move(params)),
        running_mean_(std::move(running_mean)),
        running_var_(std::move(running_var)) {
    validate_config();
    detail::require(params_.size() == num_layers(), "mlp: parameter count does not match layers");
    for (std::size_t l = 0; l < num_layers(); ++l) {
      const auto& p = params_[l];
      detail::require(p.weight.rows() == cfg_.layer_dims[l + 1] && p.weight.cols() == cfg_.layer_dims[l] &&
                          p.bias.size() == cfg_.layer_dims[l + 1],
                      "mlp: layer " + std::to_string(l) + " parameter shape mismatch");
    }
  }

  std::size_t num_layers() const { return cfg_.layer_dims.size() - 1; }
  Index input_dim() const { return cfg_.layer_dims.front(); }
  Index output_dim() const { return cfg_.layer_dims.back(); }
  const MlpConfig& config() const { return cfg_; }
  const ParamSet& params() const { return params_; }
  ParamSet& mutable_params() { return params_; }
  const std::vector<VectorXd>& running_mean() const { return running_mean_; }
  const std::vector<VectorXd>& running_var() const { return running_var_; }

  bool has_batch_norm(std::size_t l) const { return !cfg_.batch_norm.empty() && cfg_.batch_norm[l]; }

  /// Single-input forward pass. Eval mode is a pure function of (net, x).
  VectorXd apply(const VectorXd& x, Mode mode, Rng* rng = nullptr) const {
    return forward(x, mode, rng).col(0);
  }

  MatrixXd forward(const MatrixXd& x, Mode mode, Rng* rng = nullptr) const {
    Tape tape;
    return forward(x, mode, rng, tape);
  }

  MatrixXd forward(const MatrixXd& x, Mode mode, Rng* rng, Tape& tape) const {
    if (x.rows() != input_dim())
      throw InvalidInput("mlp: input dimension " + std::to_string(x.rows()) + " != " +
                         std::to_string(input_dim()));
    const bool use_dropout = mode == Mode::Train && cfg_.dropout_rate > 0.0;
    if (use_dropout && rng == nullptr) throw InvalidInput("mlp: train-mode dropout requires an rng");
    const std::size_t n = num_layers();
    tape = Tape{};
    tape.mode = mode;
    tape.inputs.resize(n);
    tape.normalized.resize(n);
    tape.inv_std.resize(n);
    tape.batch_mean.resize(n);
    tape.batch_var.resize(n);
    tape.activated.resize(n);
    tape.dropout_mask.resize(n);

    MatrixXd h = x;
    for (std::size_t l = 0; l < n; ++l) {
      const auto& p = params_[l];
      tape.inputs[l] = h;
      MatrixXd z = p.weight * h;
      z.colwise() += p.bias;
      if (has_batch_norm(l)) {
        VectorXd mean, var;
        if (mode == Mode::Train) {
          mean = z.rowwise().mean();
          var = (z.colwise() - mean).array().square().rowwise().mean();
        } else {
          mean = running_mean_[l];
          var = running_var_[l];
        }
        VectorXd inv = (var.array() + kBatchNormEps).rsqrt();
        MatrixXd xhat = (z.colwise() - mean).array().colwise() * inv.array();
        z = (xhat.array().colwise() * p.bn_scale.array()).colwise() + p.bn_shift.array();
        tape.normalized[l] = std::move(xhat);
        tape.inv_std[l] = std::move(inv);
        tape.batch_mean[l] = std::move(mean);
        tape.batch_var[l] = std::move(var);
      }
      switch (cfg_.activations[l]) {
        case Activation::ReLU: z = z.cwiseMax(0.0); break;
        case Activation::Tanh: z = z.array().tanh(); break;
        case Activation::Identity: break;
      }
      tape.activated[l] = z;
      if (use_dropout && l + 1 < n) {
        const double keep = 1.0 - cfg_.dropout_rate;
        std::bernoulli_distribution b(keep);
        MatrixXd mask(z.rows(), z.cols());
        for (Index k = 0; k < mask.size(); ++k) mask.data()[k] = b(*rng) ? 1.0 / keep : 0.0;
        z.array() *= mask.array();
        tape.dropout_mask[l] = std::move(mask);
      }
      h = std::move(z);
    }
    return h;
  }

  /// Gradients of a scalar objective whose gradient w.r.t. the network
  /// outputs is `grad_out` (same shape as the forward output).
  ParamSet backward(const Tape& tape, const MatrixXd& grad_out, MatrixXd* grad_input = nullptr) const {
    const std::size_t n = num_layers();
    ParamSet grads(n);
    MatrixXd g = grad_out;
    for (std::size_t l = n; l-- > 0;) {
      const auto& p = params_[l];
      if (tape.dropout_mask[l].size() > 0) g.array() *= tape.dropout_mask[l].array();
      switch (cfg_.activations[l]) {
        case Activation::ReLU: g.array() *= (tape.activated[l].array() > 0.0).cast<double>(); break;
        case Activation::Tanh: g.array() *= 1.0 - tape.activated[l].array().square(); break;
        case Activation::Identity: break;
      }
      if (has_batch_norm(l)) {
        const MatrixXd& xhat = tape.normalized[l];
        grads[l].bn_scale = (g.array() * xhat.array()).rowwise().sum();
        grads[l].bn_shift = g.rowwise().sum();
        MatrixXd dxhat = g.array().colwise() * p.bn_scale.array();
        if (tape.mode == Mode::Train) {
          const double m = static_cast<double>(g.cols());
          VectorXd sum_d = dxhat.rowwise().sum();
          VectorXd sum_dx = (dxhat.array() * xhat.array()).rowwise().sum();
          MatrixXd centered = (dxhat * m).colwise() - sum_d;
          centered -= (xhat.array().colwise() * sum_dx.array()).matrix();
          g = (centered.array().colwise() * (tape.inv_std[l].array() / m)).matrix();
        } else {
          g = (dxhat.array().colwise() * tape.inv_std[l].array()).matrix();
        }
      }
      grads[l].weight = g * tape.inputs[l].transpose();
      grads[l].bias = g.rowwise().sum();
      if (l > 0 || grad_input != nullptr) g = p.weight.transpose() * g;
    }
    if (grad_input != nullptr) *grad_input = std::move(g);
    return grads;
  }

  /// Folds the batch statistics of a train-mode pass into the running
  /// estimates: running = momentum * running + (1 - momentum) * batch.
  void commit_batch_stats(const Tape& tape) {
    if (tape.mode != Mode::Train) return;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      if (!has_batch_norm(l)) continue;
      running_mean_[l] = kBatchNormMomentum * running_mean_[l] + (1.0 - kBatchNormMomentum) * tape.batch_mean[l];
      running_var_[l] = kBatchNormMomentum * running_var_[l] + (1.0 - kBatchNormMomentum) * tape.batch_var[l];
    }
  }

 private:
  void validate_config() const {
    detail::require(cfg_.layer_dims.size() >= 2, "mlp: need at least one layer");
    for (int d : cfg_.layer_dims) detail::require(d > 0, "mlp: layer dimensions must be positive");
    detail::require(cfg_.activations.size() == cfg_.layer_dims.size() - 1, "mlp: one activation per layer");
    detail::require(cfg_.batch_norm.empty() || cfg_.batch_norm.size() == cfg_.layer_dims.size() - 1,
                    "mlp: batch_norm flags must be per layer");
    detail::require(cfg_.dropout_rate >= 0.0 && cfg_.dropout_rate < 1.0, "mlp: dropout_rate must be in [0,1)");
  }

  MlpConfig cfg_;
  ParamSet params_;
  std::vector<VectorXd> running_mean_;
  std::vector<VectorXd> running_var_;
};

/// Value of a batch-mean loss, the per-sample terms, and the gradient of the
/// batch mean w.r.t. the network outputs.
struct LossEval {
  VectorXd per_sample;
  MatrixXd grad;
  double value() const { return per_sample.size() ? per_sample.mean() : 0.0; }
};

using BatchLoss = std::function<LossEval(const MatrixXd& outputs)>;

struct GradientResult {
  double loss = 0.0;
  ParamSet grads;
};

/// Exact gradients of the mean batch loss. Train mode draws dropout masks
/// from `rng` and uses batch statistics for batch norm.
inline GradientResult mlp_gradient(const Mlp& net, const BatchLoss& loss, const MatrixXd& batch,
                                   Mode mode = Mode::Eval, Rng* rng = nullptr, Tape* tape_out = nullptr) {
  if (batch.cols() == 0) throw InvalidInput("mlp_gradient: empty batch");
  Tape tape;
  MatrixXd out = net.forward(batch, mode, rng, tape);
  LossEval le = loss(out);
  for (Index k = 0; k < le.per_sample.size(); ++k)
    if (!std::isfinite(le.per_sample[k])) throw NumericalError("mlp_gradient: non-finite loss", k);
  GradientResult r{le.value(), net.backward(tape, le.grad)};
  if (tape_out != nullptr) *tape_out = std::move(tape);
  return r;
}

/// mean_j ||out_j - target_j||^2 (no 1/2 factor).
inline LossEval squared_error(const MatrixXd& out, const MatrixXd& target) {
  const double n = static_cast<double>(out.cols());
  MatrixXd diff = out - target;
  return {diff.colwise().squaredNorm().transpose(), (2.0 / n) * diff};
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  AdamConfig cfg;
  ParamSet m;
  ParamSet v;
  std::int64_t step = 0;

  OptimizerState() = default;
  explicit OptimizerState(AdamConfig c) : cfg(c) {}
};

/// One bias-corrected Adam update of `params` in place.
inline void optimizer_step(OptimizerState& state, ParamSet& params, const ParamSet& grads) {
  if (!same_shape(params, grads)) throw InvalidInput("optimizer_step: gradient shape does not match parameters");
  if (state.m.empty()) {
    state.m = zeros_like(params);
    state.v = zeros_like(params);
  } else if (!same_shape(state.m, params)) {
    throw InvalidInput("optimizer_step: optimizer state shape does not match parameters");
  }
  state.step += 1;
  const auto& c = state.cfg;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(c.beta1, t);
  const double c2 = 1.0 - std::pow(c.beta2, t);
  auto update = [&](auto& p, auto& m, auto& v, const auto& g) {
    if (p.size() == 0) return;
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    p.array() -= c.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + c.epsilon);
  };
  for (std::size_t l = 0; l < params.size(); ++l) {
    update(params[l].weight, state.m[l].weight, state.v[l].weight, grads[l].weight);
    update(params[l].bias, state.m[l].bias, state.v[l].bias, grads[l].bias);
    update(params[l].bn_scale, state.m[l].bn_scale, state.v[l].bn_scale, grads[l].bn_scale);
    update(params[l].bn_shift, state.m[l].bn_shift, state.v[l].bn_shift, grads[l].bn_shift);
  }
  if (!all_finite(params)) throw NumericalError("optimizer_step: non-finite parameter after update", state.step);
}

// ---- serialization -------------------------------------------------------

namespace detail_json {

inline Json vec_to_json(const VectorXd& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

inline VectorXd vec_from_json(const Json& j) {
  auto xs = j.get<std::vector<double>>();
  return Eigen::Map<VectorXd>(xs.data(), static_cast<Index>(xs.size()));
}

}  // namespace detail_json

inline Json mlp_to_json(const Mlp& net) {
  using detail_json::vec_to_json;
  const auto& cfg = net.config();
  Json acts = Json::array();
  for (auto a : cfg.activations) acts.push_back(to_string(a));
  Json layers = Json::array();
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto& p = net.params()[l];
    Json layer;
    // row-major flattening
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(p.weight.size()));
    for (Index r = 0; r < p.weight.rows(); ++r)
      for (Index c = 0; c < p.weight.cols(); ++c) w.push_back(p.weight(r, c));
    layer["weight"] = w;
    layer["bias"] = vec_to_json(p.bias);
    if (net.has_batch_norm(l)) {
      layer["bn_scale"] = vec_to_json(p.bn_scale);
      layer["bn_shift"] = vec_to_json(p.bn_shift);
      layer["running_mean"] = vec_to_json(net.running_mean()[l]);
      layer["running_var"] = vec_to_json(net.running_var()[l]);
    }
    layers.push_back(std::move(layer));
  }
  return Json{{"layer_dims", cfg.layer_dims},
              {"activations", acts},
              {"dropout_rate", cfg.dropout_rate},
              {"batch_norm", cfg.batch_norm},
              {"layers", layers}};
}

inline Mlp mlp_from_json(const Json& j) {
  using detail_json::vec_from_json;
  MlpConfig cfg;
  cfg.layer_dims = j.at("layer_dims").get<std::vector<int>>();
  for (const auto& a : j.at("activations")) cfg.activations.push_back(activation_from_string(a.get<std::string>()));
  cfg.dropout_rate = j.at("dropout_rate").get<double>();
  cfg.batch_norm = j.at("batch_norm").get<std::vector<bool>>();
  const auto& layers = j.at("layers");
  detail::require(layers.size() + 1 == cfg.layer_dims.size(), "mlp checkpoint: layer count mismatch");
  ParamSet params(layers.size());
  std::vector<VectorXd> rm(layers.size()), rv(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const int in = cfg.layer_dims[l];
    const int out = cfg.layer_dims[l + 1];
    auto w = layers[l].at("weight").get<std::vector<double>>();
    detail::require(w.size() == static_cast<std::size_t>(in) * static_cast<std::size_t>(out),
                    "mlp checkpoint: weight size mismatch at layer " + std::to_string(l));
    params[l].weight.resize(out, in);
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) params[l].weight(r, c) = w[static_cast<std::size_t>(r) * in + c];
    params[l].bias = vec_from_json(layers[l].at("bias"));
    if (layers[l].contains("bn_scale")) {
      params[l].bn_scale = vec_from_json(layers[l].at("bn_scale"));
      params[l].bn_shift = vec_from_json(layers[l].at("bn_shift"));
      rm[l] = vec_from_json(layers[l].at("running_mean"));
      rv[l] = vec_from_json(layers[l].at("running_var"));
    }
  }
  return Mlp(std::move(cfg), std::move(params), std::move(rm), std::move(rv));
}

}  // namespace dpil::nn
