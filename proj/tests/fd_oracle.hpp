#pragma once

// Central finite-difference oracle for network gradients. Perturbs each
// parameter in place and re-evaluates the loss through a plain forward pass,
// so it shares nothing with the backprop path except the forward pass.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "dpil/nn.hpp"

namespace dpil::testing {

inline std::vector<double> flatten(const nn::ParamSet& p) {
  std::vector<double> out;
  nn::for_each_scalar(p, [&](double v) { out.push_back(v); });
  return out;
}

/// Numerical gradient of `objective(net)` w.r.t. every parameter.
inline std::vector<double> finite_difference_gradient(nn::Mlp net, const std::function<double(const nn::Mlp&)>& objective,
                                                      double step = 1e-5) {
  std::vector<double*> slots;
  nn::for_each_scalar(net.mutable_params(), [&](double& v) { slots.push_back(&v); });
  std::vector<double> g(slots.size());
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const double orig = *slots[k];
    *slots[k] = orig + step;
    const double up = objective(net);
    *slots[k] = orig - step;
    const double down = objective(net);
    *slots[k] = orig;
    g[k] = (up - down) / (2.0 * step);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||, floor)
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-8) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    diff += (a[k] - b[k]) * (a[k] - b[k]);
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

/// One randomized gradient check: a net with 1-3 layers of width 1-8, random
/// activations, optional hidden batch norm (train-mode batch statistics),
/// squared-error loss against random targets on a batch of 4. Returns the
/// relative error between backprop and central differences.
inline double random_gradient_check(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> n_layers(1, 3), width(1, 8), act(0, 2);
  std::bernoulli_distribution coin(0.5);
  nn::MlpConfig cfg;
  const int layers = n_layers(rng);
  cfg.layer_dims.push_back(width(rng));
  for (int l = 0; l < layers; ++l) {
    cfg.layer_dims.push_back(width(rng));
    cfg.activations.push_back(static_cast<nn::Activation>(act(rng)));
    cfg.batch_norm.push_back(l + 1 < layers && coin(rng));
  }
  nn::Mlp net(cfg, rng);
  const Eigen::Index batch = 4;
  Eigen::MatrixXd x(net.input_dim(), batch), target(net.output_dim(), batch);
  std::normal_distribution<double> n01;
  for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = n01(rng);
  for (Eigen::Index k = 0; k < target.size(); ++k) target.data()[k] = n01(rng);

  auto loss = [&](const Eigen::MatrixXd& out) { return nn::squared_error(out, target); };
  auto analytic = nn::mlp_gradient(net, loss, x, nn::Mode::Train);
  auto numeric = finite_difference_gradient(net, [&](const nn::Mlp& m) {
    return nn::squared_error(m.forward(x, nn::Mode::Train), target).value();
  });
  return relative_error(flatten(analytic.grads), numeric);
}

}  // namespace dpil::testing
