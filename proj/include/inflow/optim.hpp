#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "inflow/tensor.hpp"

namespace inflow {

/// Adam hyperparameters. Defaults are the flow training settings: lr 1e-4,
/// beta1 0.8, beta2 0.99 and an exponential learning-rate decay of 2e-5 per step.
struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.8;
  double beta2 = 0.99;
  double eps = 1e-8;
  double decay = 2e-5;
};

/// Moments are kept in double regardless of the parameter type.
struct AdamState {
  AdamConfig config;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;

  /// Learning rate used by the next step.
  double current_lr() const { return config.lr * std::exp(-config.decay * static_cast<double>(t)); }
};

/// One bias-corrected Adam update of every parameter tensor. `params` and
/// `grads` are parallel lists; moment buffers are created on first use.
template <std::floating_point T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads, AdamState& state) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (const Tensor<T>* p : params) {
      state.m.emplace_back(p->size(), 0.0);
      state.v.emplace_back(p->size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: state does not match parameters");

  const auto& c = state.config;
  const double lr = state.current_lr();
  ++state.t;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& p = *params[k];
    const Tensor<T>& g = grads[k];
    if (g.size() != p.size() || state.m[k].size() != p.size()) {
      throw DimensionError("adam_step: gradient " + std::to_string(k) + " has wrong size");
    }
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      const double update = lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c.eps);
      if (update != 0.0) p[i] = static_cast<T>(static_cast<double>(p[i]) - update);
    }
  }
}

/// Central-difference gradient of a scalar function, evaluated in double.
inline std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                            std::vector<double> params, double eps = 1e-4) {
  std::vector<double> grad(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + eps;
    const double up = f(params);
    params[i] = saved - eps;
    const double down = f(params);
    params[i] = saved;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

}  // namespace inflow
