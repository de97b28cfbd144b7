#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gmae/tensor.hpp"

namespace gmae {

/// A named learnable tensor. `decay` is false for biases, layer-norm
/// parameters and embedding/bias tables.
struct Parameter {
  std::string name;
  Tensor tensor;
  bool decay = true;
};

using ParamList = std::vector<Parameter>;

inline void zero_grads(std::span<Parameter> params) {
  for (auto& p : params) p.tensor.zero_grad();
}

inline std::size_t count_parameters(std::span<const Parameter> params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.size();
  return n;
}

/// Rescales gradients so their global L2 norm is at most max_norm. Returns the
/// norm before clipping.
inline double clip_grad_norm(std::span<Parameter> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / (norm + 1e-12);
    for (auto& p : params)
      if (p.tensor.has_grad())
        for (double& g : p.tensor.mutable_grad()) g *= s;
  }
  return norm;
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// First/second moment buffers (one pair per parameter, same order) and the
/// number of steps taken.
struct OptimizerState {
  AdamWConfig hyper;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One AdamW update with decoupled weight decay and bias-corrected moments.
/// Parameters without a materialized gradient are left untouched.
inline void adamw_step(std::span<Parameter> params, OptimizerState& state, double lr) {
  if (state.m.size() != params.size()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
  }
  ++state.step;
  const auto& h = state.hyper;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    if (!p.tensor.has_grad()) continue;
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != p.tensor.size()) {
      m.assign(p.tensor.size(), 0.0);
      v.assign(p.tensor.size(), 0.0);
    }
    const auto g = p.tensor.grad();
    auto x = p.tensor.data();
    const double decay = p.decay ? lr * h.weight_decay : 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (decay != 0.0) x[i] -= decay * x[i];
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      x[i] -= lr * mhat / (std::sqrt(vhat) + h.eps);
    }
  }
}

}  // namespace gmae
