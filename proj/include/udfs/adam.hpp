#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "udfs/errors.hpp"
#include "udfs/tensor.hpp"

namespace udfs {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamStateT {
  int64_t step = 0;
  std::vector<std::vector<T>> m;  // first moments, one buffer per parameter
  std::vector<std::vector<T>> v;  // second moments
};

// Standard Adam with bias correction. Reads each parameter's accumulated
// grad; a parameter with an all-zero grad is left unchanged except for the
// shared step counter. Per-element arithmetic in double, stored back as T.
template <typename T>
void adam_step(std::vector<TensorT<T>>& params, AdamStateT<T>& state, const AdamConfig& cfg) {
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
    for (size_t p = 0; p < params.size(); ++p) {
      state.m[p].assign(params[p].numel(), T(0));
      state.v[p].assign(params[p].numel(), T(0));
    }
  }
  state.step++;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t p = 0; p < params.size(); ++p) {
    auto& value = params[p].data();
    auto& grad = params[p].grad();
    auto& m = state.m[p];
    auto& v = state.v[p];
    if (m.size() != value.size())
      throw ShapeMismatch("adam_step: state size " + std::to_string(m.size()) + " vs param " +
                          std::to_string(value.size()));
    for (size_t i = 0; i < value.size(); ++i) {
      const double g = static_cast<double>(grad[i]);
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      value[i] = static_cast<T>(static_cast<double>(value[i]) -
                                cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

using AdamState = AdamStateT<float>;

}  // namespace udfs
