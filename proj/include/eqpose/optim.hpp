#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "eqpose/autodiff.hpp"

namespace eqpose {

/// Adam moments plus an exponentially decaying learning rate. Moments are
/// kept in the parameter precision so checkpoints restore them exactly.
template <class T>
struct OptimizerState {
  double initial_lr = 5e-4;
  double decay = 0.9995;  // per step
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;

  /// Learning rate used by the next step.
  double lr() const {
    return initial_lr * std::pow(decay, static_cast<double>(step));
  }

  void reset() {
    step = 0;
    m.clear();
    v.clear();
  }
};

/// One Adam update over `params`; clears their grads afterwards.
template <class T>
void adam_step(const std::vector<ad::Tensor<T>*>& params,
               OptimizerState<T>& state) {
  for (const auto* p : params)
    if (!p->has_grad())
      throw ContractViolation("adam_step: parameter '" + p->name +
                              "' has no gradient");
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
  }
  const double lr = state.lr();
  const double t = static_cast<double>(state.step + 1);
  const double bc1 = 1 - std::pow(state.beta1, t);
  const double bc2 = 1 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != p.size()) {
      m.assign(p.size(), T(0));
      v.assign(p.size(), T(0));
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = static_cast<double>(p.grad[i]);
      m[i] = static_cast<T>(state.beta1 * m[i] + (1 - state.beta1) * g);
      v[i] = static_cast<T>(state.beta2 * v[i] + (1 - state.beta2) * g * g);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.data[i] = static_cast<T>(static_cast<double>(p.data[i]) -
                                 lr * mhat / (std::sqrt(vhat) + state.eps));
    }
    p.clear_grad();
  }
  ++state.step;
}

}  // namespace eqpose
