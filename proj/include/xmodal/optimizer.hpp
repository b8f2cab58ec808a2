// Copyright 2026 xmodal authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "xmodal/autograd.hpp"
#include "xmodal/error.hpp"
#include "xmodal/matrix.hpp"

namespace xmodal {

/// Ordered list of named trainable leaves. The order fixes the update and
/// serialization traversal.
template <typename Real>
using ParamRegistry = std::vector<std::pair<std::string, Var<Real>>>;

template <typename Real>
void zero_grads(ParamRegistry<Real>& params) {
  for (auto& [_, v] : params) v.zero_grad();
}

/// Scales all gradients so their global L2 norm is at most max_norm.
/// max_norm <= 0 disables clipping. Returns the pre-clip norm.
template <typename Real>
double clip_global_norm(ParamRegistry<Real>& params, double max_norm) {
  double sq = 0;
  for (auto& [_, v] : params) {
    const auto& g = v.grad();
    for (const Real x : g.storage()) sq += static_cast<double>(x) * static_cast<double>(x);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const Real s = static_cast<Real>(max_norm / norm);
    for (auto& [_, v] : params) {
      for (Real& x : v.grad().storage()) x *= s;
    }
  }
  return norm;
}

/// Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8).
template <typename Real>
struct AdamState {
  struct Slot {
    Matrix<Real> m;
    Matrix<Real> v;
  };
  std::map<std::string, Slot> slots;
  long long t = 0;
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real eps = Real(1e-8);
};

/// One Adam step over the registry at learning rate lr, consuming the
/// accumulated gradients (which are left untouched; callers zero them).
template <typename Real>
void adam_step(ParamRegistry<Real>& params, AdamState<Real>& state, Real lr) {
  state.t += 1;
  const Real bc1 = Real(1) - static_cast<Real>(std::pow(static_cast<double>(state.beta1),
                                                        static_cast<double>(state.t)));
  const Real bc2 = Real(1) - static_cast<Real>(std::pow(static_cast<double>(state.beta2),
                                                        static_cast<double>(state.t)));
  for (auto& [name, var] : params) {
    auto& value = var.mutable_value();
    auto& grad = var.grad();
    if (!grad.same_shape(value)) {
      throw DimensionError("adam_step: grad shape " + grad.shape_str() +
                           " != param shape " + value.shape_str() + " for " + name);
    }
    auto& slot = state.slots[name];
    if (!slot.m.same_shape(value)) {
      slot.m = Matrix<Real>(value.rows(), value.cols(), Real(0));
      slot.v = Matrix<Real>(value.rows(), value.cols(), Real(0));
    }
    for (std::size_t i = 0; i < value.size(); ++i) {
      const Real g = grad.storage()[i];
      slot.m.storage()[i] = state.beta1 * slot.m.storage()[i] + (Real(1) - state.beta1) * g;
      slot.v.storage()[i] = state.beta2 * slot.v.storage()[i] + (Real(1) - state.beta2) * g * g;
      const Real mhat = slot.m.storage()[i] / bc1;
      const Real vhat = slot.v.storage()[i] / bc2;
      value.storage()[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace xmodal
