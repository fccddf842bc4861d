//
// Copyright 2026 The softxfer Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#ifndef SOFTXFER_OPTIM_HPP_
#define SOFTXFER_OPTIM_HPP_

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "softxfer/tensor.hpp"

namespace softxfer {

enum class OptimizerKind { kSgd, kAdam };

template <class T>
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  // One moment buffer per parameter tensor, allocated on the first step.
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  std::uint64_t step_count = 0;

  static OptimizerState sgd(double lr) {
    OptimizerState s;
    s.kind = OptimizerKind::kSgd;
    s.learning_rate = lr;
    return s;
  }
  static OptimizerState adam(double lr) {
    OptimizerState s;
    s.kind = OptimizerKind::kAdam;
    s.learning_rate = lr;
    return s;
  }
};

// Applies one update to every tensor in `params` using the matching entry in
// `grads`. Both lists must agree in length and shapes, and must keep the same
// layout across calls on the same state.
template <class T>
void optimizer_step(OptimizerState<T>& state, std::span<Tensor<T>* const> params,
                    std::span<const Tensor<T>> grads) {
  require(state.learning_rate > 0, "optimizer: learning rate must be positive");
  require(params.size() == grads.size(),
          "optimizer: " + std::to_string(params.size()) + " parameters but " +
              std::to_string(grads.size()) + " gradients");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(params[i]->shape() == grads[i].shape(),
            "optimizer: shape mismatch for parameter " + std::to_string(i) +
                ": " + shape_string(params[i]->shape()) + " vs " +
                shape_string(grads[i].shape()));
  }
  const T lr = static_cast<T>(state.learning_rate);
  if (state.kind == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      T* p = params[i]->data();
      const T* g = grads[i].data();
      for (std::size_t j = 0; j < grads[i].size(); ++j) p[j] -= lr * g[j];
    }
    ++state.step_count;
    return;
  }

  if (state.first_moment.empty()) {
    for (const Tensor<T>& g : grads) {
      state.first_moment.emplace_back(g.size(), T(0));
      state.second_moment.emplace_back(g.size(), T(0));
    }
  }
  require(state.first_moment.size() == params.size(),
          "optimizer: parameter list changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(state.first_moment[i].size() == grads[i].size(),
            "optimizer: moment shape mismatch for parameter " + std::to_string(i));
  }

  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const T b1 = static_cast<T>(state.beta1);
  const T b2 = static_cast<T>(state.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(state.beta1, t));
  const T c2 = static_cast<T>(1.0 - std::pow(state.beta2, t));
  const T eps = static_cast<T>(state.eps_adam);
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* p = params[i]->data();
    const T* g = grads[i].data();
    T* m = state.first_moment[i].data();
    T* v = state.second_moment[i].data();
    for (std::size_t j = 0; j < grads[i].size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      const T mhat = m[j] / c1;
      const T vhat = v[j] / c2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template <class T>
void optimizer_step(OptimizerState<T>& state, Tensor<T>& param,
                    const Tensor<T>& grad) {
  Tensor<T>* p[1] = {&param};
  optimizer_step<T>(state, std::span<Tensor<T>* const>(p, 1),
                    std::span<const Tensor<T>>(&grad, 1));
}

}  // namespace softxfer

#endif  // SOFTXFER_OPTIM_HPP_
