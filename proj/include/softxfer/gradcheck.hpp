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

#ifndef SOFTXFER_GRADCHECK_HPP_
#define SOFTXFER_GRADCHECK_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "softxfer/autodiff.hpp"
#include "softxfer/tensor.hpp"

namespace softxfer {

struct GradCheckResult {
  bool passed = false;
  double max_rel_error = 0.0;
};

// Scalar function built on a tape from a single differentiable input.
using GraphFn = std::function<Var<double>(Tape<double>&, const Var<double>&)>;

inline double evaluate_graph(const GraphFn& f, const Tensor<double>& x) {
  Tape<double> tape;
  return f(tape, tape.constant(x)).value()[0];
}

inline Tensor<double> autodiff_gradient(const GraphFn& f,
                                        const Tensor<double>& x) {
  Tape<double> tape;
  Var<double> xv = tape.variable(x);
  Var<double> y = f(tape, xv);
  require(y.value().size() == 1, "gradient check: function must be scalar");
  tape.backward(y);
  return tape.grad(xv);
}

// Compares `analytic` against central differences of `value_fn`. The error
// of each coordinate is taken relative to the largest gradient magnitude seen
// on either side, so near-zero coordinates do not dominate.
inline GradCheckResult compare_with_central_differences(
    const std::function<double(const Tensor<double>&)>& value_fn,
    const Tensor<double>& analytic, const Tensor<double>& x, double tolerance,
    double h = 1e-5) {
  require(analytic.shape() == x.shape(), "gradient check: shape mismatch");
  require(x.all_finite(), "gradient check: non-finite input");
  Tensor<double> numeric(x.shape(), 0.0);
  Tensor<double> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = value_fn(probe);
    probe[i] = x[i] - h;
    const double down = value_fn(probe);
    probe[i] = x[i];
    numeric[i] = (up - down) / (2 * h);
  }
  double scale = 1e-12;
  for (std::size_t i = 0; i < x.size(); ++i) {
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / scale);
  }
  return {worst < tolerance, worst};
}

inline GradCheckResult finite_diff_check(const GraphFn& f,
                                         const Tensor<double>& x,
                                         double tolerance, double h = 1e-5) {
  const Tensor<double> analytic = autodiff_gradient(f, x);
  return compare_with_central_differences(
      [&f](const Tensor<double>& p) { return evaluate_graph(f, p); }, analytic,
      x, tolerance, h);
}

// One flattened gradient per example, each from its own backward pass.
// `loss_fn(tape, bound_params, example)` must return a scalar.
template <class T, class Example, class LossFn>
std::vector<std::vector<T>> per_example_grads(
    LossFn&& loss_fn, std::span<const Example> examples,
    std::span<const Tensor<T>* const> params) {
  require(!examples.empty(), "per_example_grads: empty example sequence");
  std::size_t total = 0;
  for (const Tensor<T>* p : params) total += p->size();
  std::vector<std::vector<T>> out;
  out.reserve(examples.size());
  for (const Example& ex : examples) {
    Tape<T> tape;
    std::vector<Var<T>> bound;
    bound.reserve(params.size());
    for (const Tensor<T>* p : params) bound.push_back(tape.parameter(*p));
    Var<T> loss = loss_fn(tape, std::span<const Var<T>>(bound), ex);
    tape.backward(loss);
    std::vector<T> flat;
    flat.reserve(total);
    for (const Var<T>& v : bound) {
      const Tensor<T>& g = tape.grad(v);
      flat.insert(flat.end(), g.values().begin(), g.values().end());
    }
    out.push_back(std::move(flat));
  }
  return out;
}

}  // namespace softxfer

#endif  // SOFTXFER_GRADCHECK_HPP_
