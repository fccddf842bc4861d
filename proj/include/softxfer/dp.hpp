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

// Differential privacy pieces: per-example clipping, the Gaussian noise step
// and a Renyi-DP accountant for the Poisson-subsampled Gaussian mechanism
// (Mironov, Talwar and Zhang, 2019).

#ifndef SOFTXFER_DP_HPP_
#define SOFTXFER_DP_HPP_

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "softxfer/rng.hpp"
#include "softxfer/tensor.hpp"

namespace softxfer {

struct DpParams {
  double clip_norm = 1.0;
  double noise_multiplier = 1.0;
  double sample_rate = 0.01;
  long long steps = 0;
  double epsilon = 8.0;
  double delta = 1e-5;

  void validate() const {
    require(clip_norm > 0, "dp: clip norm must be positive");
    require(noise_multiplier > 0, "dp: noise multiplier must be positive");
    require(sample_rate > 0 && sample_rate <= 1, "dp: sample rate must lie in (0, 1]");
    require(steps >= 0, "dp: step count must be nonnegative");
    require(epsilon > 0, "dp: epsilon must be positive");
    require(delta > 0 && delta < 1, "dp: delta must lie in (0, 1)");
  }
};

namespace detail {

template <class T>
double l2_norm(std::span<const T> g) {
  double sq = 0;
  for (T v : g) sq += double(v) * double(v);
  return std::sqrt(sq);
}

}  // namespace detail

// g * min(1, c / ||g||). A zero vector passes through. The result's norm,
// as computed by detail::l2_norm, never exceeds c.
template <class T>
std::vector<T> clip_gradient(std::span<const T> g, double c) {
  require(c > 0, "clip_gradient: clip norm must be positive");
  require_finite<T>(g, "clip_gradient");
  std::vector<T> out(g.begin(), g.end());
  const double norm = detail::l2_norm<T>(g);
  if (norm > c) {
    double s = c / norm;
    for (;;) {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(double(g[i]) * s);
      if (detail::l2_norm<T>(out) <= c) break;
      s *= 1 - 4 * double(std::numeric_limits<T>::epsilon());  // rounding overshoot
    }
  }
  return out;
}

// Clips every per-example gradient to `clip_norm`, sums, adds N(0, (sigma c)^2)
// per coordinate and divides by `expected_batch` (q * N). An empty batch gives
// pure noise. `dim` is required because the batch may be empty.
template <class T>
std::vector<T> privatize_gradients(const std::vector<std::vector<T>>& per_example,
                                   std::size_t dim, double clip_norm, double sigma,
                                   double expected_batch, Rng& rng) {
  require(expected_batch > 0, "privatize: expected batch size must be positive");
  require(sigma >= 0, "privatize: noise multiplier must be nonnegative");
  std::vector<double> sum(dim, 0.0);
  for (const auto& g : per_example) {
    require(g.size() == dim, "privatize: gradient length mismatch");
    const std::vector<T> c = clip_gradient<T>(g, clip_norm);
    require(detail::l2_norm<T>(c) <= clip_norm, "privatize: clipped contribution exceeds the clip norm");
    for (std::size_t i = 0; i < dim; ++i) sum[i] += double(c[i]);
  }
  std::vector<T> out(dim);
  const double std = sigma * clip_norm;
  for (std::size_t i = 0; i < dim; ++i) {
    const double noise = std > 0 ? rng.normal(0.0, std) : 0.0;
    out[i] = static_cast<T>((sum[i] + noise) / expected_batch);
  }
  return out;
}

// Poisson subsampling: each index joins independently with probability q.
inline std::vector<std::size_t> poisson_sample(std::size_t n, double q, Rng& rng) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (rng.bernoulli(q)) out.push_back(i);
  }
  return out;
}

// ---- RDP accountant ---------------------------------------------------------

inline const std::vector<double>& rdp_orders() {
  static const std::vector<double> orders = [] {
    std::vector<double> o{1.25, 1.5};
    for (int a = 2; a <= 64; ++a) o.push_back(a);
    return o;
  }();
  return orders;
}

namespace detail {

inline double log_add(double a, double b) {
  const double m = std::max(a, b);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

// log(exp(a) - exp(b)) for a >= b.
inline double log_sub(double a, double b) {
  if (b == -std::numeric_limits<double>::infinity()) return a;
  if (a <= b) return -std::numeric_limits<double>::infinity();
  return a + std::log1p(-std::exp(b - a));
}

inline double log_erfc(double x) {
  if (x < 25) return std::log(std::erfc(x));
  // Asymptotic expansion; erfc underflows beyond this point.
  const double x2 = x * x;
  return -x2 - std::log(x) - 0.5 * std::log(M_PI) +
         std::log1p(-1 / (2 * x2) + 3 / (4 * x2 * x2) - 15 / (8 * x2 * x2 * x2));
}

// log A_alpha for integer alpha by the binomial expansion.
inline double log_a_int(double q, double sigma, int alpha) {
  double acc = -std::numeric_limits<double>::infinity();
  const double lq = std::log(q), l1q = std::log1p(-q);
  for (int i = 0; i <= alpha; ++i) {
    const double lc = std::lgamma(alpha + 1.0) - std::lgamma(i + 1.0) - std::lgamma(alpha - i + 1.0);
    const double t = lc + i * lq + (alpha - i) * l1q + (double(i) * i - i) / (2 * sigma * sigma);
    acc = log_add(acc, t);
  }
  return acc;
}

// log A_alpha for fractional alpha by the two-sided erfc series.
inline double log_a_frac(double q, double sigma, double alpha) {
  double a0 = -std::numeric_limits<double>::infinity();
  double a1 = a0;
  const double z0 = sigma * sigma * std::log(1 / q - 1) + 0.5;
  const double lq = std::log(q), l1q = std::log1p(-q);
  double log_coef = 0.0;  // log |binom(alpha, i)|
  bool positive = true;
  for (int i = 0; i < 10000; ++i) {
    if (i > 0) {
      const double r = (alpha - (i - 1)) / i;
      if (r == 0) break;
      log_coef += std::log(std::abs(r));
      if (r < 0) positive = !positive;
    }
    const double j = alpha - i;
    const double t0 = log_coef + i * lq + j * l1q;
    const double t1 = log_coef + j * lq + i * l1q;
    const double e0 = std::log(0.5) + log_erfc((i - z0) / (std::sqrt(2.0) * sigma));
    const double e1 = std::log(0.5) + log_erfc((z0 - j) / (std::sqrt(2.0) * sigma));
    const double s0 = t0 + (double(i) * i - i) / (2 * sigma * sigma) + e0;
    const double s1 = t1 + (j * j - j) / (2 * sigma * sigma) + e1;
    if (positive) {
      a0 = log_add(a0, s0);
      a1 = log_add(a1, s1);
    } else {
      a0 = log_sub(a0, s0);
      a1 = log_sub(a1, s1);
    }
    if (std::max(s0, s1) < -30) break;
  }
  return log_add(a0, a1);
}

}  // namespace detail

// Per-step Renyi divergence of order `alpha` for sampling rate q and noise
// multiplier sigma.
inline double rdp_subsampled_gaussian(double q, double sigma, double alpha) {
  require(alpha > 1, "rdp: order must exceed 1");
  if (q == 0) return 0;
  if (q == 1) return alpha / (2 * sigma * sigma);
  const double la = alpha == std::floor(alpha)
                        ? detail::log_a_int(q, sigma, static_cast<int>(alpha))
                        : detail::log_a_frac(q, sigma, alpha);
  return la / (alpha - 1);
}

// (epsilon, delta) after `steps` compositions, minimised over the orders.
inline double rdp_epsilon(double sigma, double q, long long steps, double delta,
                          double* best_order = nullptr) {
  require(sigma > 0, "rdp_epsilon: sigma must be positive");
  require(q > 0 && q <= 1, "rdp_epsilon: sampling rate must lie in (0, 1]");
  require(steps >= 0, "rdp_epsilon: steps must be nonnegative");
  require(delta > 0 && delta < 1, "rdp_epsilon: delta must lie in (0, 1)");
  if (steps == 0) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (double a : rdp_orders()) {
    const double e = double(steps) * rdp_subsampled_gaussian(q, sigma, a) +
                     std::log(1 / delta) / (a - 1);
    if (e < best) {
      best = e;
      if (best_order) *best_order = a;
    }
  }
  return best;
}

inline constexpr double kSigmaSearchLow = 0.3;
inline constexpr double kSigmaSearchHigh = 100.0;

// Smallest-found sigma in [0.3, 100] whose epsilon lies in [0.99 eps, eps].
// When even sigma = 0.3 spends less than 0.99 eps, 0.3 is returned (it cannot
// overspend). The result never exceeds the budget.
inline double calibrate_sigma(double target_epsilon, double delta, double q, long long steps) {
  require(target_epsilon > 0, "calibrate_sigma: target epsilon must be positive");
  auto eps = [&](double s) { return rdp_epsilon(s, q, steps, delta); };
  const double at_high = eps(kSigmaSearchHigh);
  if (at_high > target_epsilon) {
    throw std::invalid_argument(
        "calibrate_sigma: epsilon " + std::to_string(target_epsilon) +
        " unattainable for q=" + std::to_string(q) + ", T=" + std::to_string(steps) +
        ", delta=" + std::to_string(delta) + " (epsilon at sigma=100 is " +
        std::to_string(at_high) + ")");
  }
  double lo = kSigmaSearchLow, hi = kSigmaSearchHigh;
  if (eps(lo) <= target_epsilon) return lo;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double e = eps(mid);
    if (e > target_epsilon) {
      lo = mid;
    } else {
      hi = mid;
      if (e >= 0.99 * target_epsilon) break;
    }
  }
  return hi;
}

// delta = 1 / (10 N), rounded to one significant figure.
inline double default_delta(std::size_t n) {
  require(n > 0, "default_delta: empty dataset");
  const double raw = 1.0 / (10.0 * double(n));
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  return std::round(raw / mag) * mag;
}

}  // namespace softxfer

#endif  // SOFTXFER_DP_HPP_
