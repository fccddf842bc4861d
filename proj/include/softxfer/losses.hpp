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

#ifndef SOFTXFER_LOSSES_HPP_
#define SOFTXFER_LOSSES_HPP_

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "softxfer/autodiff.hpp"
#include "softxfer/tensor.hpp"

namespace softxfer {

template <class T>
std::vector<T> softmax(std::span<const T> logits, T temperature = T(1)) {
  std::vector<T> out(logits.size());
  T mx = -std::numeric_limits<T>::infinity();
  for (T v : logits) mx = std::max(mx, v / temperature);
  T z = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::exp(logits[i] / temperature - mx);
    z += out[i];
  }
  for (T& v : out) v /= z;
  return out;
}

template <class T>
std::vector<T> log_softmax_values(std::span<const T> logits,
                                  T temperature = T(1)) {
  std::vector<T> scaled(logits.size());
  for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] = logits[i] / temperature;
  const T lse = detail::log_sum_exp<T>(scaled);
  for (T& v : scaled) v -= lse;
  return scaled;
}

// KL(softmax(ref / tau) || softmax(adj / tau)) for one pair of rows.
template <class T>
T kl_value(std::span<const T> ref, std::span<const T> adj, T tau = T(1)) {
  const std::vector<T> lp = log_softmax_values(ref, tau);
  const std::vector<T> lq = log_softmax_values(adj, tau);
  T kl = 0;
  for (std::size_t i = 0; i < lp.size(); ++i) kl += std::exp(lp[i]) * (lp[i] - lq[i]);
  return std::max(kl, T(0));
}

// Mean over rows of KL(softmax(reference/tau) || softmax(adjustable/tau)).
// The reference side is a constant; gradient reaches `adjustable` only.
template <class T>
Var<T> kl_rows(const Tensor<T>& reference, const Var<T>& adjustable,
               T tau = T(1)) {
  const Tensor<T>& adj = adjustable.value();
  require(reference.rows() == adj.rows() && reference.cols() == adj.cols(),
          "kl_divergence: length mismatch " + shape_string(reference.shape()) +
              " vs " + shape_string(adj.shape()));
  require(adj.cols() >= 2, "kl_divergence: need at least two outcomes");
  require_finite<T>(reference.values(), "kl_divergence");
  require_finite<T>(adj.values(), "kl_divergence");
  require(tau > T(0), "kl_divergence: temperature must be positive");
  const std::size_t n = adj.rows(), m = adj.cols();
  Tensor<T> p = Tensor<T>::matrix(n, m);
  Tensor<T> q = Tensor<T>::matrix(n, m);
  T total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const auto lp = log_softmax_values<T>(reference.row(r), tau);
    const auto lq = log_softmax_values<T>(adj.row(r), tau);
    T kl = 0;
    for (std::size_t j = 0; j < m; ++j) {
      p(r, j) = std::exp(lp[j]);
      q(r, j) = std::exp(lq[j]);
      kl += p(r, j) * (lp[j] - lq[j]);
    }
    total += kl;
  }
  Tape<T>& tape = *adjustable.tape();
  const std::size_t ia = adjustable.id();
  return tape.record(Tensor<T>::scalar(std::max(total / T(n), T(0))),
                     adjustable.requires_grad(),
                     [ia, tau, p = std::move(p), q = std::move(q),
                      io = tape.size()](Tape<T>& t) {
                       const T g = t.grad(io)[0] / (tau * T(p.rows()));
                       Tensor<T>& d = t.grad(ia);
                       for (std::size_t i = 0; i < d.size(); ++i)
                         d[i] += g * (q[i] - p[i]);
                     });
}

template <class T>
Var<T> kl_divergence(const Tensor<T>& reference, const Var<T>& adjustable) {
  return kl_rows(reference, adjustable, T(1));
}

// Mean next-token style cross-entropy: row r of `logits` predicts targets[r].
template <class T>
Var<T> cross_entropy_rows(const Var<T>& logits, std::span<const int> targets) {
  const Tensor<T>& x = logits.value();
  require(targets.size() == x.rows(), "cross_entropy: one target per row");
  const std::size_t n = x.rows(), m = x.cols();
  Tensor<T> probs = Tensor<T>::matrix(n, m);
  T total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    require(targets[r] >= 0 && static_cast<std::size_t>(targets[r]) < m,
            "cross_entropy: target index " + std::to_string(targets[r]) +
                " out of range");
    auto row = x.row(r);
    const T lse = detail::log_sum_exp<T>(row);
    total += lse - row[static_cast<std::size_t>(targets[r])];
    for (std::size_t j = 0; j < m; ++j) probs(r, j) = std::exp(row[j] - lse);
  }
  Tape<T>& tape = *logits.tape();
  const std::size_t il = logits.id();
  return tape.record(
      Tensor<T>::scalar(total / T(n)), logits.requires_grad(),
      [il, probs = std::move(probs),
       tg = std::vector<int>(targets.begin(), targets.end()),
       io = tape.size()](Tape<T>& t) {
        const T g = t.grad(io)[0] / T(probs.rows());
        Tensor<T>& d = t.grad(il);
        for (std::size_t r = 0; r < probs.rows(); ++r) {
          auto dr = d.row(r);
          auto pr = probs.row(r);
          for (std::size_t j = 0; j < dr.size(); ++j) dr[j] += g * pr[j];
          dr[static_cast<std::size_t>(tg[r])] -= g;
        }
      });
}

template <class T>
Var<T> cross_entropy(const Var<T>& logits, int target_index) {
  const int t[1] = {target_index};
  return cross_entropy_rows(logits, std::span<const int>(t, 1));
}

// Mean over rows of (1 - cos(a_r, b_r)); b is a constant. A row where either
// vector has zero norm contributes the maximum distance 1 and no gradient;
// `degenerate_rows` reports how many did.
template <class T>
Var<T> cosine_distance_rows(const Var<T>& a, const Tensor<T>& b,
                            std::size_t* degenerate_rows = nullptr) {
  const Tensor<T>& av = a.value();
  require(av.shape() == b.shape(), "cosine_distance: shape mismatch");
  const std::size_t n = av.rows(), m = av.cols();
  std::vector<T> na(n), nb(n), cosv(n);
  std::vector<char> ok(n, 1);
  std::size_t degenerate = 0;
  T total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    na[r] = l2_norm<T>(av.row(r));
    nb[r] = l2_norm<T>(b.row(r));
    if (na[r] == T(0) || nb[r] == T(0)) {
      ok[r] = 0;
      ++degenerate;
      total += T(1);
      continue;
    }
    T dot = 0;
    for (std::size_t j = 0; j < m; ++j) dot += av(r, j) * b(r, j);
    cosv[r] = dot / (na[r] * nb[r]);
    total += T(1) - cosv[r];
  }
  if (degenerate_rows) *degenerate_rows = degenerate;
  Tape<T>& tape = *a.tape();
  const std::size_t ia = a.id();
  return tape.record(
      Tensor<T>::scalar(total / T(n)), a.requires_grad(),
      [ia, b, na = std::move(na), nb = std::move(nb), cosv = std::move(cosv),
       ok = std::move(ok), io = tape.size()](Tape<T>& t) {
        const T g = t.grad(io)[0] / T(b.rows());
        const Tensor<T>& av = t.value(ia);
        Tensor<T>& d = t.grad(ia);
        for (std::size_t r = 0; r < b.rows(); ++r) {
          if (!ok[r]) continue;
          // d(1 - cos)/da = -(b/(|a||b|) - cos * a/|a|^2)
          for (std::size_t j = 0; j < b.cols(); ++j) {
            d(r, j) -= g * (b(r, j) / (na[r] * nb[r]) -
                            cosv[r] * av(r, j) / (na[r] * na[r]));
          }
        }
      });
}

// Per-class token sets for text-infilling classification.
using Verbalizers = std::vector<std::vector<int>>;

inline void check_verbalizers(const Verbalizers& v, std::size_t vocab_size) {
  require(v.size() >= 2, "verbalizers: need at least two classes");
  std::vector<int> owner(vocab_size, -1);
  for (std::size_t c = 0; c < v.size(); ++c) {
    require(!v[c].empty(),
            "verbalizers: class " + std::to_string(c) + " has no tokens");
    for (int tok : v[c]) {
      require(tok >= 0 && static_cast<std::size_t>(tok) < vocab_size,
              "verbalizers: token id " + std::to_string(tok) + " not in vocab");
      require(owner[static_cast<std::size_t>(tok)] == -1,
              "verbalizers: overlapping label sets (token " +
                  std::to_string(tok) + ")");
      owner[static_cast<std::size_t>(tok)] = static_cast<int>(c);
    }
  }
}

// Log class probabilities from a single row of vocabulary logits: each class
// scores the average softmax probability of its label tokens, then the class
// scores are renormalised. The vocabulary normaliser cancels, so only label
// token logits enter.
template <class T>
Var<T> class_log_probs(const Var<T>& logits_row, const Verbalizers& verbalizers) {
  const Tensor<T>& z = logits_row.value();
  require(z.rows() == 1, "class_log_probs: expected a single row of logits");
  const std::size_t C = verbalizers.size();
  std::vector<T> b(C);
  std::vector<std::vector<T>> w(C);
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<T> sel;
    sel.reserve(verbalizers[c].size());
    for (int tok : verbalizers[c]) sel.push_back(z[static_cast<std::size_t>(tok)]);
    const T lse = detail::log_sum_exp<T>(sel);
    w[c].resize(sel.size());
    for (std::size_t i = 0; i < sel.size(); ++i) w[c][i] = std::exp(sel[i] - lse);
    b[c] = lse - std::log(T(sel.size()));
  }
  const T norm = detail::log_sum_exp<T>(b);
  Tensor<T> out = Tensor<T>::matrix(1, C);
  for (std::size_t c = 0; c < C; ++c) out[c] = b[c] - norm;
  Tape<T>& tape = *logits_row.tape();
  const std::size_t iz = logits_row.id();
  return tape.record(std::move(out), logits_row.requires_grad(),
                     [iz, verbalizers, w = std::move(w), io = tape.size()](Tape<T>& t) {
                       const Tensor<T>& g = t.grad(io);
                       const Tensor<T>& y = t.value(io);
                       T gs = 0;
                       for (T v : g.values()) gs += v;
                       Tensor<T>& d = t.grad(iz);
                       for (std::size_t c = 0; c < verbalizers.size(); ++c) {
                         const T db = g[c] - std::exp(y[c]) * gs;
                         for (std::size_t i = 0; i < verbalizers[c].size(); ++i)
                           d[static_cast<std::size_t>(verbalizers[c][i])] += db * w[c][i];
                       }
                     });
}

// Value-only label-set probability: average softmax probability per class,
// renormalised across classes. Evaluated in log space from the label-token
// logits so tiny probabilities do not underflow.
template <class T>
std::vector<T> label_set_probability(std::span<const T> logits,
                                     const Verbalizers& verbalizers) {
  check_verbalizers(verbalizers, logits.size());
  std::vector<T> b(verbalizers.size());
  for (std::size_t c = 0; c < verbalizers.size(); ++c) {
    std::vector<T> sel;
    for (int tok : verbalizers[c]) sel.push_back(logits[static_cast<std::size_t>(tok)]);
    b[c] = detail::log_sum_exp<T>(sel) - std::log(T(sel.size()));
  }
  return softmax<T>(b);
}

}  // namespace softxfer

#endif  // SOFTXFER_LOSSES_HPP_
