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

// Tape-based reverse-mode differentiation over dense matrices.
//
// A Tape records every operation applied to Vars in execution order. Each
// recorded node keeps its value and a closure that pushes its output gradient
// back into its inputs. backward() walks the tape once in reverse, so the
// ordering of node ids is always a valid topological order.
//
// Leaves come in four flavours: owned or borrowed, with or without gradient.
// Borrowed leaves reference tensors that must outlive the tape; model weights
// are bound this way so a forward pass does not copy them.
//
// A tape is single-threaded. Independent graphs may run on separate threads.

#ifndef SOFTXFER_AUTODIFF_HPP_
#define SOFTXFER_AUTODIFF_HPP_

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "softxfer/tensor.hpp"

namespace softxfer {

template <class T>
class Tape;

template <class T>
class Var {
 public:
  Var() = default;

  Tape<T>* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Tensor<T>& value() const { return tape_->value(id_); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> v) { return push(std::move(v), nullptr, false); }
  Var<T> constant_ref(const Tensor<T>& v) { return push({}, &v, false); }
  Var<T> variable(Tensor<T> v) { return push(std::move(v), nullptr, true); }
  Var<T> parameter(const Tensor<T>& v) { return push({}, &v, true); }

  // Records an operation result. `fn` runs during backward() only if the
  // result requires a gradient.
  Var<T> record(Tensor<T> value, bool requires_grad, BackwardFn fn) {
    Var<T> out = push(std::move(value), nullptr, requires_grad);
    if (requires_grad) nodes_.back().backward = std::move(fn);
    return out;
  }

  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.owned;
  }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Gradient buffer of a node, zero-initialised on first access.
  Tensor<T>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(value(id).shape(), T(0));
    return n.grad;
  }
  const Tensor<T>& grad(const Var<T>& v) { return grad(v.id()); }
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  // Seeds d(root)/d(root) = 1 and propagates to every leaf that requires a
  // gradient. `root` must hold a single value.
  void backward(const Var<T>& root) {
    require(root.tape() == this, "backward: variable belongs to another tape");
    require(value(root.id()).size() == 1, "backward: root must be a scalar");
    if (!requires_grad(root.id())) return;
    grad(root.id())[0] += T(1);
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(*this);
    }
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<T> push(Tensor<T> v, const Tensor<T>* ext, bool rg) {
    Node n;
    n.owned = std::move(v);
    n.external = ext;
    n.requires_grad = rg;
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using MapConstMat = Eigen::Map<const RowMat<T>>;

template <class T>
MapConstMat<T> as_mat(const Tensor<T>& t) {
  return MapConstMat<T>(t.data(), static_cast<Eigen::Index>(t.rows()),
                        static_cast<Eigen::Index>(t.cols()));
}
template <class T>
MapMat<T> as_mat(Tensor<T>& t) {
  return MapMat<T>(t.data(), static_cast<Eigen::Index>(t.rows()),
                   static_cast<Eigen::Index>(t.cols()));
}

template <class T>
Tape<T>& same_tape(const Var<T>& a, const Var<T>& b) {
  require(a.tape() == b.tape(), "operands recorded on different tapes");
  return *a.tape();
}

template <class T>
T log_sum_exp(std::span<const T> x) {
  T m = -std::numeric_limits<T>::infinity();
  for (T v : x) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  T s = 0;
  for (T v : x) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops.

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = detail::same_tape(a, b);
  require(a.value().shape() == b.value().shape(),
          "add: shape mismatch " + shape_string(a.value().shape()) + " vs " +
              shape_string(b.value().shape()));
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), a.requires_grad() || b.requires_grad(),
                     [ia, ib, io = tape.size()](Tape<T>& t) {
                       const Tensor<T>& g = t.grad(io);
                       for (std::size_t src : {ia, ib}) {
                         if (!t.requires_grad(src)) continue;
                         Tensor<T>& d = t.grad(src);
                         for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                       }
                     });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = detail::same_tape(a, b);
  require(a.value().shape() == b.value().shape(), "sub: shape mismatch");
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), a.requires_grad() || b.requires_grad(),
                     [ia, ib, io = tape.size()](Tape<T>& t) {
                       const Tensor<T>& g = t.grad(io);
                       if (t.requires_grad(ia)) {
                         Tensor<T>& d = t.grad(ia);
                         for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                       }
                       if (t.requires_grad(ib)) {
                         Tensor<T>& d = t.grad(ib);
                         for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
                       }
                     });
}

template <class T>
Var<T> scale(const Var<T>& a, T c) {
  Tape<T>& tape = *a.tape();
  Tensor<T> out = a.value();
  for (T& v : out.values()) v *= c;
  const std::size_t ia = a.id();
  return tape.record(std::move(out), a.requires_grad(),
                     [ia, c, io = tape.size()](Tape<T>& t) {
                       const Tensor<T>& g = t.grad(io);
                       Tensor<T>& d = t.grad(ia);
                       for (std::size_t i = 0; i < g.size(); ++i) d[i] += c * g[i];
                     });
}

// Adds a length-m bias to every row of an [n x m] matrix.
template <class T>
Var<T> add_bias(const Var<T>& x, const Var<T>& bias) {
  Tape<T>& tape = detail::same_tape(x, bias);
  const std::size_t m = x.value().cols();
  require(bias.value().size() == m, "add_bias: bias width mismatch");
  Tensor<T> out = x.value();
  const Tensor<T>& b = bias.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t j = 0; j < m; ++j) row[j] += b[j];
  }
  const std::size_t ix = x.id(), ib = bias.id();
  return tape.record(std::move(out), x.requires_grad() || bias.requires_grad(),
                     [ix, ib, io = tape.size()](Tape<T>& t) {
                       const Tensor<T>& g = t.grad(io);
                       if (t.requires_grad(ix)) {
                         Tensor<T>& d = t.grad(ix);
                         for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                       }
                       if (t.requires_grad(ib)) {
                         Tensor<T>& d = t.grad(ib);
                         const std::size_t m = d.size();
                         for (std::size_t r = 0; r < g.rows(); ++r) {
                           auto row = g.row(r);
                           for (std::size_t j = 0; j < m; ++j) d[j] += row[j];
                         }
                       }
                     });
}

// [n x k] . [k x m]
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = detail::same_tape(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require(av.cols() == bv.rows(), "matmul: inner dimension mismatch " +
                                      shape_string(av.shape()) + " . " +
                                      shape_string(bv.shape()));
  Tensor<T> out = Tensor<T>::matrix(av.rows(), bv.cols());
  detail::as_mat(out).noalias() = detail::as_mat(av) * detail::as_mat(bv);
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(
      std::move(out), a.requires_grad() || b.requires_grad(),
      [ia, ib, io = tape.size()](Tape<T>& t) {
        const auto g = detail::as_mat(std::as_const(t.grad(io)));
        if (t.requires_grad(ia)) {
          detail::as_mat(t.grad(ia)).noalias() +=
              g * detail::as_mat(t.value(ib)).transpose();
        }
        if (t.requires_grad(ib)) {
          detail::as_mat(t.grad(ib)).noalias() +=
              detail::as_mat(t.value(ia)).transpose() * g;
        }
      });
}

// [n x k] . [m x k]^T
template <class T>
Var<T> matmul_bt(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = detail::same_tape(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require(av.cols() == bv.cols(), "matmul_bt: inner dimension mismatch");
  Tensor<T> out = Tensor<T>::matrix(av.rows(), bv.rows());
  detail::as_mat(out).noalias() =
      detail::as_mat(av) * detail::as_mat(bv).transpose();
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(
      std::move(out), a.requires_grad() || b.requires_grad(),
      [ia, ib, io = tape.size()](Tape<T>& t) {
        const auto g = detail::as_mat(std::as_const(t.grad(io)));
        if (t.requires_grad(ia)) {
          detail::as_mat(t.grad(ia)).noalias() += g * detail::as_mat(t.value(ib));
        }
        if (t.requires_grad(ib)) {
          detail::as_mat(t.grad(ib)).noalias() +=
              g.transpose() * detail::as_mat(t.value(ia));
        }
      });
}

// Gathers rows of a [V x d] table.
template <class T>
Var<T> embed(const Var<T>& table, std::span<const int> ids) {
  Tape<T>& tape = *table.tape();
  const Tensor<T>& tv = table.value();
  const std::size_t d = tv.cols();
  require(!ids.empty(), "embed: empty id sequence");
  Tensor<T> out = Tensor<T>::matrix(ids.size(), d);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    require(ids[r] >= 0 && static_cast<std::size_t>(ids[r]) < tv.rows(),
            "embed: token id " + std::to_string(ids[r]) + " out of range");
    auto src = tv.row(static_cast<std::size_t>(ids[r]));
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  const std::size_t it = table.id();
  return tape.record(std::move(out), table.requires_grad(),
                     [it, rows = std::vector<int>(ids.begin(), ids.end()),
                      io = tape.size()](Tape<T>& t) {
                       const Tensor<T>& g = t.grad(io);
                       Tensor<T>& d = t.grad(it);
                       for (std::size_t r = 0; r < rows.size(); ++r) {
                         auto gr = g.row(r);
                         auto dr = d.row(static_cast<std::size_t>(rows[r]));
                         for (std::size_t j = 0; j < gr.size(); ++j) dr[j] += gr[j];
                       }
                     });
}

template <class T>
Var<T> concat_rows(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = detail::same_tape(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require(av.cols() == bv.cols(), "concat_rows: width mismatch");
  Tensor<T> out = Tensor<T>::matrix(av.rows() + bv.rows(), av.cols());
  std::copy(av.values().begin(), av.values().end(), out.values().begin());
  std::copy(bv.values().begin(), bv.values().end(),
            out.values().begin() + static_cast<std::ptrdiff_t>(av.size()));
  const std::size_t ia = a.id(), ib = b.id(), na = av.size();
  return tape.record(std::move(out), a.requires_grad() || b.requires_grad(),
                     [ia, ib, na, io = tape.size()](Tape<T>& t) {
                       const Tensor<T>& g = t.grad(io);
                       if (t.requires_grad(ia)) {
                         Tensor<T>& d = t.grad(ia);
                         for (std::size_t i = 0; i < na; ++i) d[i] += g[i];
                       }
                       if (t.requires_grad(ib)) {
                         Tensor<T>& d = t.grad(ib);
                         for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[na + i];
                       }
                     });
}

// Rows [start, start + count) of a matrix.
template <class T>
Var<T> take_rows(const Var<T>& x, std::size_t start, std::size_t count) {
  Tape<T>& tape = *x.tape();
  const Tensor<T>& xv = x.value();
  require(count > 0 && start + count <= xv.rows(), "take_rows: out of range");
  const std::size_t m = xv.cols();
  Tensor<T> out = Tensor<T>::matrix(count, m);
  std::copy(xv.values().begin() + static_cast<std::ptrdiff_t>(start * m),
            xv.values().begin() + static_cast<std::ptrdiff_t>((start + count) * m),
            out.values().begin());
  const std::size_t ix = x.id();
  return tape.record(std::move(out), x.requires_grad(),
                     [ix, off = start * m, io = tape.size()](Tape<T>& t) {
                       const Tensor<T>& g = t.grad(io);
                       Tensor<T>& d = t.grad(ix);
                       for (std::size_t i = 0; i < g.size(); ++i) d[off + i] += g[i];
                     });
}

template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias,
                  T eps = T(1e-5)) {
  Tape<T>& tape = detail::same_tape(x, gain);
  const Tensor<T>& xv = x.value();
  const std::size_t n = xv.rows(), m = xv.cols();
  require(gain.value().size() == m && bias.value().size() == m,
          "layer_norm: parameter width mismatch");
  Tensor<T> xhat = Tensor<T>::matrix(n, m);
  std::vector<T> inv_std(n);
  Tensor<T> out = Tensor<T>::matrix(n, m);
  const Tensor<T>& g = gain.value();
  const Tensor<T>& b = bias.value();
  for (std::size_t r = 0; r < n; ++r) {
    auto row = xv.row(r);
    T mean = 0;
    for (T v : row) mean += v;
    mean /= T(m);
    T var = 0;
    for (T v : row) var += (v - mean) * (v - mean);
    var /= T(m);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < m; ++j) {
      xhat(r, j) = (row[j] - mean) * inv_std[r];
      out(r, j) = xhat(r, j) * g[j] + b[j];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  const bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  return tape.record(
      std::move(out), rg,
      [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std),
       io = tape.size()](Tape<T>& t) {
        const Tensor<T>& gy = t.grad(io);
        const Tensor<T>& gain = t.value(ig);
        const std::size_t n = gy.rows(), m = gy.cols();
        if (t.requires_grad(ig)) {
          Tensor<T>& dg = t.grad(ig);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < m; ++j) dg[j] += gy(r, j) * xhat(r, j);
        }
        if (t.requires_grad(ib)) {
          Tensor<T>& db = t.grad(ib);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < m; ++j) db[j] += gy(r, j);
        }
        if (t.requires_grad(ix)) {
          Tensor<T>& dx = t.grad(ix);
          std::vector<T> dxhat(m);
          for (std::size_t r = 0; r < n; ++r) {
            T mean_d = 0, mean_dx = 0;
            for (std::size_t j = 0; j < m; ++j) {
              dxhat[j] = gy(r, j) * gain[j];
              mean_d += dxhat[j];
              mean_dx += dxhat[j] * xhat(r, j);
            }
            mean_d /= T(m);
            mean_dx /= T(m);
            for (std::size_t j = 0; j < m; ++j) {
              dx(r, j) += inv_std[r] * (dxhat[j] - mean_d - xhat(r, j) * mean_dx);
            }
          }
        }
      });
}

// GELU, tanh approximation.
template <class T>
Var<T> gelu(const Var<T>& x) {
  Tape<T>& tape = *x.tape();
  constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kA = T(0.044715);
  Tensor<T> out = x.value();
  for (T& v : out.values()) {
    const T u = kC * (v + kA * v * v * v);
    v = T(0.5) * v * (T(1) + std::tanh(u));
  }
  const std::size_t ix = x.id();
  return tape.record(std::move(out), x.requires_grad(),
                     [ix, io = tape.size()](Tape<T>& t) {
                       const Tensor<T>& g = t.grad(io);
                       const Tensor<T>& xv = t.value(ix);
                       Tensor<T>& d = t.grad(ix);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const T v = xv[i];
                         const T u = kC * (v + kA * v * v * v);
                         const T th = std::tanh(u);
                         const T du = kC * (T(1) + T(3) * kA * v * v);
                         d[i] += g[i] * (T(0.5) * (T(1) + th) +
                                         T(0.5) * v * (T(1) - th * th) * du);
                       }
                     });
}

// Multi-head scaled dot-product attention with a causal mask. q, k, v are
// [n x d]; heads split d into equal contiguous slices.
template <class T>
Var<T> causal_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                        std::size_t n_heads) {
  Tape<T>& tape = detail::same_tape(q, k);
  const Tensor<T>& qv = q.value();
  const Tensor<T>& kv = k.value();
  const Tensor<T>& vv = v.value();
  const std::size_t n = qv.rows(), d = qv.cols();
  require(kv.shape() == qv.shape() && vv.shape() == qv.shape(),
          "causal_attention: q/k/v shape mismatch");
  require(n_heads > 0 && d % n_heads == 0,
          "causal_attention: width not divisible by head count");
  const std::size_t dh = d / n_heads;
  const T inv_sqrt = T(1) / std::sqrt(T(dh));
  // probs[h][i][j], j <= i
  Tensor<T> probs(Shape{n_heads, n, n}, T(0));
  Tensor<T> out = Tensor<T>::matrix(n, d);
  std::vector<T> s(n);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t c0 = h * dh;
    for (std::size_t i = 0; i < n; ++i) {
      const T* qi = qv.data() + i * d + c0;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j <= i; ++j) {
        const T* kj = kv.data() + j * d + c0;
        T dot = 0;
        for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
        s[j] = dot * inv_sqrt;
        mx = std::max(mx, s[j]);
      }
      T z = 0;
      for (std::size_t j = 0; j <= i; ++j) {
        s[j] = std::exp(s[j] - mx);
        z += s[j];
      }
      T* p = probs.data() + (h * n + i) * n;
      T* oi = out.data() + i * d + c0;
      for (std::size_t j = 0; j <= i; ++j) {
        p[j] = s[j] / z;
        const T* vj = vv.data() + j * d + c0;
        for (std::size_t c = 0; c < dh; ++c) oi[c] += p[j] * vj[c];
      }
    }
  }
  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  const bool rg = q.requires_grad() || k.requires_grad() || v.requires_grad();
  return tape.record(
      std::move(out), rg,
      [iq, ik, iv, n_heads, probs = std::move(probs), io = tape.size()](Tape<T>& t) {
        const Tensor<T>& g = t.grad(io);
        const Tensor<T>& qv = t.value(iq);
        const Tensor<T>& kv = t.value(ik);
        const Tensor<T>& vv = t.value(iv);
        const std::size_t n = g.rows(), d = g.cols(), dh = d / n_heads;
        const T inv_sqrt = T(1) / std::sqrt(T(dh));
        Tensor<T> dq = Tensor<T>::matrix(n, d);
        Tensor<T> dk = Tensor<T>::matrix(n, d);
        Tensor<T> dv = Tensor<T>::matrix(n, d);
        std::vector<T> dp(n);
        for (std::size_t h = 0; h < n_heads; ++h) {
          const std::size_t c0 = h * dh;
          for (std::size_t i = 0; i < n; ++i) {
            const T* p = probs.data() + (h * n + i) * n;
            const T* gi = g.data() + i * d + c0;
            T dot_pd = 0;
            for (std::size_t j = 0; j <= i; ++j) {
              const T* vj = vv.data() + j * d + c0;
              T* dvj = dv.data() + j * d + c0;
              T acc = 0;
              for (std::size_t c = 0; c < dh; ++c) {
                acc += gi[c] * vj[c];
                dvj[c] += p[j] * gi[c];
              }
              dp[j] = acc;
              dot_pd += p[j] * acc;
            }
            const T* qi = qv.data() + i * d + c0;
            T* dqi = dq.data() + i * d + c0;
            for (std::size_t j = 0; j <= i; ++j) {
              const T ds = p[j] * (dp[j] - dot_pd) * inv_sqrt;
              if (ds == T(0)) continue;
              const T* kj = kv.data() + j * d + c0;
              T* dkj = dk.data() + j * d + c0;
              for (std::size_t c = 0; c < dh; ++c) {
                dqi[c] += ds * kj[c];
                dkj[c] += ds * qi[c];
              }
            }
          }
        }
        auto accumulate = [&t](std::size_t id, const Tensor<T>& src) {
          if (!t.requires_grad(id)) return;
          Tensor<T>& dst = t.grad(id);
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        };
        accumulate(iq, dq);
        accumulate(ik, dk);
        accumulate(iv, dv);
      });
}

template <class T>
Var<T> sum(const Var<T>& x) {
  Tape<T>& tape = *x.tape();
  T s = 0;
  for (T v : x.value().values()) s += v;
  const std::size_t ix = x.id();
  return tape.record(Tensor<T>::scalar(s), x.requires_grad(),
                     [ix, io = tape.size()](Tape<T>& t) {
                       const T g = t.grad(io)[0];
                       Tensor<T>& d = t.grad(ix);
                       for (T& v : d.values()) v += g;
                     });
}

template <class T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / T(x.value().size()));
}

// Single element as a scalar.
template <class T>
Var<T> pick(const Var<T>& x, std::size_t index) {
  Tape<T>& tape = *x.tape();
  require(index < x.value().size(), "pick: index out of range");
  const std::size_t ix = x.id();
  return tape.record(Tensor<T>::scalar(x.value()[index]), x.requires_grad(),
                     [ix, index, io = tape.size()](Tape<T>& t) {
                       t.grad(ix)[index] += t.grad(io)[0];
                     });
}

// Row-wise log-softmax.
template <class T>
Var<T> log_softmax(const Var<T>& x) {
  Tape<T>& tape = *x.tape();
  Tensor<T> out = x.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const T lse = detail::log_sum_exp<T>(row);
    for (T& v : row) v -= lse;
  }
  const std::size_t ix = x.id();
  return tape.record(std::move(out), x.requires_grad(),
                     [ix, io = tape.size()](Tape<T>& t) {
                       const Tensor<T>& g = t.grad(io);
                       const Tensor<T>& y = t.value(io);
                       Tensor<T>& d = t.grad(ix);
                       for (std::size_t r = 0; r < g.rows(); ++r) {
                         auto gr = g.row(r);
                         auto yr = y.row(r);
                         T gs = 0;
                         for (T v : gr) gs += v;
                         auto dr = d.row(r);
                         for (std::size_t j = 0; j < gr.size(); ++j)
                           dr[j] += gr[j] - std::exp(yr[j]) * gs;
                       }
                     });
}

}  // namespace softxfer

#endif  // SOFTXFER_AUTODIFF_HPP_
