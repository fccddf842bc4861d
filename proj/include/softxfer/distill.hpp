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

// Teacher-to-student compression and plain language-model training.

#ifndef SOFTXFER_DISTILL_HPP_
#define SOFTXFER_DISTILL_HPP_

#include <cstdio>
#include <functional>
#include <numeric>
#include <ostream>
#include <vector>

#include "softxfer/losses.hpp"
#include "softxfer/model.hpp"
#include "softxfer/optim.hpp"
#include "softxfer/rng.hpp"

namespace softxfer {

struct KdWeights {
  double alpha_ce = 5.0;
  double alpha_lm = 2.0;
  double alpha_cos = 1.0;
  double temperature = 2.0;

  void validate() const {
    require(alpha_ce >= 0 && alpha_lm >= 0 && alpha_cos >= 0,
            "kd weights: weights must be nonnegative");
    require(alpha_ce > 0 || alpha_lm > 0 || alpha_cos > 0,
            "kd weights: at least one weight must be positive");
    require(temperature > 0, "kd weights: temperature must be positive");
  }
};

struct KdConfig {
  std::vector<int> student_layer_indices{0, 3};
  bool freeze_embedding = true;  // token and position tables
  bool freeze_lm_head = true;
  KdWeights weights;
  double learning_rate = 0.00025;
  int batch_size = 5;
  int max_steps = 400;
  int plateau_window = 50;
  double plateau_tolerance = 0.01;
  int check_interval = 50;  // steps between plateau checks / checkpoints

  void validate(int teacher_layers) const {
    weights.validate();
    require(!student_layer_indices.empty(), "kd config: student needs at least one layer");
    for (std::size_t i = 0; i < student_layer_indices.size(); ++i) {
      const int l = student_layer_indices[i];
      require(l >= 0 && l < teacher_layers,
              "kd config: layer index " + std::to_string(l) + " outside teacher's " +
                  std::to_string(teacher_layers) + " layers");
      require(i == 0 || l > student_layer_indices[i - 1],
              "kd config: student layer indices must be strictly increasing");
    }
    require(learning_rate > 0, "kd config: learning rate must be positive");
    require(batch_size > 0 && max_steps >= 0, "kd config: bad batch size or step count");
    require(plateau_window >= 2, "kd config: plateau window must be at least 2");
    require(check_interval > 0, "kd config: check interval must be positive");
  }
};

// Teacher layers used by a student of `student_layers` layers: the first
// half and the last half, e.g. {0, 3} of 4 and {0, 1, 46, 47} of 48.
inline std::vector<int> default_student_layers(int teacher_layers, int student_layers) {
  require(student_layers >= 1 && student_layers <= teacher_layers,
          "student layer count must lie in [1, teacher layers]");
  std::vector<int> out;
  const int first = (student_layers + 1) / 2;
  for (int i = 0; i < first; ++i) out.push_back(i);
  for (int i = teacher_layers - (student_layers - first); i < teacher_layers; ++i) {
    out.push_back(i);
  }
  return out;
}

template <class T>
TransformerLM<T> init_student_from_teacher(const TransformerLM<T>& teacher,
                                           const KdConfig& config) {
  const ModelConfig& tc = teacher.config();
  config.validate(tc.n_layers);
  ModelConfig sc = tc;
  sc.n_layers = static_cast<int>(config.student_layer_indices.size());
  TransformerLM<T> student(sc);
  using M = TransformerLM<T>;
  auto& dst = student.params();
  const auto& src = teacher.params();
  dst[M::tok_emb_index()].value = src[M::tok_emb_index()].value;
  dst[M::pos_emb_index()].value = src[M::pos_emb_index()].value;
  for (int s = 0; s < sc.n_layers; ++s) {
    const int t = config.student_layer_indices[static_cast<std::size_t>(s)];
    for (std::size_t slot = 0; slot < kSlotsPerLayer; ++slot) {
      dst[M::layer_index(s, slot)].value = src[M::layer_index(t, slot)].value;
    }
  }
  dst[student.ln_f_gain_index()].value = src[teacher.ln_f_gain_index()].value;
  dst[student.ln_f_bias_index()].value = src[teacher.ln_f_bias_index()].value;
  if (!sc.tie_lm_head) dst[student.lm_head_index()].value = src[teacher.lm_head_index()].value;
  return student;
}

// Which student parameters train under the freeze flags.
template <class T>
std::vector<bool> kd_trainable_mask(const TransformerLM<T>& student, const KdConfig& config) {
  std::vector<bool> mask(student.params().size(), true);
  if (config.freeze_embedding) {
    mask[TransformerLM<T>::tok_emb_index()] = false;
    mask[TransformerLM<T>::pos_emb_index()] = false;
  }
  if (config.freeze_lm_head) mask[student.lm_head_index()] = false;
  return mask;
}

template <class T>
struct DistillLoss {
  Var<T> total;
  T l_ce = 0, l_lm = 0, l_cos = 0;
  std::size_t degenerate_rows = 0;
};

// Three-term objective. Teacher quantities are constants; `lm_targets[r]` is
// the next token for student row r, and rows without a target (the final
// position) are excluded from the LM term only.
template <class T>
DistillLoss<T> distill_loss(const Tensor<T>& teacher_logits, const Var<T>& student_logits,
                            std::span<const int> lm_targets,
                            const Tensor<T>& teacher_hidden, const Var<T>& student_hidden,
                            const KdWeights& w) {
  w.validate();
  require(teacher_logits.shape() == student_logits.value().shape(),
          "distill_loss: logits shape mismatch " + shape_string(teacher_logits.shape()) +
              " vs " + shape_string(student_logits.value().shape()));
  require(teacher_hidden.shape() == student_hidden.value().shape(),
          "distill_loss: hidden state shape mismatch");
  require(!lm_targets.empty() && lm_targets.size() <= student_logits.value().rows(),
          "distill_loss: need between 1 and rows LM targets");
  const T tau = static_cast<T>(w.temperature);
  DistillLoss<T> out;
  Var<T> ce = scale(kl_rows(teacher_logits, student_logits, tau), tau * tau);
  Var<T> lm = cross_entropy_rows(take_rows(student_logits, 0, lm_targets.size()), lm_targets);
  Var<T> cs = cosine_distance_rows(student_hidden, teacher_hidden, &out.degenerate_rows);
  if (out.degenerate_rows > 0) {
    std::fprintf(stderr, "warning: distill_loss: %zu zero-norm hidden rows scored as distance 1\n",
                 out.degenerate_rows);
  }
  out.l_ce = ce.value()[0];
  out.l_lm = lm.value()[0];
  out.l_cos = cs.value()[0];
  out.total = add(add(scale(ce, static_cast<T>(w.alpha_ce)), scale(lm, static_cast<T>(w.alpha_lm))),
                  scale(cs, static_cast<T>(w.alpha_cos)));
  return out;
}

// True iff the mean of the latest window dropped by less than `rel_tolerance`
// relative to the window before it.
inline bool plateau_stop(std::span<const double> history, int window, double rel_tolerance) {
  require(window >= 2, "plateau_stop: window must be at least 2");
  const auto w = static_cast<std::size_t>(window);
  if (history.size() < 2 * w) return false;
  const auto latest = history.subspan(history.size() - w, w);
  const auto previous = history.subspan(history.size() - 2 * w, w);
  const double mp = std::accumulate(previous.begin(), previous.end(), 0.0) / double(w);
  const double ml = std::accumulate(latest.begin(), latest.end(), 0.0) / double(w);
  if (mp == 0.0) return true;
  return (mp - ml) / mp < rel_tolerance;
}

struct KdStep {
  int step = 0;
  double total = 0, l_ce = 0, l_lm = 0, l_cos = 0;
};

template <class T>
struct DistillResult {
  TransformerLM<T> student;
  std::vector<KdStep> history;
  int stopped_at = 0;  // steps actually run
  bool plateaued = false;
};

namespace detail {

template <class T>
struct GradAccumulator {
  std::vector<std::size_t> index;  // model parameter index per trainable slot
  std::vector<Tensor<T>> sum;

  GradAccumulator(const TransformerLM<T>& m, const std::vector<bool>& mask) {
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i]) continue;
      index.push_back(i);
      sum.emplace_back(m.params()[i].value.shape(), T(0));
    }
  }
  void zero() {
    for (auto& s : sum) s.fill(T(0));
  }
  void add(Tape<T>& tape, const BoundModel<T>& w) {
    for (std::size_t k = 0; k < index.size(); ++k) {
      const Var<T>& v = w.vars[index[k]];
      if (!tape.has_grad(v.id())) continue;
      const Tensor<T>& g = tape.grad(v);
      T* dst = sum[k].data();
      for (std::size_t j = 0; j < g.size(); ++j) dst[j] += g[j];
    }
  }
  void step(OptimizerState<T>& opt, TransformerLM<T>& m, T inv_batch) {
    std::vector<Tensor<T>*> ps;
    for (std::size_t k = 0; k < index.size(); ++k) {
      for (T& v : sum[k].values()) v *= inv_batch;
      ps.push_back(&m.params()[index[k]].value);
    }
    optimizer_step<T>(opt, std::span<Tensor<T>* const>(ps),
                      std::span<const Tensor<T>>(sum));
  }
};

inline std::vector<int> clip_sequence(const std::vector<int>& ids, int max_len) {
  if (static_cast<int>(ids.size()) <= max_len) return ids;
  return std::vector<int>(ids.begin(), ids.begin() + max_len);
}

}  // namespace detail

using CheckpointFn = std::function<void(int step)>;

template <class T>
DistillResult<T> distill(const TransformerLM<T>& teacher,
                         const std::vector<std::vector<int>>& kd_corpus,
                         const KdConfig& config, std::uint64_t seed,
                         const CheckpointFn& on_checkpoint = nullptr) {
  config.validate(teacher.config().n_layers);
  std::vector<std::vector<int>> seqs;
  for (const auto& s : kd_corpus) {
    if (s.size() >= 2) seqs.push_back(detail::clip_sequence(s, teacher.config().max_seq_len));
  }
  require(!seqs.empty(), "distill: corpus has no sequence of two or more tokens");

  DistillResult<T> out{init_student_from_teacher(teacher, config), {}, 0, false};
  TransformerLM<T>& student = out.student;
  const std::vector<bool> mask = kd_trainable_mask(student, config);
  detail::GradAccumulator<T> acc(student, mask);
  auto opt = OptimizerState<T>::adam(config.learning_rate);
  BatchSampler sampler(seqs.size(), seed, "distill/batches");
  std::vector<double> totals;
  const T inv_b = T(1) / static_cast<T>(config.batch_size);

  for (int step = 1; step <= config.max_steps; ++step) {
    acc.zero();
    KdStep rec{step};
    for (std::size_t idx : sampler.next(static_cast<std::size_t>(config.batch_size))) {
      const auto& ids = seqs[idx];
      Tape<T> ttape;
      ForwardResult<T> tf = forward_graph(ttape, teacher, bind_frozen(ttape, teacher),
                                          std::span<const int>(ids), nullptr);
      Tape<T> tape;
      BoundModel<T> w = bind_model(tape, student, mask);
      ForwardResult<T> sf = forward_graph(tape, student, w, std::span<const int>(ids), nullptr);
      DistillLoss<T> l = distill_loss(tf.logits.value(), sf.logits,
                                      std::span<const int>(ids).subspan(1),
                                      tf.hidden.value(), sf.hidden, config.weights);
      tape.backward(l.total);
      acc.add(tape, w);
      rec.total += l.total.value()[0];
      rec.l_ce += l.l_ce;
      rec.l_lm += l.l_lm;
      rec.l_cos += l.l_cos;
    }
    const double b = config.batch_size;
    rec.total /= b;
    rec.l_ce /= b;
    rec.l_lm /= b;
    rec.l_cos /= b;
    acc.step(opt, student, inv_b);
    out.history.push_back(rec);
    totals.push_back(rec.total);
    out.stopped_at = step;
    if (step % config.check_interval == 0) {
      if (on_checkpoint) on_checkpoint(step);
      if (plateau_stop(totals, config.plateau_window, config.plateau_tolerance)) {
        out.plateaued = true;
        break;
      }
    }
  }
  return out;
}

inline void write_kd_history_csv(std::ostream& os, const std::vector<KdStep>& h) {
  os << "step,total,l_ce,l_lm,l_cos\n";
  char buf[160];
  for (const auto& r : h) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g\n", r.step, r.total, r.l_ce,
                  r.l_lm, r.l_cos);
    os << buf;
  }
}

// ---- Plain language-model training -----------------------------------------

struct LmTrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 8;
  int max_steps = 2000;
  int eval_interval = 100;   // steps between validation evaluations
  int plateau_window = 3;    // in validation evaluations
  double plateau_tolerance = 0.005;
  std::vector<bool> trainable;  // empty: every parameter

  void validate() const {
    require(learning_rate > 0, "lm training: learning rate must be positive");
    require(batch_size > 0 && max_steps >= 0 && eval_interval > 0,
            "lm training: bad batch size, step count or eval interval");
    require(plateau_window >= 2, "lm training: plateau window must be at least 2");
  }
};

struct LmTrainHistory {
  std::vector<double> train_loss;                  // per step
  std::vector<std::pair<int, double>> validation;  // (step, mean loss)
  int stopped_at = 0;
  bool plateaued = false;
};

template <class T>
double mean_lm_loss(const TransformerLM<T>& model, const std::vector<std::vector<int>>& seqs) {
  double s = 0;
  std::size_t n = 0;
  for (const auto& ids : seqs) {
    if (ids.size() < 2) continue;
    const auto c = detail::clip_sequence(ids, model.config().max_seq_len);
    s += lm_loss(model, std::span<const int>(c));
    ++n;
  }
  return n ? s / double(n) : 0.0;
}

// Next-token training with Adam; stops when validation loss plateaus (or
// after max_steps). With an empty validation set only max_steps applies.
template <class T>
LmTrainHistory train_lm(TransformerLM<T>& model, const std::vector<std::vector<int>>& train,
                        const std::vector<std::vector<int>>& validation,
                        const LmTrainConfig& config, std::uint64_t seed) {
  config.validate();
  std::vector<std::vector<int>> seqs;
  for (const auto& s : train) {
    if (s.size() >= 2) seqs.push_back(detail::clip_sequence(s, model.config().max_seq_len));
  }
  require(!seqs.empty(), "train_lm: corpus has no sequence of two or more tokens");
  std::vector<bool> mask = config.trainable.empty()
                               ? std::vector<bool>(model.params().size(), true)
                               : config.trainable;
  detail::GradAccumulator<T> acc(model, mask);
  auto opt = OptimizerState<T>::adam(config.learning_rate);
  BatchSampler sampler(seqs.size(), seed, "train_lm/batches");
  LmTrainHistory h;
  std::vector<double> val;
  const T inv_b = T(1) / static_cast<T>(config.batch_size);
  for (int step = 1; step <= config.max_steps; ++step) {
    acc.zero();
    double total = 0;
    for (std::size_t idx : sampler.next(static_cast<std::size_t>(config.batch_size))) {
      Tape<T> tape;
      BoundModel<T> w = bind_model(tape, model, mask);
      Var<T> l = lm_loss_graph(tape, model, w, std::span<const int>(seqs[idx]), nullptr);
      tape.backward(l);
      acc.add(tape, w);
      total += l.value()[0];
    }
    acc.step(opt, model, inv_b);
    h.train_loss.push_back(total / config.batch_size);
    h.stopped_at = step;
    if (!validation.empty() && step % config.eval_interval == 0) {
      const double v = mean_lm_loss(model, validation);
      h.validation.emplace_back(step, v);
      val.push_back(v);
      if (plateau_stop(val, config.plateau_window, config.plateau_tolerance)) {
        h.plateaued = true;
        break;
      }
    }
  }
  return h;
}

}  // namespace softxfer

#endif  // SOFTXFER_DISTILL_HPP_
