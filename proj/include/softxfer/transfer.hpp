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

// Moving a student-tuned prompt onto the teacher with public data only.

#ifndef SOFTXFER_TRANSFER_HPP_
#define SOFTXFER_TRANSFER_HPP_

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "softxfer/corpus.hpp"
#include "softxfer/losses.hpp"
#include "softxfer/model.hpp"
#include "softxfer/optim.hpp"
#include "softxfer/rng.hpp"

namespace softxfer {

enum class LabelSpace { kClassDistribution, kFullVocab };
enum class TransferInit { kRegenerate, kFromTuned };

inline LabelSpace parse_label_space(const std::string& s) {
  if (s == "class_distribution") return LabelSpace::kClassDistribution;
  if (s == "full_vocab") return LabelSpace::kFullVocab;
  throw std::invalid_argument("unknown label space '" + s + "'");
}
inline const char* label_space_name(LabelSpace s) {
  return s == LabelSpace::kClassDistribution ? "class_distribution" : "full_vocab";
}
inline TransferInit parse_transfer_init(const std::string& s) {
  if (s == "regenerate") return TransferInit::kRegenerate;
  if (s == "from_tuned") return TransferInit::kFromTuned;
  throw std::invalid_argument("unknown transfer init '" + s + "'");
}

struct TransferConfig {
  double alpha = 0.5;
  int steps = 1000;
  double learning_rate = 0.001;
  int batch_size = 32;
  LabelSpace label_space = LabelSpace::kClassDistribution;
  TransferInit init = TransferInit::kRegenerate;
  std::uint64_t seed = 0;

  void validate() const {
    require(alpha >= 0 && alpha <= 1, "transfer config: alpha must lie in [0, 1]");
    require(steps >= 0, "transfer config: steps must be nonnegative");
    require(learning_rate > 0, "transfer config: learning rate must be positive");
    require(batch_size > 0, "transfer config: batch size must be positive");
  }
};

template <class T>
struct TransferLoss {
  Var<T> total;
  T l1 = 0, l2 = 0;
};

// Imitation term l1 = KL(student_prompted || teacher_prompted) and direction
// term l2 = KL(softmax(student delta) || softmax(teacher delta)), where a
// delta is prompted minus plain logits. Only `teacher_prompted` carries
// gradient. Rows are averaged.
template <class T>
TransferLoss<T> transfer_loss(const Var<T>& teacher_prompted, const Tensor<T>& teacher_plain,
                              const Tensor<T>& student_prompted, const Tensor<T>& student_plain,
                              double alpha) {
  require(alpha >= 0 && alpha <= 1, "transfer_loss: alpha must lie in [0, 1]");
  const Tensor<T>& tp = teacher_prompted.value();
  require(tp.shape() == teacher_plain.shape() && tp.shape() == student_prompted.shape() &&
              tp.shape() == student_plain.shape(),
          "transfer_loss: all four logit blocks must share a shape");
  require_finite<T>(teacher_plain.values(), "transfer_loss");
  require_finite<T>(student_plain.values(), "transfer_loss");
  Tape<T>& tape = *teacher_prompted.tape();
  Tensor<T> ds = student_prompted;
  for (std::size_t i = 0; i < ds.size(); ++i) ds[i] -= student_plain[i];
  Var<T> dt = sub(teacher_prompted, tape.constant(teacher_plain));
  Var<T> l1 = kl_rows(student_prompted, teacher_prompted);
  Var<T> l2 = kl_rows(ds, dt);
  TransferLoss<T> out;
  out.l1 = l1.value()[0];
  out.l2 = l2.value()[0];
  out.total = add(scale(l1, static_cast<T>(1 - alpha)), scale(l2, static_cast<T>(alpha)));
  return out;
}

// Answer-position outputs in the configured label space: class log
// probabilities, or the raw vocabulary logits.
template <class T>
Var<T> answer_outputs(Tape<T>& tape, const TransformerLM<T>& model, const BoundModel<T>& w,
                      std::span<const int> ids, const std::type_identity_t<Var<T>>* prompt,
                      const Verbalizers& verbalizers, LabelSpace space) {
  ForwardResult<T> f = forward_graph(tape, model, w, ids, prompt, true);
  if (space == LabelSpace::kFullVocab) return f.logits;
  return class_log_probs(f.logits, verbalizers);
}

template <class T>
Tensor<T> answer_outputs_value(const TransformerLM<T>& model, const SoftPrompt<T>* prompt,
                               std::span<const int> ids, const Verbalizers& verbalizers,
                               LabelSpace space) {
  Tape<T> tape;
  BoundModel<T> w = bind_frozen(tape, model);
  if (prompt) {
    Var<T> p = tape.constant_ref(prompt->matrix);
    return answer_outputs(tape, model, w, ids, &p, verbalizers, space).value();
  }
  return answer_outputs(tape, model, w, ids, nullptr, verbalizers, space).value();
}

struct TransferStep {
  int step = 0;
  double total = 0, l1 = 0, l2 = 0;
};

template <class T>
struct TransferResult {
  SoftPrompt<T> prompt;
  std::vector<TransferStep> history;
};

template <class T>
void check_transfer_dims(const TransformerLM<T>& teacher, const SoftPrompt<T>& p) {
  require(p.width() == static_cast<std::size_t>(teacher.config().d_model),
          "prompt/model dimension mismatch: prompt width " + std::to_string(p.width()) +
              ", teacher d_model " + std::to_string(teacher.config().d_model));
}

// Teacher prompt from the student prompt and public data. Everything but the
// new prompt is frozen. Public labels are never read.
template <class T>
TransferResult<T> transfer_prompt(const TransformerLM<T>& teacher, const TransformerLM<T>& student,
                                  const SoftPrompt<T>& p_s, const EncodedDataset& public_data,
                                  const TransferConfig& config) {
  config.validate();
  p_s.validate();
  check_transfer_dims(teacher, p_s);
  require(student.config().d_model == teacher.config().d_model,
          "prompt/model dimension mismatch: student d_model " +
              std::to_string(student.config().d_model) + ", teacher d_model " +
              std::to_string(teacher.config().d_model));
  require(public_data.size() > 0, "transfer_prompt: empty public dataset");
  const Verbalizers& verb = public_data.verbalizers;
  if (config.label_space == LabelSpace::kClassDistribution) {
    check_verbalizers(verb, static_cast<std::size_t>(teacher.config().vocab_size));
  }

  TransferResult<T> out;
  out.prompt = p_s;
  if (config.init == TransferInit::kRegenerate) {
    out.prompt.matrix = initial_prompt_matrix(p_s.length(), student, p_s.init_seed, p_s.init_scheme);
  }
  out.prompt.source_fingerprint = teacher.fingerprint();
  if (config.steps == 0) return out;

  // Frozen-side outputs do not change across steps.
  const std::size_t n = public_data.size();
  std::vector<Tensor<T>> sp(n), splain(n), tplain(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::span<const int> ids(public_data.examples[i].ids);
    sp[i] = answer_outputs_value(student, &p_s, ids, verb, config.label_space);
    splain[i] = answer_outputs_value<T>(student, nullptr, ids, verb, config.label_space);
    tplain[i] = answer_outputs_value<T>(teacher, nullptr, ids, verb, config.label_space);
  }

  Tensor<T>& P = out.prompt.matrix;
  auto opt = OptimizerState<T>::adam(config.learning_rate);
  BatchSampler sampler(n, config.seed, "transfer/batches");
  const std::size_t b = std::min<std::size_t>(n, static_cast<std::size_t>(config.batch_size));
  Tensor<T> grad(P.shape(), T(0));
  for (int step = 1; step <= config.steps; ++step) {
    grad.fill(T(0));
    TransferStep rec{step};
    for (std::size_t i : sampler.next(b)) {
      Tape<T> tape;
      BoundModel<T> w = bind_frozen(tape, teacher);
      Var<T> pv = tape.parameter(P);
      Var<T> tp = answer_outputs(tape, teacher, w, std::span<const int>(public_data.examples[i].ids),
                                 &pv, verb, config.label_space);
      TransferLoss<T> l = transfer_loss(tp, tplain[i], sp[i], splain[i], config.alpha);
      tape.backward(l.total);
      const Tensor<T>& g = tape.grad(pv);
      for (std::size_t j = 0; j < g.size(); ++j) grad[j] += g[j];
      rec.total += l.total.value()[0];
      rec.l1 += l.l1;
      rec.l2 += l.l2;
    }
    const T inv = T(1) / static_cast<T>(b);
    for (T& v : grad.values()) v *= inv;
    optimizer_step(opt, P, grad);
    rec.total /= double(b);
    rec.l1 /= double(b);
    rec.l2 /= double(b);
    out.history.push_back(rec);
  }
  return out;
}

// The student prompt applied unchanged to the teacher.
template <class T>
SoftPrompt<T> direct_transfer(const SoftPrompt<T>& p_s, const TransformerLM<T>& teacher) {
  p_s.validate();
  check_transfer_dims(teacher, p_s);
  SoftPrompt<T> out = p_s;
  out.source_fingerprint = teacher.fingerprint();
  return out;
}

// Accuracies in percent.
struct HeuristicInputs {
  double zero_shot = 0;
  double compressed = 0;
  double random_guess = 50;
};

// clamp((ZS - RG) / (C - RG), 0, 1).
inline double alpha_heuristic(const HeuristicInputs& h) {
  require(h.compressed != h.random_guess,
          "alpha_heuristic: compressed accuracy equals random guess; quotient undefined");
  const double a = (h.zero_shot - h.random_guess) / (h.compressed - h.random_guess);
  return std::clamp(a, 0.0, 1.0) + 0.0;  // no negative zero
}

inline void write_transfer_history_csv(std::ostream& os, const std::vector<TransferStep>& h) {
  os << "step,total,l1,l2\n";
  char buf[128];
  for (const auto& r : h) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g\n", r.step, r.total, r.l1, r.l2);
    os << buf;
  }
}

}  // namespace softxfer

#endif  // SOFTXFER_TRANSFER_HPP_
