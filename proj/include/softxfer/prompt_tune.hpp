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

// Soft-prompt tuning on a frozen model, plain or with per-example clipping
// and Gaussian noise.

#ifndef SOFTXFER_PROMPT_TUNE_HPP_
#define SOFTXFER_PROMPT_TUNE_HPP_

#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <vector>

#include "softxfer/corpus.hpp"
#include "softxfer/dp.hpp"
#include "softxfer/gradcheck.hpp"
#include "softxfer/model.hpp"
#include "softxfer/optim.hpp"

namespace softxfer {

// Privacy request. Zero delta means default_delta(N); zero noise multiplier
// means calibrate against epsilon.
struct DpConfig {
  double epsilon = 8.0;
  double delta = 0.0;
  double clip_norm = 1.0;
  double noise_multiplier = 0.0;
};

struct TuneConfig {
  int epochs = 20;
  double learning_rate = 0.001;
  int batch_size = 32;
  std::optional<DpConfig> dp;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::kAdam;

  void validate() const {
    require(epochs >= 0, "tune config: epochs must be nonnegative");
    require(learning_rate > 0, "tune config: learning rate must be positive");
    require(batch_size > 0, "tune config: batch size must be positive");
    if (dp) {
      require(dp->epsilon > 0, "tune config: dp epsilon must be positive");
      require(dp->clip_norm > 0, "tune config: dp clip norm must be positive");
      require(dp->delta >= 0 && dp->delta < 1, "tune config: dp delta must lie in [0, 1)");
      require(dp->noise_multiplier >= 0, "tune config: noise multiplier must be nonnegative");
    }
  }

  // Digest of the tuning hyperparameters (no data-dependent content).
  std::string digest() const {
    std::string s = "epochs=" + std::to_string(epochs) + ";lr=" + std::to_string(learning_rate) +
                    ";batch=" + std::to_string(batch_size) + ";seed=" + std::to_string(seed) +
                    ";opt=" + (optimizer == OptimizerKind::kAdam ? "adam" : "sgd");
    if (dp) {
      s += ";eps=" + std::to_string(dp->epsilon) + ";delta=" + std::to_string(dp->delta) +
           ";clip=" + std::to_string(dp->clip_norm) +
           ";sigma=" + std::to_string(dp->noise_multiplier);
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(s)));
    return buf;
  }
};

// Negative log class probability of `label` for one templated example.
template <class T>
Var<T> example_class_loss(Tape<T>& tape, const TransformerLM<T>& model, const BoundModel<T>& w,
                          const Var<T>& prompt, std::span<const int> ids, int label,
                          const Verbalizers& verbalizers, std::vector<T>* probs = nullptr) {
  Var<T> lp = class_log_probs_graph(tape, model, w, ids, &prompt, verbalizers);
  if (probs) {
    probs->clear();
    for (T v : lp.value().values()) probs->push_back(std::exp(v));
  }
  return scale(pick(lp, static_cast<std::size_t>(label)), T(-1));
}

template <class T>
double accuracy(const TransformerLM<T>& model, const SoftPrompt<T>* prompt,
                const EncodedDataset& data) {
  require(data.size() > 0, "accuracy: empty dataset");
  check_verbalizers(data.verbalizers, static_cast<std::size_t>(model.config().vocab_size));
  std::size_t hit = 0;
  for (const auto& e : data.examples) {
    if (classify(model, prompt, std::span<const int>(e.ids), data.verbalizers).label == e.label) {
      ++hit;
    }
  }
  return double(hit) / double(data.size());
}

// Prompt-only gradients, one per example, flattened row-major.
template <class T>
std::vector<std::vector<T>> prompt_example_grads(const TransformerLM<T>& model,
                                                 const Tensor<T>& prompt,
                                                 std::span<const EncodedExample> batch,
                                                 const Verbalizers& verbalizers) {
  const Tensor<T>* params[1] = {&prompt};
  return per_example_grads<T, EncodedExample>(
      [&](Tape<T>& tape, std::span<const Var<T>> p, const EncodedExample& ex) {
        BoundModel<T> w = bind_frozen(tape, model);
        return example_class_loss(tape, model, w, p[0], std::span<const int>(ex.ids), ex.label,
                                  verbalizers);
      },
      batch, std::span<const Tensor<T>* const>(params, 1));
}

// One noisy step: per-example gradients over the prompt, clipped, summed,
// noised and divided by the expected batch size q * N.
template <class T>
void promptdpsgd_step(const TransformerLM<T>& model, Tensor<T>& prompt,
                      std::span<const EncodedExample> sampled_batch,
                      const Verbalizers& verbalizers, const DpParams& dp,
                      std::size_t dataset_size, OptimizerState<T>& opt, Rng& rng) {
  dp.validate();
  std::vector<std::vector<T>> grads;
  if (!sampled_batch.empty()) grads = prompt_example_grads(model, prompt, sampled_batch, verbalizers);
  const double expected = dp.sample_rate * double(dataset_size);
  std::vector<T> g = privatize_gradients<T>(grads, prompt.size(), dp.clip_norm,
                                            dp.noise_multiplier, expected, rng);
  const Tensor<T> gt(prompt.shape(), std::move(g));
  optimizer_step(opt, prompt, gt);
}

struct TuneEpoch {
  int epoch = 0;
  double loss = 0;          // mean over examples seen in the epoch
  double train_accuracy = 0;  // from the same forward passes
};

template <class T>
struct TuneResult {
  SoftPrompt<T> prompt;
  std::vector<TuneEpoch> history;
  std::optional<DpParams> dp;
  double spent_epsilon = 0;
};

template <class T>
TuneResult<T> tune_prompt(const TransformerLM<T>& model, const SoftPrompt<T>& init,
                          const EncodedDataset& data, const TuneConfig& config) {
  config.validate();
  init.validate();
  const ModelConfig& mc = model.config();
  require(init.width() == static_cast<std::size_t>(mc.d_model),
          "prompt/model dimension mismatch: prompt width " + std::to_string(init.width()) +
              ", model d_model " + std::to_string(mc.d_model));
  require(data.size() > 0, "tune_prompt: empty dataset");
  check_verbalizers(data.verbalizers, static_cast<std::size_t>(mc.vocab_size));

  TuneResult<T> out;
  out.prompt = init;
  out.prompt.source_fingerprint = model.fingerprint();
  out.prompt.tuning_digest = config.digest();
  out.prompt.dp_meta.reset();
  Tensor<T>& P = out.prompt.matrix;
  OptimizerState<T> opt = config.optimizer == OptimizerKind::kAdam
                              ? OptimizerState<T>::adam(config.learning_rate)
                              : OptimizerState<T>::sgd(config.learning_rate);
  const std::size_t N = data.size();

  if (config.dp) {
    DpParams dp;
    dp.clip_norm = config.dp->clip_norm;
    dp.sample_rate = std::min(1.0, double(config.batch_size) / double(N));
    const long long per_epoch = static_cast<long long>(std::llround(1.0 / dp.sample_rate));
    dp.steps = per_epoch * config.epochs;
    dp.epsilon = config.dp->epsilon;
    dp.delta = config.dp->delta > 0 ? config.dp->delta : default_delta(N);
    if (config.dp->noise_multiplier > 0) {
      dp.noise_multiplier = config.dp->noise_multiplier;
      if (dp.steps > 0) {
        const double spent = rdp_epsilon(dp.noise_multiplier, dp.sample_rate, dp.steps, dp.delta);
        require(spent <= dp.epsilon, "tune_prompt: noise multiplier " +
                                         std::to_string(dp.noise_multiplier) + " spends epsilon " +
                                         std::to_string(spent) + " > budget " +
                                         std::to_string(dp.epsilon));
      }
    } else {
      dp.noise_multiplier = dp.steps > 0 ? calibrate_sigma(dp.epsilon, dp.delta, dp.sample_rate, dp.steps)
                                         : kSigmaSearchHigh;
    }
    dp.validate();
    Rng rng(config.seed, "promptdpsgd");
    std::vector<T> probs;
    for (int ep = 1; ep <= config.epochs; ++ep) {
      TuneEpoch rec{ep};
      std::size_t seen = 0, hit = 0;
      for (long long s = 0; s < per_epoch; ++s) {
        std::vector<EncodedExample> batch;
        for (std::size_t i : poisson_sample(N, dp.sample_rate, rng)) batch.push_back(data.examples[i]);
        // Loss bookkeeping for the history only; it does not touch the update.
        for (const auto& ex : batch) {
          Tape<T> tape;
          BoundModel<T> w = bind_frozen(tape, model);
          Var<T> pv = tape.constant_ref(P);
          const T l = example_class_loss(tape, model, w, pv, std::span<const int>(ex.ids), ex.label,
                                         data.verbalizers, &probs)
                          .value()[0];
          rec.loss += l;
          hit += argmax_lowest<T>(probs) == ex.label;
          ++seen;
        }
        promptdpsgd_step(model, P, std::span<const EncodedExample>(batch), data.verbalizers, dp,
                         N, opt, rng);
      }
      if (seen) {
        rec.loss /= double(seen);
        rec.train_accuracy = double(hit) / double(seen);
      }
      out.history.push_back(rec);
    }
    out.spent_epsilon = rdp_epsilon(dp.noise_multiplier, dp.sample_rate, dp.steps, dp.delta);
    out.dp = dp;
    out.prompt.dp_meta = DpMeta{dp.epsilon, dp.delta, dp.noise_multiplier, dp.clip_norm};
    return out;
  }

  Rng rng(config.seed, "prompt_tune/order");
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Tensor<T> grad(P.shape(), T(0));
  std::vector<T> probs;
  for (int ep = 1; ep <= config.epochs; ++ep) {
    rng.shuffle(order.begin(), order.end());
    TuneEpoch rec{ep};
    std::size_t hit = 0;
    for (std::size_t start = 0; start < N; start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(N, start + static_cast<std::size_t>(config.batch_size));
      grad.fill(T(0));
      for (std::size_t k = start; k < end; ++k) {
        const EncodedExample& ex = data.examples[order[k]];
        Tape<T> tape;
        BoundModel<T> w = bind_frozen(tape, model);
        Var<T> pv = tape.parameter(P);
        Var<T> l = example_class_loss(tape, model, w, pv, std::span<const int>(ex.ids), ex.label,
                                      data.verbalizers, &probs);
        tape.backward(l);
        const Tensor<T>& g = tape.grad(pv);
        for (std::size_t j = 0; j < g.size(); ++j) grad[j] += g[j];
        rec.loss += l.value()[0];
        hit += argmax_lowest<T>(probs) == ex.label;
      }
      const T inv = T(1) / static_cast<T>(end - start);
      for (T& v : grad.values()) v *= inv;
      optimizer_step(opt, P, grad);
    }
    rec.loss /= double(N);
    rec.train_accuracy = double(hit) / double(N);
    out.history.push_back(rec);
  }
  return out;
}

}  // namespace softxfer

#endif  // SOFTXFER_PROMPT_TUNE_HPP_
