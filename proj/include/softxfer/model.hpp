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

// Decoder-only pre-norm transformer with learned positions, plus the soft
// prompt that can be prepended to its input embeddings.

#ifndef SOFTXFER_MODEL_HPP_
#define SOFTXFER_MODEL_HPP_

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <vector>

#include "softxfer/autodiff.hpp"
#include "softxfer/losses.hpp"
#include "softxfer/rng.hpp"
#include "softxfer/tensor.hpp"

namespace softxfer {

struct ModelConfig {
  int n_layers = 2;
  int d_model = 64;
  int n_heads = 4;
  int vocab_size = 256;
  int max_seq_len = 64;
  bool tie_lm_head = false;

  void validate() const {
    require(n_layers > 0, "model config: n_layers must be positive");
    require(d_model > 0, "model config: d_model must be positive");
    require(n_heads > 0, "model config: n_heads must be positive");
    require(d_model % n_heads == 0,
            "model config: d_model must be divisible by n_heads");
    require(vocab_size > 0, "model config: vocab_size must be positive");
    require(max_seq_len > 0, "model config: max_seq_len must be positive");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Per-layer parameter slots, in storage order.
enum LayerSlot : std::size_t {
  kLn1Gain,
  kLn1Bias,
  kWq,
  kBq,
  kWk,
  kBk,
  kWv,
  kBv,
  kWo,
  kBo,
  kLn2Gain,
  kLn2Bias,
  kW1,
  kB1,
  kW2,
  kB2,
  kSlotsPerLayer
};

inline const char* layer_slot_name(std::size_t slot) {
  static const char* const kNames[] = {
      "ln1.gain", "ln1.bias", "attn.wq", "attn.bq", "attn.wk", "attn.bk",
      "attn.wv",  "attn.bv",  "attn.wo", "attn.bo", "ln2.gain", "ln2.bias",
      "mlp.w1",   "mlp.b1",   "mlp.w2",  "mlp.b2"};
  return kNames[slot];
}

template <class T>
class TransformerLM {
 public:
  struct NamedParam {
    std::string name;
    Tensor<T> value;
  };

  TransformerLM() = default;

  // All weights zero, layer-norm gains one. Use init_model for random init.
  explicit TransformerLM(const ModelConfig& config) : config_(config) {
    config_.validate();
    const auto d = static_cast<std::size_t>(config_.d_model);
    const auto V = static_cast<std::size_t>(config_.vocab_size);
    const auto S = static_cast<std::size_t>(config_.max_seq_len);
    add("tok_emb", Shape{V, d});
    add("pos_emb", Shape{S, d});
    for (int l = 0; l < config_.n_layers; ++l) {
      const std::string p = "layers." + std::to_string(l) + ".";
      for (std::size_t s = 0; s < kSlotsPerLayer; ++s) {
        add(p + layer_slot_name(s), slot_shape(s));
      }
      params_[layer_index(l, kLn1Gain)].value.fill(T(1));
      params_[layer_index(l, kLn2Gain)].value.fill(T(1));
    }
    add("ln_f.gain", Shape{d});
    params_.back().value.fill(T(1));
    add("ln_f.bias", Shape{d});
    if (!config_.tie_lm_head) add("lm_head", Shape{d, V});
  }

  const ModelConfig& config() const { return config_; }
  std::vector<NamedParam>& params() { return params_; }
  const std::vector<NamedParam>& params() const { return params_; }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "model: no parameter named '" + name + "'");
    return it->second;
  }
  Tensor<T>& param(const std::string& name) { return params_[index_of(name)].value; }
  const Tensor<T>& param(const std::string& name) const {
    return params_[index_of(name)].value;
  }

  static constexpr std::size_t tok_emb_index() { return 0; }
  static constexpr std::size_t pos_emb_index() { return 1; }
  static std::size_t layer_index(int layer, std::size_t slot) {
    return 2 + static_cast<std::size_t>(layer) * kSlotsPerLayer + slot;
  }
  std::size_t ln_f_gain_index() const { return layer_index(config_.n_layers, 0); }
  std::size_t ln_f_bias_index() const { return ln_f_gain_index() + 1; }
  // Equals tok_emb_index() when the head is tied to the embedding.
  std::size_t lm_head_index() const {
    return config_.tie_lm_head ? tok_emb_index() : ln_f_gain_index() + 2;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  // Content hash of config and every parameter value, as 16 hex digits.
  std::string fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* data, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(data);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
      }
    };
    const int fields[] = {config_.n_layers,   config_.d_model,
                          config_.n_heads,    config_.vocab_size,
                          config_.max_seq_len, config_.tie_lm_head ? 1 : 0};
    mix(fields, sizeof(fields));
    for (const auto& p : params_) {
      mix(p.name.data(), p.name.size());
      mix(p.value.data(), p.value.size() * sizeof(T));
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

 private:
  Shape slot_shape(std::size_t slot) const {
    const auto d = static_cast<std::size_t>(config_.d_model);
    switch (slot) {
      case kWq:
      case kWk:
      case kWv:
      case kWo:
        return {d, d};
      case kW1:
        return {d, 4 * d};
      case kB1:
        return {4 * d};
      case kW2:
        return {4 * d, d};
      default:
        return {d};
    }
  }

  void add(std::string name, Shape shape) {
    index_[name] = params_.size();
    params_.push_back({std::move(name), Tensor<T>(std::move(shape), T(0))});
  }

  ModelConfig config_;
  std::vector<NamedParam> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Closed-form parameter count for a config.
inline std::size_t parameter_count(const ModelConfig& c) {
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto V = static_cast<std::size_t>(c.vocab_size);
  const auto S = static_cast<std::size_t>(c.max_seq_len);
  const std::size_t attention = 4 * d * d + 4 * d;
  const std::size_t mlp = 8 * d * d + 5 * d;
  const std::size_t norms = 4 * d;
  std::size_t n = V * d + S * d +
                  static_cast<std::size_t>(c.n_layers) * (attention + mlp + norms) +
                  2 * d;
  if (!c.tie_lm_head) n += d * V;
  return n;
}

// Gaussian init with std 0.02; the attention output and second MLP projection
// are scaled by 1/sqrt(2 * n_layers). Biases start at zero, gains at one.
template <class T>
TransformerLM<T> init_model(const ModelConfig& config, std::uint64_t seed) {
  TransformerLM<T> model(config);
  Rng rng(seed, "init_model");
  const double base = 0.02;
  const double out_std = base / std::sqrt(2.0 * config.n_layers);
  auto fill = [&rng](Tensor<T>& t, double std) {
    for (T& v : t.values()) v = static_cast<T>(rng.normal(0.0, std));
  };
  auto& ps = model.params();
  fill(ps[TransformerLM<T>::tok_emb_index()].value, base);
  fill(ps[TransformerLM<T>::pos_emb_index()].value, base);
  for (int l = 0; l < config.n_layers; ++l) {
    for (std::size_t s : {kWq, kWk, kWv, kW1}) {
      fill(ps[TransformerLM<T>::layer_index(l, s)].value, base);
    }
    for (std::size_t s : {kWo, kW2}) {
      fill(ps[TransformerLM<T>::layer_index(l, s)].value, out_std);
    }
  }
  if (!config.tie_lm_head) fill(ps[model.lm_head_index()].value, base);
  return model;
}

enum class PromptInit { kGaussian, kEmbeddingSample };

inline const char* prompt_init_name(PromptInit p) {
  return p == PromptInit::kGaussian ? "gaussian" : "embedding_sample";
}
inline PromptInit parse_prompt_init(const std::string& s) {
  if (s == "gaussian") return PromptInit::kGaussian;
  if (s == "embedding_sample") return PromptInit::kEmbeddingSample;
  throw std::invalid_argument("unknown prompt init scheme '" + s + "'");
}

struct DpMeta {
  double epsilon = 0;
  double delta = 0;
  double sigma = 0;
  double clip_norm = 0;

  void validate() const {
    require(epsilon > 0, "dp_meta: epsilon must be positive");
    require(delta > 0 && delta < 1, "dp_meta: delta must lie in (0, 1)");
    require(sigma > 0, "dp_meta: sigma must be positive");
    require(clip_norm > 0, "dp_meta: clip norm must be positive");
  }
  friend bool operator==(const DpMeta&, const DpMeta&) = default;
};

template <class T>
struct SoftPrompt {
  Tensor<T> matrix;  // [length x d_model]
  std::uint64_t init_seed = 0;
  PromptInit init_scheme = PromptInit::kGaussian;
  std::optional<DpMeta> dp_meta;
  std::string source_fingerprint;
  std::string tuning_digest;

  std::size_t length() const { return matrix.rows(); }
  std::size_t width() const { return matrix.cols(); }

  void validate() const {
    require(matrix.rank() == 2 && length() >= 1, "soft prompt: needs at least one row");
    if (dp_meta) dp_meta->validate();
  }
};

inline constexpr double kGaussianPromptStd = 0.5;
inline constexpr int kFirstOrdinaryToken = 3;  // ids 0..2 are specials

// Deterministic initial matrix for (length, seed, scheme). Embedding sampling
// draws rows of `model`'s token table, skipping special tokens.
template <class T>
Tensor<T> initial_prompt_matrix(std::size_t length, const TransformerLM<T>& model,
                                std::uint64_t seed, PromptInit scheme) {
  require(length >= 1, "soft prompt: length must be at least 1");
  const auto d = static_cast<std::size_t>(model.config().d_model);
  Tensor<T> m = Tensor<T>::matrix(length, d);
  Rng rng(seed, "soft_prompt_init");
  if (scheme == PromptInit::kGaussian) {
    for (T& v : m.values()) v = static_cast<T>(rng.normal(0.0, kGaussianPromptStd));
  } else {
    const Tensor<T>& emb = model.params()[TransformerLM<T>::tok_emb_index()].value;
    const std::size_t V = emb.rows();
    const std::size_t first = V > static_cast<std::size_t>(kFirstOrdinaryToken)
                                  ? static_cast<std::size_t>(kFirstOrdinaryToken)
                                  : 0;
    for (std::size_t r = 0; r < length; ++r) {
      const std::size_t tok = first + rng.index(V - first);
      auto src = emb.row(tok);
      std::copy(src.begin(), src.end(), m.row(r).begin());
    }
  }
  return m;
}

template <class T>
SoftPrompt<T> make_prompt(std::size_t length, const TransformerLM<T>& model,
                          std::uint64_t seed,
                          PromptInit scheme = PromptInit::kGaussian) {
  SoftPrompt<T> p;
  p.matrix = initial_prompt_matrix(length, model, seed, scheme);
  p.init_seed = seed;
  p.init_scheme = scheme;
  p.source_fingerprint = model.fingerprint();
  return p;
}

// Model weights bound into a tape, in the model's parameter order.
template <class T>
struct BoundModel {
  std::vector<Var<T>> vars;
};

template <class T>
BoundModel<T> bind_frozen(Tape<T>& tape, const TransformerLM<T>& model) {
  BoundModel<T> b;
  b.vars.reserve(model.params().size());
  for (const auto& p : model.params()) b.vars.push_back(tape.constant_ref(p.value));
  return b;
}

// `trainable[i]` selects which parameters carry gradients.
template <class T>
BoundModel<T> bind_model(Tape<T>& tape, const TransformerLM<T>& model,
                   const std::vector<bool>& trainable) {
  require(trainable.size() == model.params().size(),
          "bind_model: trainable mask does not match parameter count");
  BoundModel<T> b;
  b.vars.reserve(model.params().size());
  for (std::size_t i = 0; i < trainable.size(); ++i) {
    const Tensor<T>& v = model.params()[i].value;
    b.vars.push_back(trainable[i] ? tape.parameter(v) : tape.constant_ref(v));
  }
  return b;
}

template <class T>
struct ForwardResult {
  Var<T> logits;  // [rows x vocab]
  Var<T> hidden;  // final normalised hidden states [rows x d]
  std::size_t prompt_length = 0;
};

// Builds the forward graph. Rows of the input are [prompt; tokens] at
// positions 0..l+n-1. With `last_row_only` the head is applied to the final
// position alone.
template <class T>
ForwardResult<T> forward_graph(Tape<T>& /*tape*/, const TransformerLM<T>& model,
                               const BoundModel<T>& w, std::span<const int> ids,
                               const std::type_identity_t<Var<T>>* prompt, bool last_row_only = false) {
  const ModelConfig& c = model.config();
  require(!ids.empty(), "forward: empty token sequence");
  const std::size_t l = prompt ? prompt->value().rows() : 0;
  if (prompt) {
    require(prompt->value().cols() == static_cast<std::size_t>(c.d_model),
            "prompt/model dimension mismatch: prompt width " +
                std::to_string(prompt->value().cols()) + ", model d_model " +
                std::to_string(c.d_model));
  }
  require(l + ids.size() <= static_cast<std::size_t>(c.max_seq_len),
          "forward: sequence of " + std::to_string(l + ids.size()) +
              " positions exceeds max_seq_len " + std::to_string(c.max_seq_len));
  for (int id : ids) {
    require(id >= 0 && id < c.vocab_size,
            "forward: token id " + std::to_string(id) + " out of vocabulary");
  }
  using M = TransformerLM<T>;
  const auto& v = w.vars;
  Var<T> x = embed(v[M::tok_emb_index()], ids);
  if (prompt) x = concat_rows(*prompt, x);
  const std::size_t n = x.value().rows();
  x = add(x, take_rows(v[M::pos_emb_index()], 0, n));
  const auto heads = static_cast<std::size_t>(c.n_heads);
  for (int layer = 0; layer < c.n_layers; ++layer) {
    auto P = [&](std::size_t slot) -> const Var<T>& {
      return v[M::layer_index(layer, slot)];
    };
    Var<T> h = layer_norm(x, P(kLn1Gain), P(kLn1Bias));
    Var<T> q = add_bias(matmul(h, P(kWq)), P(kBq));
    Var<T> k = add_bias(matmul(h, P(kWk)), P(kBk));
    Var<T> val = add_bias(matmul(h, P(kWv)), P(kBv));
    Var<T> a = causal_attention(q, k, val, heads);
    x = add(x, add_bias(matmul(a, P(kWo)), P(kBo)));
    h = layer_norm(x, P(kLn2Gain), P(kLn2Bias));
    h = gelu(add_bias(matmul(h, P(kW1)), P(kB1)));
    x = add(x, add_bias(matmul(h, P(kW2)), P(kB2)));
  }
  if (last_row_only) x = take_rows(x, n - 1, 1);
  Var<T> hidden = layer_norm(x, v[model.ln_f_gain_index()], v[model.ln_f_bias_index()]);
  Var<T> logits = c.tie_lm_head ? matmul_bt(hidden, v[M::tok_emb_index()])
                                : matmul(hidden, v[model.lm_head_index()]);
  return {logits, hidden, l};
}

// Logits for every position, [(l + n) x vocab].
template <class T>
Tensor<T> forward(const TransformerLM<T>& model, std::span<const int> ids,
                  const SoftPrompt<T>* prompt = nullptr) {
  Tape<T> tape;
  BoundModel<T> w = bind_frozen(tape, model);
  if (prompt) {
    Var<T> p = tape.constant_ref(prompt->matrix);
    return forward_graph(tape, model, w, ids, &p).logits.value();
  }
  return forward_graph(tape, model, w, ids, nullptr).logits.value();
}

// Mean next-token cross-entropy over the real tokens. Prompt positions and
// the final position emit no target.
template <class T>
Var<T> lm_loss_graph(Tape<T>& tape, const TransformerLM<T>& model,
                     const BoundModel<T>& w, std::span<const int> ids,
                     const std::type_identity_t<Var<T>>* prompt, ForwardResult<T>* out = nullptr) {
  require(ids.size() >= 2, "lm_loss: need at least two tokens");
  ForwardResult<T> f = forward_graph(tape, model, w, ids, prompt);
  if (out) *out = f;
  Var<T> rows = take_rows(f.logits, f.prompt_length, ids.size() - 1);
  return cross_entropy_rows(rows, ids.subspan(1));
}

template <class T>
T lm_loss(const TransformerLM<T>& model, std::span<const int> ids,
          const SoftPrompt<T>* prompt = nullptr) {
  Tape<T> tape;
  BoundModel<T> w = bind_frozen(tape, model);
  if (prompt) {
    Var<T> p = tape.constant_ref(prompt->matrix);
    return lm_loss_graph(tape, model, w, ids, &p).value()[0];
  }
  return lm_loss_graph(tape, model, w, ids, nullptr).value()[0];
}

// Log class distribution [1 x classes] at the answer position (the final
// input position).
template <class T>
Var<T> class_log_probs_graph(Tape<T>& tape, const TransformerLM<T>& model,
                             const BoundModel<T>& w, std::span<const int> ids,
                             const std::type_identity_t<Var<T>>* prompt, const Verbalizers& verbalizers) {
  ForwardResult<T> f = forward_graph(tape, model, w, ids, prompt, true);
  return class_log_probs(f.logits, verbalizers);
}

template <class T>
struct Classification {
  int label = 0;
  std::vector<T> probs;
};

// Argmax with ties going to the lowest class id.
template <class T>
int argmax_lowest(std::span<const T> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<int>(best);
}

template <class T>
Classification<T> classify_logits(std::span<const T> answer_logits,
                                  const Verbalizers& verbalizers) {
  Classification<T> out;
  out.probs = label_set_probability<T>(answer_logits, verbalizers);
  out.label = argmax_lowest<T>(out.probs);
  return out;
}

template <class T>
Classification<T> classify(const TransformerLM<T>& model, const SoftPrompt<T>* prompt,
                           std::span<const int> ids, const Verbalizers& verbalizers) {
  check_verbalizers(verbalizers, static_cast<std::size_t>(model.config().vocab_size));
  Tape<T> tape;
  BoundModel<T> w = bind_frozen(tape, model);
  Var<T> p;
  if (prompt) p = tape.constant_ref(prompt->matrix);
  ForwardResult<T> f = forward_graph(tape, model, w, ids, prompt ? &p : nullptr, true);
  return classify_logits<T>(f.logits.value().values(), verbalizers);
}

}  // namespace softxfer

#endif  // SOFTXFER_MODEL_HPP_
