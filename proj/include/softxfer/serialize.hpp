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

// Binary artifacts.
//
// Model checkpoint ("PSTL"):
//   "PSTL" | u16 version | u32 json_len | json | u32 n_tensors |
//   n_tensors x { u16 name_len | name | u8 dtype (1 = f32) | u8 rank |
//                 rank x u32 dim | little-endian f32 values }
//
// Prompt artifact ("PSPA"):
//   "PSPA" | u16 version | u32 json_len | json | l*d little-endian f32
//
// All integers are little-endian.

#ifndef SOFTXFER_SERIALIZE_HPP_
#define SOFTXFER_SERIALIZE_HPP_

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "json.hpp"
#include "softxfer/model.hpp"

namespace softxfer {

using Json = nlohmann::json;

inline constexpr std::uint16_t kCheckpointVersion = 1;
inline constexpr std::uint16_t kPromptVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 1;

using Bytes = std::vector<std::uint8_t>;

namespace detail {

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <class U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
  }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  void str16(const std::string& s) {
    require(s.size() <= 0xffff, "serialize: name too long");
    le<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
    raw(s.data(), s.size());
  }
  void str32(const std::string& s) {
    le<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  Bytes take() { return std::move(out_); }

 private:
  Bytes out_;
};

class Reader {
 public:
  Reader(const Bytes& b, std::string what) : b_(b), what_(std::move(what)) {}

  void need(std::size_t n) const {
    require(pos_ + n <= b_.size(), what_ + ": truncated file");
  }
  template <class U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<U>(b_[pos_ + i]) << (8 * i));
    }
    pos_ += sizeof(U);
    return v;
  }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::string str16() { return str(le<std::uint16_t>()); }
  std::string str32() { return str(le<std::uint32_t>()); }
  bool done() const { return pos_ == b_.size(); }

 private:
  const Bytes& b_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline void write_header(Writer& w, const char* magic, std::uint16_t version,
                         const Json& meta) {
  w.raw(magic, 4);
  w.le<std::uint16_t>(version);
  w.str32(meta.dump());
}

inline Json read_header(Reader& r, const char* magic, std::uint16_t version,
                        const std::string& what) {
  require(r.str(4) == std::string(magic, 4), what + ": bad magic bytes");
  const auto v = r.le<std::uint16_t>();
  require(v == version, what + ": unsupported format version " + std::to_string(v));
  return Json::parse(r.str32());
}

}  // namespace detail

inline Json config_to_json(const ModelConfig& c) {
  return Json{{"n_layers", c.n_layers},       {"d_model", c.d_model},
              {"n_heads", c.n_heads},         {"vocab_size", c.vocab_size},
              {"max_seq_len", c.max_seq_len}, {"tie_lm_head", c.tie_lm_head}};
}

inline ModelConfig config_from_json(const Json& j) {
  ModelConfig c;
  c.n_layers = j.value("n_layers", c.n_layers);
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.tie_lm_head = j.value("tie_lm_head", c.tie_lm_head);
  c.validate();
  return c;
}

template <class T>
Bytes encode_model(const TransformerLM<T>& model, const Json& provenance = Json::object()) {
  Json meta{{"config", config_to_json(model.config())},
            {"fingerprint", model.fingerprint()},
            {"provenance", provenance}};
  detail::Writer w;
  detail::write_header(w, "PSTL", kCheckpointVersion, meta);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(model.params().size()));
  for (const auto& p : model.params()) {
    w.str16(p.name);
    w.le<std::uint8_t>(kDtypeF32);
    w.le<std::uint8_t>(static_cast<std::uint8_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (T v : p.value.values()) w.f32(static_cast<float>(v));
  }
  return w.take();
}

template <class T>
struct LoadedModel {
  TransformerLM<T> model;
  Json meta;
};

template <class T>
LoadedModel<T> decode_model(const Bytes& bytes) {
  detail::Reader r(bytes, "checkpoint");
  Json meta = detail::read_header(r, "PSTL", kCheckpointVersion, "checkpoint");
  LoadedModel<T> out{TransformerLM<T>(config_from_json(meta.at("config"))), meta};
  auto& params = out.model.params();
  const auto n = r.le<std::uint32_t>();
  require(n == params.size(), "checkpoint: expected " + std::to_string(params.size()) +
                                  " tensors, found " + std::to_string(n));
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = r.str16();
    require(r.le<std::uint8_t>() == kDtypeF32, "checkpoint: unsupported dtype for " + name);
    Shape shape(r.le<std::uint8_t>());
    for (auto& d : shape) d = r.le<std::uint32_t>();
    Tensor<T>& dst = out.model.param(name);
    require(dst.shape() == shape, "checkpoint: shape mismatch for " + name + ": " +
                                      shape_string(shape) + " vs " +
                                      shape_string(dst.shape()));
    for (T& v : dst.values()) v = static_cast<T>(r.f32());
  }
  require(r.done(), "checkpoint: trailing bytes");
  if (meta.contains("fingerprint") && std::is_same_v<T, float>) {
    require(meta["fingerprint"].get<std::string>() == out.model.fingerprint(),
            "checkpoint: fingerprint mismatch");
  }
  return out;
}

inline DpMeta dp_meta_from_json(const Json& j) {
  DpMeta m{j.at("epsilon").get<double>(), j.at("delta").get<double>(),
           j.at("sigma").get<double>(), j.at("clip_norm").get<double>()};
  m.validate();
  return m;
}

inline Json dp_meta_to_json(const DpMeta& m) {
  return Json{{"epsilon", m.epsilon},
              {"delta", m.delta},
              {"sigma", m.sigma},
              {"clip_norm", m.clip_norm}};
}

template <class T>
Bytes encode_prompt(const SoftPrompt<T>& p) {
  p.validate();
  Json meta{{"l", p.length()},
            {"d", p.width()},
            {"init_seed", p.init_seed},
            {"init_scheme", prompt_init_name(p.init_scheme)},
            {"source_fingerprint", p.source_fingerprint},
            {"tuning_digest", p.tuning_digest}};
  meta["dp_meta"] = p.dp_meta ? dp_meta_to_json(*p.dp_meta) : Json(nullptr);
  detail::Writer w;
  detail::write_header(w, "PSPA", kPromptVersion, meta);
  for (T v : p.matrix.values()) w.f32(static_cast<float>(v));
  return w.take();
}

template <class T>
SoftPrompt<T> decode_prompt(const Bytes& bytes) {
  detail::Reader r(bytes, "prompt artifact");
  const Json meta = detail::read_header(r, "PSPA", kPromptVersion, "prompt artifact");
  SoftPrompt<T> p;
  const auto l = meta.at("l").get<std::size_t>();
  const auto d = meta.at("d").get<std::size_t>();
  require(l >= 1 && d >= 1, "prompt artifact: empty matrix");
  p.matrix = Tensor<T>::matrix(l, d);
  p.init_seed = meta.at("init_seed").get<std::uint64_t>();
  p.init_scheme = parse_prompt_init(meta.at("init_scheme").get<std::string>());
  p.source_fingerprint = meta.value("source_fingerprint", "");
  p.tuning_digest = meta.value("tuning_digest", "");
  if (meta.contains("dp_meta") && !meta["dp_meta"].is_null()) {
    p.dp_meta = dp_meta_from_json(meta["dp_meta"]);
  }
  for (T& v : p.matrix.values()) v = static_cast<T>(r.f32());
  require(r.done(), "prompt artifact: trailing bytes");
  return p;
}

inline void write_bytes(const std::string& path, const Bytes& b) {
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), "cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  require(static_cast<bool>(f), "write to '" + path + "' failed");
}

inline Bytes read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), "cannot open '" + path + "'");
  return Bytes(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

template <class T>
void save_model(const std::string& path, const TransformerLM<T>& model,
                const Json& provenance = Json::object()) {
  write_bytes(path, encode_model(model, provenance));
}

template <class T = Real>
LoadedModel<T> load_model(const std::string& path) {
  return decode_model<T>(read_bytes(path));
}

template <class T>
void save_prompt(const std::string& path, const SoftPrompt<T>& p) {
  write_bytes(path, encode_prompt(p));
}

template <class T = Real>
SoftPrompt<T> load_prompt(const std::string& path) {
  return decode_prompt<T>(read_bytes(path));
}

}  // namespace softxfer

#endif  // SOFTXFER_SERIALIZE_HPP_
