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

// Word-level vocabulary, templated classification datasets, CSV I/O and the
// seeded synthetic task generator.

#ifndef SOFTXFER_CORPUS_HPP_
#define SOFTXFER_CORPUS_HPP_

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "softxfer/losses.hpp"
#include "softxfer/rng.hpp"
#include "softxfer/tensor.hpp"

namespace softxfer {

// Splits on whitespace; every ASCII punctuation character becomes its own
// token. No case folding.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(ch);
    }
  }
  flush();
  return out;
}

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;

  Vocab() : Vocab(std::vector<std::string>{}) {}

  // `words` are the ordinary tokens in id order, starting at id 3.
  explicit Vocab(const std::vector<std::string>& words) {
    for (const char* s : {"<pad>", "<unk>", "<bos>"}) add(s);
    for (const auto& w : words) {
      require(!ids_.contains(w), "vocab: duplicate token '" + w + "'");
      add(w);
    }
  }

  std::size_t size() const { return tokens_.size(); }
  bool contains(const std::string& w) const { return ids_.contains(w); }
  int id(const std::string& w) const {
    auto it = ids_.find(w);
    return it == ids_.end() ? kUnk : it->second;
  }
  const std::string& token(int id) const {
    require(id >= 0 && static_cast<std::size_t>(id) < tokens_.size(),
            "vocab: id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<std::size_t>(id)];
  }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& w : tokenize(text)) ids.push_back(id(w));
    return ids;
  }

  std::string decode(std::span<const int> ids) const {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) s.push_back(' ');
      s += token(ids[i]);
    }
    return s;
  }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  void add(const std::string& w) {
    ids_.emplace(w, static_cast<int>(tokens_.size()));
    tokens_.push_back(w);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// Every observed token, by frequency descending then lexicographically.
inline Vocab build_vocab(std::span<const std::string> texts) {
  require(!texts.empty(), "build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts) {
    for (auto& w : tokenize(t)) ++counts[w];
  }
  std::vector<std::pair<std::string, std::size_t>> items(counts.begin(), counts.end());
  std::stable_sort(items.begin(), items.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  words.reserve(items.size());
  for (auto& [w, n] : items) {
    if (w != "<pad>" && w != "<unk>" && w != "<bos>") words.push_back(w);
  }
  return Vocab(words);
}

enum class Split { kTrain, kTest };

inline const char* split_name(Split s) { return s == Split::kTrain ? "train" : "test"; }

struct Example {
  std::string text;
  int label = 0;
  Split split = Split::kTrain;

  friend bool operator==(const Example&, const Example&) = default;
};

struct LabeledDataset {
  std::string name;
  std::vector<Example> examples;
  int n_classes = 2;
  std::string template_suffix = ", it was";
  std::vector<std::vector<std::string>> verbalizer_words;
  Verbalizers verbalizers;  // token ids, resolved against a vocab

  std::size_t size() const { return examples.size(); }

  LabeledDataset subset(Split s) const {
    LabeledDataset d = *this;
    d.examples.clear();
    for (const auto& e : examples) {
      if (e.split == s) d.examples.push_back(e);
    }
    return d;
  }

  LabeledDataset head(std::size_t n) const {
    LabeledDataset d = *this;
    if (d.examples.size() > n) d.examples.resize(n);
    return d;
  }

  void validate(const Vocab& vocab) const {
    require(n_classes >= 2, "dataset " + name + ": need at least two classes");
    require(verbalizers.size() == static_cast<std::size_t>(n_classes),
            "dataset " + name + ": one verbalizer set per class required");
    check_verbalizers(verbalizers, vocab.size());
    for (std::size_t i = 0; i < examples.size(); ++i) {
      require(examples[i].label >= 0 && examples[i].label < n_classes,
              "dataset " + name + ": example " + std::to_string(i) + " has label " +
                  std::to_string(examples[i].label) + " outside [0, " +
                  std::to_string(n_classes) + ")");
    }
  }
};

// Maps verbalizer words to ids; every word must already be in the vocab.
inline Verbalizers resolve_verbalizers(const std::vector<std::vector<std::string>>& words,
                                       const Vocab& vocab) {
  Verbalizers v;
  for (std::size_t c = 0; c < words.size(); ++c) {
    std::vector<int> ids;
    for (const auto& w : words[c]) {
      require(vocab.contains(w), "verbalizer word '" + w + "' for class " +
                                     std::to_string(c) + " is not in the vocabulary");
      ids.push_back(vocab.id(w));
    }
    v.push_back(std::move(ids));
  }
  check_verbalizers(v, vocab.size());
  return v;
}

// [bos] + tokens(text + suffix). The answer is predicted after the last id.
inline std::vector<int> apply_template(const Vocab& vocab, std::string_view text,
                                       std::string_view suffix) {
  require(!tokenize(text).empty(), "apply_template: empty text");
  std::vector<int> ids{Vocab::kBos};
  for (int id : vocab.encode(text)) ids.push_back(id);
  for (int id : vocab.encode(suffix)) ids.push_back(id);
  return ids;
}

inline std::vector<int> apply_template(const Vocab& vocab, std::string_view text,
                                       const LabeledDataset& ds) {
  return apply_template(vocab, text, ds.template_suffix);
}

struct EncodedExample {
  std::vector<int> ids;
  int label = 0;
};

// Templated, id-encoded form used by training and evaluation.
struct EncodedDataset {
  std::vector<EncodedExample> examples;
  Verbalizers verbalizers;
  int n_classes = 2;

  std::size_t size() const { return examples.size(); }
  std::size_t max_length() const {
    std::size_t m = 0;
    for (const auto& e : examples) m = std::max(m, e.ids.size());
    return m;
  }
};

inline EncodedDataset encode_dataset(const Vocab& vocab, const LabeledDataset& ds) {
  EncodedDataset out;
  out.verbalizers = ds.verbalizers.empty() ? resolve_verbalizers(ds.verbalizer_words, vocab)
                                           : ds.verbalizers;
  out.n_classes = ds.n_classes;
  out.examples.reserve(ds.size());
  for (const auto& e : ds.examples) {
    out.examples.push_back({apply_template(vocab, e.text, ds.template_suffix), e.label});
  }
  return out;
}

// ---- CSV -----------------------------------------------------------------

namespace detail {

// RFC 4180 records: quoted fields may contain commas, quotes ("") and
// newlines.
inline std::vector<std::vector<std::string>> parse_csv(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  char ch;
  while (in.get(ch)) {
    any = true;
    if (quoted) {
      if (ch == '"') {
        if (in.peek() == '"') {
          in.get(ch);
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        field.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (ch == '\n' || ch == '\r') {
      if (ch == '\r' && in.peek() == '\n') in.get(ch);
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      field.push_back(ch);
    }
  }
  if (any) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q.push_back('"');
    q.push_back(c);
  }
  q.push_back('"');
  return q;
}

}  // namespace detail

// Reads a "text,label" CSV. Verbalizer words are resolved against `vocab`.
inline LabeledDataset load_csv(const std::string& path, const std::string& template_suffix,
                               const std::vector<std::vector<std::string>>& verbalizer_words,
                               const Vocab& vocab, Split split = Split::kTrain) {
  std::ifstream f(path);
  require(static_cast<bool>(f), "load_csv: cannot open '" + path + "'");
  const auto rows = detail::parse_csv(f);
  require(!rows.empty(), path + ": empty file");
  int text_col = -1, label_col = -1;
  for (std::size_t i = 0; i < rows[0].size(); ++i) {
    if (rows[0][i] == "text") text_col = static_cast<int>(i);
    if (rows[0][i] == "label") label_col = static_cast<int>(i);
  }
  require(text_col >= 0 && label_col >= 0,
          path + ": header must contain columns 'text' and 'label'");
  LabeledDataset ds;
  ds.name = path;
  ds.n_classes = static_cast<int>(verbalizer_words.size());
  ds.template_suffix = template_suffix;
  ds.verbalizer_words = verbalizer_words;
  ds.verbalizers = resolve_verbalizers(verbalizer_words, vocab);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() == 1 && row[0].empty()) continue;  // blank line
    const std::string where = path + ": row " + std::to_string(r + 1);
    require(row.size() > static_cast<std::size_t>(std::max(text_col, label_col)),
            where + ": missing columns");
    int label = 0;
    std::size_t used = 0;
    try {
      label = std::stoi(row[static_cast<std::size_t>(label_col)], &used);
    } catch (const std::exception&) {
      used = 0;
    }
    require(used > 0 && used == row[static_cast<std::size_t>(label_col)].size(),
            where + ": label '" + row[static_cast<std::size_t>(label_col)] +
                "' is not an integer");
    require(label >= 0 && label < ds.n_classes,
            where + ": label " + std::to_string(label) + " outside [0, " +
                std::to_string(ds.n_classes) + ")");
    ds.examples.push_back({row[static_cast<std::size_t>(text_col)], label, split});
  }
  return ds;
}

inline void write_csv(const std::string& path, const LabeledDataset& ds) {
  std::ofstream f(path);
  require(static_cast<bool>(f), "write_csv: cannot open '" + path + "'");
  f << "text,label\n";
  for (const auto& e : ds.examples) f << detail::csv_field(e.text) << ',' << e.label << '\n';
}

// ---- Synthetic tasks -------------------------------------------------------

// Sentences are sequences of filler words with class keywords sprinkled in.
// Each class has its own keyword pool; private data draws cues from the first
// half of every pool and public data from the second half. A keyword can be
// negated ("not" + keyword of another class), which then counts for the
// sentence's own class. The distillation corpus uses the full pools and
// appends ", it was <label word>" to a fraction of its sentences.
struct SynthTaskSpec {
  int n_classes = 2;
  int keywords_per_class = 12;
  int noise_words = 60;
  int verbalizers_per_class = 3;
  int min_len = 10;
  int max_len = 20;
  double keyword_density = 0.3;
  double cross_cue_rate = 0.0;   // keyword slot drawn from another class
  double negation_rate = 0.0;    // keyword slot expressed as "not <other>"
  double kd_answer_rate = 0.5;   // kd sentences carrying ", it was <label>"
  double kd_answer_bias = 0.0;   // kd answers that name class 0 whatever the text
  double kd_label_noise = 0.0;
  double label_noise = 0.0;      // private/public label flips
  int n_private_train = 500;
  int n_private_test = 500;
  int n_public = 128;
  int n_kd = 4000;
  std::uint64_t seed = 0;

  void validate() const {
    require(n_classes >= 2, "synth spec: need at least two classes");
    require(keywords_per_class >= 2, "synth spec: keyword pool too small to split");
    require(noise_words >= 1, "synth spec: need noise words");
    require(verbalizers_per_class >= 1, "synth spec: need verbalizer words");
    require(min_len >= 1 && max_len >= min_len, "synth spec: bad sentence length range");
    require(keyword_density > 0 && keyword_density <= 1,
            "synth spec: keyword density must lie in (0, 1]");
    for (double p : {cross_cue_rate, negation_rate, kd_answer_rate, kd_label_noise,
                     label_noise}) {
      require(p >= 0 && p <= 1, "synth spec: rates must lie in [0, 1]");
    }
    require(kd_answer_bias >= 0 && kd_answer_bias < 1,
            "synth spec: kd_answer_bias must lie in [0, 1)");
    require(n_private_train >= 1 && n_private_test >= 1 && n_public >= 1 && n_kd >= 1,
            "synth spec: dataset sizes must be positive");
  }
};

inline std::string keyword(int cls, int j) {
  return "c" + std::to_string(cls) + "k" + std::to_string(j);
}
inline std::string noise_word(int j) { return "w" + std::to_string(j); }
inline std::string label_word(int cls, int j) {
  return "c" + std::to_string(cls) + "y" + std::to_string(j);
}
inline std::string class_name(int cls) { return "class" + std::to_string(cls); }
inline constexpr const char* kNegator = "not";
inline constexpr const char* kTemplateSuffix = ", it was";

struct SynthTask {
  LabeledDataset private_data;  // train and test splits, tagged
  LabeledDataset public_data;
  std::vector<std::string> kd_corpus;
  SynthTaskSpec spec;

  // Words of the generating model, whatever the sample happened to draw.
  std::vector<std::string> all_words() const {
    std::vector<std::string> w;
    for (int c = 0; c < spec.n_classes; ++c) {
      for (int j = 0; j < spec.keywords_per_class; ++j) w.push_back(keyword(c, j));
      for (int j = 0; j < spec.verbalizers_per_class; ++j) w.push_back(label_word(c, j));
    }
    for (int j = 0; j < spec.noise_words; ++j) w.push_back(noise_word(j));
    for (const auto& t : tokenize(std::string(kNegator) + kTemplateSuffix)) w.push_back(t);
    return w;
  }
};

namespace detail {

enum class CuePool { kFirstHalf, kSecondHalf, kAll };

inline std::string synth_sentence(const SynthTaskSpec& s, int cls, CuePool pool, Rng& rng) {
  const int half = s.keywords_per_class / 2;
  auto pick_keyword = [&](int c) {
    int lo = 0, hi = s.keywords_per_class - 1;
    if (pool == CuePool::kFirstHalf) hi = half - 1;
    if (pool == CuePool::kSecondHalf) lo = half;
    return keyword(c, rng.between(lo, hi));
  };
  auto other_class = [&](int c) {
    int o = rng.between(0, s.n_classes - 2);
    return o >= c ? o + 1 : o;
  };
  const int len = rng.between(s.min_len, s.max_len);
  std::string out;
  auto emit = [&out](const std::string& w) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  };
  for (int i = 0; i < len; ++i) {
    if (!rng.bernoulli(s.keyword_density)) {
      emit(noise_word(rng.between(0, s.noise_words - 1)));
      continue;
    }
    const int c = rng.bernoulli(s.cross_cue_rate) ? other_class(cls) : cls;
    if (rng.bernoulli(s.negation_rate)) {
      emit(kNegator);
      emit(pick_keyword(other_class(c)));
    } else {
      emit(pick_keyword(c));
    }
  }
  return out;
}

inline int maybe_flip(int label, double rate, int n_classes, Rng& rng) {
  if (!rng.bernoulli(rate)) return label;
  int o = rng.between(0, n_classes - 2);
  return o >= label ? o + 1 : o;
}

}  // namespace detail

inline SynthTask gen_synth_pair(const SynthTaskSpec& spec) {
  spec.validate();
  SynthTask task;
  task.spec = spec;
  std::vector<std::vector<std::string>> verb(static_cast<std::size_t>(spec.n_classes));
  for (int c = 0; c < spec.n_classes; ++c) {
    for (int j = 0; j < spec.verbalizers_per_class; ++j) verb[c].push_back(label_word(c, j));
  }
  auto make = [&](const std::string& name, std::initializer_list<std::pair<Split, int>> parts,
                  detail::CuePool pool) {
    LabeledDataset ds;
    ds.name = name;
    ds.n_classes = spec.n_classes;
    ds.template_suffix = kTemplateSuffix;
    ds.verbalizer_words = verb;
    for (auto [split, n] : parts) {
      Rng rng(spec.seed, name + "/" + split_name(split));
      // Balanced labels: cycle through classes, then shuffle.
      std::vector<int> labels(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = i % spec.n_classes;
      rng.shuffle(labels.begin(), labels.end());
      for (int y : labels) {
        std::string text = detail::synth_sentence(spec, y, pool, rng);
        ds.examples.push_back(
            {std::move(text), detail::maybe_flip(y, spec.label_noise, spec.n_classes, rng), split});
      }
    }
    return ds;
  };
  task.private_data = make("private",
                           {{Split::kTrain, spec.n_private_train}, {Split::kTest, spec.n_private_test}},
                           detail::CuePool::kFirstHalf);
  task.public_data = make("public", {{Split::kTrain, spec.n_public}}, detail::CuePool::kSecondHalf);

  Rng rng(spec.seed, "kd_corpus");
  task.kd_corpus.reserve(static_cast<std::size_t>(spec.n_kd));
  for (int i = 0; i < spec.n_kd; ++i) {
    const int y = rng.between(0, spec.n_classes - 1);
    std::string s = detail::synth_sentence(spec, y, detail::CuePool::kAll, rng);
    if (rng.bernoulli(spec.kd_answer_rate)) {
      int shown = detail::maybe_flip(y, spec.kd_label_noise, spec.n_classes, rng);
      if (rng.bernoulli(spec.kd_answer_bias)) shown = 0;
      s += std::string(kTemplateSuffix) + " " +
           label_word(shown, rng.between(0, spec.verbalizers_per_class - 1));
    }
    task.kd_corpus.push_back(std::move(s));
  }
  return task;
}

// Vocabulary over every text of a task plus the generator's word list, so
// words that happened not to be sampled still get ids.
inline Vocab task_vocab(const SynthTask& task) {
  std::vector<std::string> texts = task.kd_corpus;
  for (const auto& e : task.private_data.examples) texts.push_back(e.text);
  for (const auto& e : task.public_data.examples) texts.push_back(e.text);
  texts.push_back(kTemplateSuffix);
  std::string all;
  for (const auto& w : task.all_words()) all += w + " ";
  texts.push_back(all);
  return build_vocab(texts);
}

inline nlohmann::json spec_to_json(const SynthTaskSpec& s) {
  return {{"n_classes", s.n_classes},
          {"keywords_per_class", s.keywords_per_class},
          {"noise_words", s.noise_words},
          {"verbalizers_per_class", s.verbalizers_per_class},
          {"min_len", s.min_len},
          {"max_len", s.max_len},
          {"keyword_density", s.keyword_density},
          {"cross_cue_rate", s.cross_cue_rate},
          {"negation_rate", s.negation_rate},
          {"kd_answer_rate", s.kd_answer_rate},
          {"kd_answer_bias", s.kd_answer_bias},
          {"kd_label_noise", s.kd_label_noise},
          {"label_noise", s.label_noise},
          {"n_private_train", s.n_private_train},
          {"n_private_test", s.n_private_test},
          {"n_public", s.n_public},
          {"n_kd", s.n_kd},
          {"seed", s.seed}};
}

inline SynthTaskSpec spec_from_json(const nlohmann::json& j) {
  SynthTaskSpec s;
  static const char* const kKnown[] = {
      "n_classes",      "keywords_per_class", "noise_words",     "verbalizers_per_class",
      "min_len",        "max_len",            "keyword_density", "cross_cue_rate",
      "negation_rate",  "kd_answer_rate",     "kd_answer_bias", "kd_label_noise",
      "label_noise",    "n_private_train",    "n_private_test",  "n_public",
      "n_kd",           "seed"};
  for (const auto& [k, v] : j.items()) {
    require(std::find_if(std::begin(kKnown), std::end(kKnown),
                         [&](const char* n) { return k == n; }) != std::end(kKnown),
            "synthetic task: unknown field '" + k + "'");
  }
  s.n_classes = j.value("n_classes", s.n_classes);
  s.keywords_per_class = j.value("keywords_per_class", s.keywords_per_class);
  s.noise_words = j.value("noise_words", s.noise_words);
  s.verbalizers_per_class = j.value("verbalizers_per_class", s.verbalizers_per_class);
  s.min_len = j.value("min_len", s.min_len);
  s.max_len = j.value("max_len", s.max_len);
  s.keyword_density = j.value("keyword_density", s.keyword_density);
  s.cross_cue_rate = j.value("cross_cue_rate", s.cross_cue_rate);
  s.negation_rate = j.value("negation_rate", s.negation_rate);
  s.kd_answer_rate = j.value("kd_answer_rate", s.kd_answer_rate);
  s.kd_answer_bias = j.value("kd_answer_bias", s.kd_answer_bias);
  s.kd_label_noise = j.value("kd_label_noise", s.kd_label_noise);
  s.label_noise = j.value("label_noise", s.label_noise);
  s.n_private_train = j.value("n_private_train", s.n_private_train);
  s.n_private_test = j.value("n_private_test", s.n_private_test);
  s.n_public = j.value("n_public", s.n_public);
  s.n_kd = j.value("n_kd", s.n_kd);
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

// Dataset manifest: generating spec, seed, sizes and class names.
inline nlohmann::json task_manifest(const SynthTask& t) {
  nlohmann::json names = nlohmann::json::array();
  for (int c = 0; c < t.spec.n_classes; ++c) names.push_back(class_name(c));
  return {{"spec", spec_to_json(t.spec)},
          {"seed", t.spec.seed},
          {"sizes",
           {{"private_train", t.private_data.subset(Split::kTrain).size()},
            {"private_test", t.private_data.subset(Split::kTest).size()},
            {"public", t.public_data.size()},
            {"kd_corpus", t.kd_corpus.size()}}},
          {"class_names", names},
          {"verbalizers", t.private_data.verbalizer_words},
          {"template_suffix", t.private_data.template_suffix}};
}

}  // namespace softxfer

#endif  // SOFTXFER_CORPUS_HPP_
