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

// Config-driven orchestration: teacher pretraining, distillation, prompt
// tuning, transfer, baselines and attacks, with per-stage timings and a
// record of which stage read which dataset.

#ifndef SOFTXFER_HARNESS_HPP_
#define SOFTXFER_HARNESS_HPP_

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "softxfer/attacks.hpp"
#include "softxfer/corpus.hpp"
#include "softxfer/distill.hpp"
#include "softxfer/prompt_tune.hpp"
#include "softxfer/serialize.hpp"
#include "softxfer/transfer.hpp"

namespace softxfer {

// Bad or inconsistent configuration (exit code 2).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A pipeline stage failed (exit code 3).
struct StageError : std::runtime_error {
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("[" + stage + "] " + what), stage(std::move(stage)) {}
  std::string stage;
};

inline const std::vector<std::string>& known_baselines() {
  static const std::vector<std::string> k{"full_zs",         "full_pt", "compressed_zs",
                                          "compressed_pt",   "direct_transfer", "post",
                                          "post_dp",         "finetuned_control"};
  return k;
}

struct CsvTaskPaths {
  std::string private_train, private_test, public_data, kd_corpus;
  std::string template_suffix = kTemplateSuffix;
  std::vector<std::vector<std::string>> verbalizers;
};

struct AttackConfig {
  int n_shadows = 8;
  int pool_size = 128;
  TuneConfig tune{.epochs = 30, .learning_rate = 0.01, .batch_size = 8, .dp = std::nullopt};
  DpConfig dp;
  double mink_k = 20.0;
  int mink_samples = 200;
};

struct ExperimentConfig {
  ModelConfig teacher{.n_layers = 4, .d_model = 64, .n_heads = 4, .vocab_size = 0, .max_seq_len = 48};
  LmTrainConfig pretrain;
  double pretrain_validation_fraction = 0.1;
  KdConfig kd;
  LmTrainConfig control;  // finetuned_control training; trainable mask follows kd freeze flags
  int prompt_length = 8;
  PromptInit prompt_init = PromptInit::kGaussian;
  TuneConfig tune;
  TuneConfig tune_dp;  // used by post_dp; dp always set
  TransferConfig transfer{.steps = 1000};
  bool alpha_is_heuristic = false;
  int public_limit = 128;
  SynthTaskSpec synthetic;
  std::optional<CsvTaskPaths> csv;
  std::vector<std::string> baselines{"full_zs", "full_pt", "compressed_pt", "direct_transfer", "post"};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string output_dir = "out";
  AttackConfig attack;
  int threads = 1;
  bool strict_deterministic = false;
  std::string digest;  // of the source JSON

  bool wants(const std::string& b) const {
    return std::find(baselines.begin(), baselines.end(), b) != baselines.end();
  }
};

// ---- JSON config -----------------------------------------------------------

namespace detail {

inline void reject_unknown(const Json& j, std::initializer_list<const char*> known,
                           const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* n : known) ok = ok || k == n;
    if (!ok) throw ConfigError(where + ": unknown field '" + k + "'");
  }
}

inline LmTrainConfig lm_train_from_json(const Json& j, LmTrainConfig c, const std::string& where) {
  reject_unknown(j, {"learning_rate", "batch_size", "max_steps", "eval_interval", "plateau_window",
                     "plateau_tolerance"},
                 where);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.eval_interval = j.value("eval_interval", c.eval_interval);
  c.plateau_window = j.value("plateau_window", c.plateau_window);
  c.plateau_tolerance = j.value("plateau_tolerance", c.plateau_tolerance);
  return c;
}

inline DpConfig dp_from_json(const Json& j, DpConfig d, const std::string& where) {
  reject_unknown(j, {"epsilon", "delta", "clip_norm", "noise_multiplier"}, where);
  d.epsilon = j.value("epsilon", d.epsilon);
  d.delta = j.value("delta", d.delta);
  d.clip_norm = j.value("clip_norm", d.clip_norm);
  d.noise_multiplier = j.value("noise_multiplier", d.noise_multiplier);
  return d;
}

inline TuneConfig tune_from_json(const Json& j, TuneConfig t, const std::string& where) {
  reject_unknown(j, {"epochs", "learning_rate", "batch_size", "dp", "optimizer"}, where);
  t.epochs = j.value("epochs", t.epochs);
  t.learning_rate = j.value("learning_rate", t.learning_rate);
  t.batch_size = j.value("batch_size", t.batch_size);
  if (j.contains("optimizer")) {
    const auto o = j["optimizer"].get<std::string>();
    if (o != "adam" && o != "sgd") throw ConfigError(where + ": optimizer must be adam or sgd");
    t.optimizer = o == "adam" ? OptimizerKind::kAdam : OptimizerKind::kSgd;
  }
  if (j.contains("dp")) {
    if (j["dp"].is_null()) {
      t.dp.reset();
    } else {
      t.dp = dp_from_json(j["dp"], t.dp.value_or(DpConfig{}), where + ".dp");
    }
  }
  return t;
}

}  // namespace detail

inline ExperimentConfig experiment_from_json(const Json& j) {
  using detail::reject_unknown;
  ExperimentConfig c;
  c.tune_dp.dp = DpConfig{};
  try {
    reject_unknown(j, {"teacher", "pretrain", "kd", "control", "prompt", "tune", "tune_dp",
                       "transfer", "task", "baselines", "seeds", "output_dir", "attack", "threads"},
                   "config");
    if (j.contains("teacher")) {
      const Json& t = j["teacher"];
      reject_unknown(t, {"n_layers", "d_model", "n_heads", "max_seq_len", "tie_lm_head"}, "teacher");
      c.teacher.n_layers = t.value("n_layers", c.teacher.n_layers);
      c.teacher.d_model = t.value("d_model", c.teacher.d_model);
      c.teacher.n_heads = t.value("n_heads", c.teacher.n_heads);
      c.teacher.max_seq_len = t.value("max_seq_len", c.teacher.max_seq_len);
      c.teacher.tie_lm_head = t.value("tie_lm_head", c.teacher.tie_lm_head);
    }
    if (j.contains("pretrain")) {
      Json p = j["pretrain"];
      if (p.contains("validation_fraction")) {
        c.pretrain_validation_fraction = p["validation_fraction"].get<double>();
        p.erase("validation_fraction");
      }
      c.pretrain = detail::lm_train_from_json(p, c.pretrain, "pretrain");
    }
    c.kd.student_layer_indices = default_student_layers(c.teacher.n_layers, 2);
    if (j.contains("kd")) {
      const Json& k = j["kd"];
      reject_unknown(k, {"student_layers", "student_layer_indices", "freeze_embedding", "freeze_lm_head",
                         "weights", "learning_rate", "batch_size", "max_steps", "plateau_window",
                         "plateau_tolerance", "check_interval"},
                     "kd");
      if (k.contains("student_layers")) {
        c.kd.student_layer_indices = default_student_layers(c.teacher.n_layers, k["student_layers"].get<int>());
      }
      if (k.contains("student_layer_indices")) {
        c.kd.student_layer_indices = k["student_layer_indices"].get<std::vector<int>>();
      }
      c.kd.freeze_embedding = k.value("freeze_embedding", c.kd.freeze_embedding);
      c.kd.freeze_lm_head = k.value("freeze_lm_head", c.kd.freeze_lm_head);
      if (k.contains("weights")) {
        const Json& w = k["weights"];
        reject_unknown(w, {"alpha_ce", "alpha_lm", "alpha_cos", "temperature"}, "kd.weights");
        c.kd.weights.alpha_ce = w.value("alpha_ce", c.kd.weights.alpha_ce);
        c.kd.weights.alpha_lm = w.value("alpha_lm", c.kd.weights.alpha_lm);
        c.kd.weights.alpha_cos = w.value("alpha_cos", c.kd.weights.alpha_cos);
        c.kd.weights.temperature = w.value("temperature", c.kd.weights.temperature);
      }
      c.kd.learning_rate = k.value("learning_rate", c.kd.learning_rate);
      c.kd.batch_size = k.value("batch_size", c.kd.batch_size);
      c.kd.max_steps = k.value("max_steps", c.kd.max_steps);
      c.kd.plateau_window = k.value("plateau_window", c.kd.plateau_window);
      c.kd.plateau_tolerance = k.value("plateau_tolerance", c.kd.plateau_tolerance);
      c.kd.check_interval = k.value("check_interval", c.kd.check_interval);
    }
    // The control student sees the same optimiser budget as distillation
    // unless configured otherwise.
    c.control.learning_rate = c.kd.learning_rate;
    c.control.batch_size = c.kd.batch_size;
    c.control.max_steps = c.kd.max_steps;
    if (j.contains("control")) c.control = detail::lm_train_from_json(j["control"], c.control, "control");
    if (j.contains("prompt")) {
      const Json& p = j["prompt"];
      reject_unknown(p, {"length", "init_scheme"}, "prompt");
      c.prompt_length = p.value("length", c.prompt_length);
      if (p.contains("init_scheme")) c.prompt_init = parse_prompt_init(p["init_scheme"].get<std::string>());
    }
    if (j.contains("tune")) c.tune = detail::tune_from_json(j["tune"], c.tune, "tune");
    c.tune_dp.epochs = c.tune.epochs;
    c.tune_dp.learning_rate = c.tune.learning_rate;
    c.tune_dp.batch_size = c.tune.batch_size;
    if (j.contains("tune_dp")) c.tune_dp = detail::tune_from_json(j["tune_dp"], c.tune_dp, "tune_dp");
    if (!c.tune_dp.dp) c.tune_dp.dp = DpConfig{};
    if (j.contains("transfer")) {
      const Json& t = j["transfer"];
      reject_unknown(t, {"alpha", "steps", "learning_rate", "batch_size", "label_space", "init",
                         "public_limit"},
                     "transfer");
      if (t.contains("alpha")) {
        if (t["alpha"].is_string()) {
          if (t["alpha"].get<std::string>() != "heuristic") {
            throw ConfigError("transfer.alpha: expected a number or \"heuristic\"");
          }
          c.alpha_is_heuristic = true;
        } else {
          c.transfer.alpha = t["alpha"].get<double>();
        }
      }
      c.transfer.steps = t.value("steps", c.transfer.steps);
      c.transfer.learning_rate = t.value("learning_rate", c.transfer.learning_rate);
      c.transfer.batch_size = t.value("batch_size", c.transfer.batch_size);
      if (t.contains("label_space")) c.transfer.label_space = parse_label_space(t["label_space"].get<std::string>());
      if (t.contains("init")) c.transfer.init = parse_transfer_init(t["init"].get<std::string>());
      c.public_limit = t.value("public_limit", c.public_limit);
    }
    if (j.contains("task")) {
      const Json& t = j["task"];
      reject_unknown(t, {"synthetic", "csv"}, "task");
      if (t.contains("synthetic")) c.synthetic = spec_from_json(t["synthetic"]);
      if (t.contains("csv")) {
        const Json& s = t["csv"];
        reject_unknown(s, {"private_train", "private_test", "public", "kd_corpus", "template_suffix",
                           "verbalizers"},
                       "task.csv");
        CsvTaskPaths p;
        p.private_train = s.at("private_train").get<std::string>();
        p.private_test = s.at("private_test").get<std::string>();
        p.public_data = s.at("public").get<std::string>();
        p.kd_corpus = s.at("kd_corpus").get<std::string>();
        p.template_suffix = s.value("template_suffix", p.template_suffix);
        p.verbalizers = s.at("verbalizers").get<std::vector<std::vector<std::string>>>();
        c.csv = p;
      }
    }
    if (j.contains("baselines")) c.baselines = j["baselines"].get<std::vector<std::string>>();
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    c.output_dir = j.value("output_dir", c.output_dir);
    c.threads = j.value("threads", c.threads);
    if (j.contains("attack")) {
      const Json& a = j["attack"];
      reject_unknown(a, {"n_shadows", "pool_size", "tune", "dp", "mink_k", "mink_samples"}, "attack");
      c.attack.n_shadows = a.value("n_shadows", c.attack.n_shadows);
      c.attack.pool_size = a.value("pool_size", c.attack.pool_size);
      if (a.contains("tune")) c.attack.tune = detail::tune_from_json(a["tune"], c.attack.tune, "attack.tune");
      if (a.contains("dp")) c.attack.dp = detail::dp_from_json(a["dp"], c.attack.dp, "attack.dp");
      c.attack.mink_k = a.value("mink_k", c.attack.mink_k);
      c.attack.mink_samples = a.value("mink_samples", c.attack.mink_samples);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

// Checks that do not need the data: ranges, baseline names, file paths.
inline void validate_config(const ExperimentConfig& c) {
  try {
    ModelConfig t = c.teacher;
    t.vocab_size = std::max(t.vocab_size, 1);
    t.validate();
    c.kd.validate(c.teacher.n_layers);
    c.pretrain.validate();
    c.control.validate();
    c.tune.validate();
    c.tune_dp.validate();
    c.transfer.validate();
    c.attack.tune.validate();
    if (!c.csv) c.synthetic.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.prompt_length < 1) throw ConfigError("prompt.length must be at least 1");
  if (c.public_limit < 1) throw ConfigError("transfer.public_limit must be at least 1");
  if (c.seeds.empty()) throw ConfigError("seeds: at least one seed required");
  if (c.threads < 1) throw ConfigError("threads must be at least 1");
  if (c.pretrain_validation_fraction < 0 || c.pretrain_validation_fraction >= 1) {
    throw ConfigError("pretrain.validation_fraction must lie in [0, 1)");
  }
  if (c.attack.n_shadows < 2) throw ConfigError("attack.n_shadows must be at least 2");
  for (const auto& b : c.baselines) {
    if (std::find(known_baselines().begin(), known_baselines().end(), b) == known_baselines().end()) {
      throw ConfigError("baselines: unknown baseline '" + b + "'");
    }
  }
  if (c.csv) {
    for (const auto* p : {&c.csv->private_train, &c.csv->private_test, &c.csv->public_data, &c.csv->kd_corpus}) {
      if (!std::filesystem::exists(*p)) throw ConfigError("task.csv: file '" + *p + "' does not exist");
    }
    if (c.csv->verbalizers.size() < 2) throw ConfigError("task.csv.verbalizers: need at least two classes");
  }
}

inline std::string config_digest(const Json& j) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  Json j;
  try {
    j = Json::parse(f);
  } catch (const std::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  ExperimentConfig c = experiment_from_json(j);
  validate_config(c);
  c.digest = config_digest(j);
  return c;
}

// ---- Data-access ledger ------------------------------------------------------

enum class DatasetId { kKdCorpus, kPrivateTrain, kPrivateTest, kPublic };

inline const char* dataset_name(DatasetId d) {
  switch (d) {
    case DatasetId::kKdCorpus: return "kd_corpus";
    case DatasetId::kPrivateTrain: return "private_train";
    case DatasetId::kPrivateTest: return "private_test";
    case DatasetId::kPublic: return "public";
  }
  return "?";
}

struct AccessRecord {
  std::uint64_t seed = 0;
  std::string stage;
  std::string dataset;
  friend bool operator==(const AccessRecord&, const AccessRecord&) = default;
};

class DataLedger {
 public:
  void record(std::uint64_t seed, const std::string& stage, DatasetId d) {
    std::lock_guard<std::mutex> lock(mu_);
    AccessRecord r{seed, stage, dataset_name(d)};
    if (std::find(records_.begin(), records_.end(), r) == records_.end()) records_.push_back(r);
  }
  std::vector<AccessRecord> records() const {
    std::lock_guard<std::mutex> lock(mu_);
    return records_;
  }
  std::set<std::string> reads(const std::string& stage) const {
    std::set<std::string> out;
    for (const auto& r : records()) {
      if (r.stage == stage) out.insert(r.dataset);
    }
    return out;
  }

 private:
  mutable std::mutex mu_;
  std::vector<AccessRecord> records_;
};

// Teacher-side stages. None of them may read a private split. Any stage
// named transfer* counts, including ad hoc public-size variants.
inline bool is_provider_stage(const std::string& stage) {
  static const std::set<std::string> s{"pretrain", "kd", "control_train", "control_transfer"};
  return s.contains(stage) || stage.rfind("transfer", 0) == 0;
}

inline std::vector<AccessRecord> confidentiality_violations(const std::vector<AccessRecord>& records) {
  std::vector<AccessRecord> bad;
  for (const auto& r : records) {
    if (is_provider_stage(r.stage) && (r.dataset == "private_train" || r.dataset == "private_test")) {
      bad.push_back(r);
    }
  }
  return bad;
}

inline void write_ledger_csv(std::ostream& os, const std::vector<AccessRecord>& records) {
  os << "seed,stage,dataset\n";
  for (const auto& r : records) os << r.seed << ',' << r.stage << ',' << r.dataset << '\n';
}

// ---- Per-seed run ------------------------------------------------------------

struct StageTime {
  std::string stage;
  double seconds = 0;
  std::uint64_t seed = 0;
};

inline bool is_amortizable(const std::string& stage) { return stage == "kd" || stage == "pretrain"; }

struct TaskData {
  Vocab vocab;
  EncodedDataset private_train, private_test, public_full;
  std::vector<std::vector<int>> kd_train, kd_validation;
  std::vector<std::vector<int>> kd_all;
  Json manifest;
};

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream f(path);
  require(static_cast<bool>(f), "cannot open '" + path + "'");
  std::vector<std::string> out;
  std::string line;
  while (std::getline(f, line)) {
    if (!tokenize(line).empty()) out.push_back(line);
  }
  return out;
}

inline TaskData build_task_data(const ExperimentConfig& c, std::uint64_t seed) {
  TaskData d;
  LabeledDataset priv_train, priv_test, pub;
  std::vector<std::string> kd;
  if (c.csv) {
    kd = read_lines(c.csv->kd_corpus);
    // Vocabulary from the corpus, the verbalizers and every CSV text.
    std::vector<std::string> texts = kd;
    for (const auto& v : c.csv->verbalizers) {
      for (const auto& w : v) texts.push_back(w);
    }
    texts.push_back(c.csv->template_suffix);
    for (const auto* p : {&c.csv->private_train, &c.csv->private_test, &c.csv->public_data}) {
      std::ifstream f(*p);
      for (const auto& row : detail::parse_csv(f)) {
        if (!row.empty()) texts.push_back(row[0]);
      }
    }
    d.vocab = build_vocab(texts);
    priv_train = load_csv(c.csv->private_train, c.csv->template_suffix, c.csv->verbalizers, d.vocab, Split::kTrain);
    priv_test = load_csv(c.csv->private_test, c.csv->template_suffix, c.csv->verbalizers, d.vocab, Split::kTest);
    pub = load_csv(c.csv->public_data, c.csv->template_suffix, c.csv->verbalizers, d.vocab, Split::kTrain);
    d.manifest = {{"source", "csv"},
                  {"seed", seed},
                  {"sizes", {{"private_train", priv_train.size()}, {"private_test", priv_test.size()},
                             {"public", pub.size()}, {"kd_corpus", kd.size()}}},
                  {"verbalizers", c.csv->verbalizers}};
  } else {
    SynthTaskSpec spec = c.synthetic;
    spec.seed = derive_seed(seed, "task", c.synthetic.seed);
    SynthTask task = gen_synth_pair(spec);
    d.vocab = task_vocab(task);
    priv_train = task.private_data.subset(Split::kTrain);
    priv_test = task.private_data.subset(Split::kTest);
    pub = task.public_data;
    kd = task.kd_corpus;
    d.manifest = task_manifest(task);
  }
  d.private_train = encode_dataset(d.vocab, priv_train);
  d.private_test = encode_dataset(d.vocab, priv_test);
  d.public_full = encode_dataset(d.vocab, pub);
  for (const auto& s : kd) {
    std::vector<int> ids{Vocab::kBos};
    for (int id : d.vocab.encode(s)) ids.push_back(id);
    d.kd_all.push_back(std::move(ids));
  }
  const auto n_val = static_cast<std::size_t>(std::floor(double(d.kd_all.size()) * c.pretrain_validation_fraction));
  d.kd_train.assign(d.kd_all.begin(), d.kd_all.end() - static_cast<long>(n_val));
  d.kd_validation.assign(d.kd_all.end() - static_cast<long>(n_val), d.kd_all.end());
  return d;
}

template <class T = Real>
class SeedRun {
 public:
  SeedRun(const ExperimentConfig& config, std::uint64_t seed, DataLedger* ledger, std::string artifact_dir = "",
          bool reuse_artifacts = false)
      : c_(config), seed_(seed), ledger_(ledger), dir_(std::move(artifact_dir)), reuse_(reuse_artifacts) {
    if (!dir_.empty()) std::filesystem::create_directories(dir_);
  }

  std::uint64_t seed() const { return seed_; }
  const ExperimentConfig& config() const { return c_; }
  const std::vector<StageTime>& timings() const { return timings_; }
  const std::map<std::string, std::string>& artifacts() const { return artifacts_; }

  const TaskData& data() {
    if (!data_) {
      data_ = build_task_data(c_, seed_);
      const std::size_t need = static_cast<std::size_t>(c_.prompt_length) +
                               std::max({data_->private_train.max_length(), data_->private_test.max_length(),
                                         data_->public_full.max_length()});
      if (need > static_cast<std::size_t>(c_.teacher.max_seq_len)) {
        throw ConfigError("teacher.max_seq_len " + std::to_string(c_.teacher.max_seq_len) +
                          " is shorter than prompt length + longest templated input (" +
                          std::to_string(need) + ")");
      }
      if (!dir_.empty()) {
        std::ofstream(dir_ + "/manifest.json") << data_->manifest.dump(2) << '\n';
        std::ofstream(dir_ + "/vocab.json") << Json(data_->vocab.tokens()).dump() << '\n';
      }
    }
    return *data_;
  }

  // Stage-tagged dataset access.
  const EncodedDataset& dataset(const std::string& stage, DatasetId id) {
    note(stage, id);
    switch (id) {
      case DatasetId::kPrivateTrain: return data().private_train;
      case DatasetId::kPrivateTest: return data().private_test;
      case DatasetId::kPublic: return public_view();
      default: break;
    }
    throw std::logic_error("dataset: kd corpus is not a labelled dataset");
  }
  const std::vector<std::vector<int>>& kd_corpus(const std::string& stage) {
    note(stage, DatasetId::kKdCorpus);
    return data().kd_all;
  }

  ModelConfig teacher_config() {
    ModelConfig m = c_.teacher;
    m.vocab_size = static_cast<int>(data().vocab.size());
    return m;
  }

  const TransformerLM<T>& teacher() {
    if (!teacher_) {
      teacher_ = load_or("teacher.pstl", [&] {
        return timed("pretrain", [&] {
          TransformerLM<T> m = init_model<T>(teacher_config(), derive_seed(seed_, "teacher_init"));
          note("pretrain", DatasetId::kKdCorpus);
          pretrain_history_ = train_lm(m, data().kd_train, data().kd_validation, c_.pretrain,
                                       derive_seed(seed_, "pretrain"));
          write_lm_history("pretrain_loss.csv", pretrain_history_);
          return m;
        });
      });
    }
    return *teacher_;
  }

  const TransformerLM<T>& student() {
    if (!student_) {
      const TransformerLM<T>& t = teacher();
      student_ = load_or("student.pstl", [&] {
        return timed("kd", [&] {
          DistillResult<T> r = distill(t, kd_corpus("kd"), c_.kd, derive_seed(seed_, "kd"));
          kd_steps_ = r.stopped_at;
          if (!dir_.empty()) {
            std::ofstream f(dir_ + "/kd_loss.csv");
            write_kd_history_csv(f, r.history);
            artifacts_["kd_loss"] = dir_ + "/kd_loss.csv";
          }
          return std::move(r.student);
        });
      });
    }
    return *student_;
  }

  // Same architecture and initialisation as the student, trained on the kd
  // corpus with the plain LM loss.
  const TransformerLM<T>& control_student() {
    if (!control_) {
      const TransformerLM<T>& t = teacher();
      control_ = load_or("control.pstl", [&] {
        return timed("control_train", [&] {
          TransformerLM<T> m = init_student_from_teacher(t, c_.kd);
          LmTrainConfig lc = c_.control;
          lc.trainable = kd_trainable_mask(m, c_.kd);
          train_lm(m, kd_corpus("control_train"), {}, lc, derive_seed(seed_, "control"));
          return m;
        });
      });
    }
    return *control_;
  }

  SoftPrompt<T> fresh_prompt(const TransformerLM<T>& model, const std::string& stream) {
    return make_prompt<T>(static_cast<std::size_t>(c_.prompt_length), model, derive_seed(seed_, stream),
                          c_.prompt_init);
  }

  const SoftPrompt<T>& student_prompt() {
    if (!p_s_) p_s_ = tuned_prompt("prompt_student.pspa", "tune_student", student(), c_.tune, "p_s");
    return *p_s_;
  }
  const SoftPrompt<T>& student_prompt_dp() {
    if (!p_s_dp_) p_s_dp_ = tuned_prompt("prompt_student_dp.pspa", "tune_student_dp", student(), c_.tune_dp, "p_s_dp");
    return *p_s_dp_;
  }
  const SoftPrompt<T>& full_pt_prompt() {
    if (!p_full_) p_full_ = tuned_prompt("prompt_full_pt.pspa", "full_pt", teacher(), c_.tune, "p_full");
    return *p_full_;
  }
  const SoftPrompt<T>& control_prompt() {
    if (!p_ctrl_) p_ctrl_ = tuned_prompt("prompt_control.pspa", "control_tune", control_student(), c_.tune, "p_ctrl");
    return *p_ctrl_;
  }

  // alpha for the transfer stage, resolving the heuristic on first use.
  double alpha() {
    if (!c_.alpha_is_heuristic) return c_.transfer.alpha;
    if (!alpha_) {
      const double rg = 100.0 / data().private_test.n_classes;
      const double zs = accuracy_of("full_zs"), cpt = accuracy_of("compressed_pt");
      try {
        alpha_ = alpha_heuristic({100 * zs, 100 * cpt, rg});
      } catch (const std::invalid_argument& e) {
        throw StageError("alpha", e.what());
      }
      std::fprintf(stderr, "seed %llu: heuristic alpha %.4f\n", static_cast<unsigned long long>(seed_), *alpha_);
    }
    return *alpha_;
  }
  std::optional<double> resolved_alpha() const { return alpha_; }

  const SoftPrompt<T>& teacher_prompt() {
    if (!p_t_) p_t_ = transferred("prompt_teacher.pspa", "transfer", student(), student_prompt(), "transfer_loss.csv");
    return *p_t_;
  }
  const SoftPrompt<T>& teacher_prompt_dp() {
    if (!p_t_dp_) {
      p_t_dp_ = transferred("prompt_teacher_dp.pspa", "transfer_dp", student(), student_prompt_dp(),
                            "transfer_dp_loss.csv");
    }
    return *p_t_dp_;
  }
  const SoftPrompt<T>& control_teacher_prompt() {
    if (!p_t_ctrl_) {
      p_t_ctrl_ = transferred("prompt_teacher_control.pspa", "control_transfer", control_student(), control_prompt(),
                              "transfer_control_loss.csv");
    }
    return *p_t_ctrl_;
  }

  // Transfer with the first `limit` public examples, outside the cached
  // artifacts (public-set size comparisons).
  SoftPrompt<T> transfer_with_public(std::size_t limit, const std::string& stage) {
    const TransformerLM<T>& s = student();
    const SoftPrompt<T>& ps = student_prompt();
    note(stage, DatasetId::kPublic);
    EncodedDataset pub = data().public_full;
    if (pub.examples.size() > limit) pub.examples.resize(limit);
    TransferConfig tc = c_.transfer;
    tc.alpha = alpha();
    tc.seed = derive_seed(seed_, "transfer");
    return timed(stage, [&] { return transfer_prompt(teacher(), s, ps, pub, tc).prompt; });
  }

  double accuracy_of(const std::string& kind) {
    auto it = acc_.find(kind);
    if (it != acc_.end()) return it->second;
    const TransformerLM<T>* model = nullptr;
    const SoftPrompt<T>* prompt = nullptr;
    if (kind == "full_zs") {
      model = &teacher();
    } else if (kind == "full_pt") {
      model = &teacher(), prompt = &full_pt_prompt();
    } else if (kind == "compressed_zs") {
      model = &student();
    } else if (kind == "compressed_pt") {
      model = &student(), prompt = &student_prompt();
    } else if (kind == "direct_transfer") {
      model = &teacher();
      direct_ = direct_transfer(student_prompt(), teacher());
      prompt = &*direct_;
    } else if (kind == "post") {
      model = &teacher(), prompt = &teacher_prompt();
    } else if (kind == "post_dp") {
      model = &teacher(), prompt = &teacher_prompt_dp();
    } else if (kind == "finetuned_control") {
      model = &teacher(), prompt = &control_teacher_prompt();
    } else {
      throw StageError("eval", "unknown baseline '" + kind + "'");
    }
    const EncodedDataset& test = dataset("eval", DatasetId::kPrivateTest);
    const double a = timed("eval", [&] { return accuracy(*model, prompt, test); });
    acc_[kind] = a;
    return a;
  }

  // Accuracy of an arbitrary teacher prompt on the private test split.
  double teacher_accuracy(const SoftPrompt<T>& p) {
    const EncodedDataset& test = dataset("eval", DatasetId::kPrivateTest);
    return timed("eval", [&] { return accuracy(teacher(), &p, test); });
  }

  int kd_steps() const { return kd_steps_; }
  const LmTrainHistory& pretrain_history() const { return pretrain_history_; }

 private:
  void note(const std::string& stage, DatasetId id) {
    if (ledger_) ledger_->record(seed_, stage, id);
  }

  const EncodedDataset& public_view() {
    if (!public_) {
      EncodedDataset p = data().public_full;
      if (p.examples.size() > static_cast<std::size_t>(c_.public_limit)) {
        p.examples.resize(static_cast<std::size_t>(c_.public_limit));
      }
      public_ = std::move(p);
    }
    return *public_;
  }

  template <class F>
  auto timed(const std::string& stage, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      if constexpr (std::is_void_v<decltype(f())>) {
        f();
        add_time(stage, t0);
      } else {
        auto r = f();
        add_time(stage, t0);
        return r;
      }
    } catch (const StageError&) {
      throw;
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(stage, e.what());
    }
  }

  void add_time(const std::string& stage, std::chrono::steady_clock::time_point t0) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (auto& t : timings_) {
      if (t.stage == stage) {
        t.seconds += s;
        return;
      }
    }
    timings_.push_back({stage, s, seed_});
  }

  template <class F>
  TransformerLM<T> load_or(const std::string& file, F&& make) {
    const std::string path = dir_.empty() ? "" : dir_ + "/" + file;
    if (reuse_ && !path.empty() && std::filesystem::exists(path)) {
      LoadedModel<T> lm = load_model<T>(path);
      if (lm.model.config() != teacher_config_or(lm.model.config())) {
        throw StageError("load", path + ": vocabulary does not match the task");
      }
      artifacts_[file] = path;
      return std::move(lm.model);
    }
    TransformerLM<T> m = make();
    if (!path.empty()) {
      save_model(path, m, Json{{"seed", seed_}, {"file", file}});
      artifacts_[file] = path;
    }
    return m;
  }

  ModelConfig teacher_config_or(const ModelConfig& loaded) {
    ModelConfig m = loaded;
    m.vocab_size = static_cast<int>(data().vocab.size());
    return m;
  }

  SoftPrompt<T> tuned_prompt(const std::string& file, const std::string& stage, const TransformerLM<T>& model,
                             const TuneConfig& tc_in, const std::string& stream) {
    const std::string path = dir_.empty() ? "" : dir_ + "/" + file;
    if (reuse_ && !path.empty() && std::filesystem::exists(path)) {
      SoftPrompt<T> p = load_prompt<T>(path);
      if (p.source_fingerprint == model.fingerprint()) {
        artifacts_[file] = path;
        return p;
      }
    }
    const EncodedDataset& train = dataset(stage, DatasetId::kPrivateTrain);
    TuneConfig tc = tc_in;
    tc.seed = derive_seed(seed_, stage);
    SoftPrompt<T> init = fresh_prompt(model, stream);
    TuneResult<T> r = timed(stage, [&] { return tune_prompt(model, init, train, tc); });
    if (!path.empty()) {
      save_prompt(path, r.prompt);
      artifacts_[file] = path;
      std::ofstream f(dir_ + "/" + stage + "_history.csv");
      f << "epoch,loss,train_accuracy\n";
      for (const auto& e : r.history) f << e.epoch << ',' << e.loss << ',' << e.train_accuracy << '\n';
    }
    return std::move(r.prompt);
  }

  SoftPrompt<T> transferred(const std::string& file, const std::string& stage, const TransformerLM<T>& small,
                            const SoftPrompt<T>& ps, const std::string& csv) {
    const std::string path = dir_.empty() ? "" : dir_ + "/" + file;
    const TransformerLM<T>& t = teacher();
    if (reuse_ && !path.empty() && std::filesystem::exists(path)) {
      SoftPrompt<T> p = load_prompt<T>(path);
      if (p.source_fingerprint == t.fingerprint()) {
        artifacts_[file] = path;
        return p;
      }
    }
    TransferConfig tc = c_.transfer;
    tc.alpha = alpha();
    tc.seed = derive_seed(seed_, "transfer");
    const EncodedDataset& pub = dataset(stage, DatasetId::kPublic);
    TransferResult<T> r = timed(stage, [&] { return transfer_prompt(t, small, ps, pub, tc); });
    if (!path.empty()) {
      save_prompt(path, r.prompt);
      artifacts_[file] = path;
      std::ofstream f(dir_ + "/" + csv);
      write_transfer_history_csv(f, r.history);
    }
    return std::move(r.prompt);
  }

  void write_lm_history(const std::string& file, const LmTrainHistory& h) {
    if (dir_.empty()) return;
    std::ofstream f(dir_ + "/" + file);
    f << "step,train_loss,validation_loss\n";
    std::size_t v = 0;
    for (std::size_t i = 0; i < h.train_loss.size(); ++i) {
      f << (i + 1) << ',' << h.train_loss[i] << ',';
      if (v < h.validation.size() && h.validation[v].first == static_cast<int>(i + 1)) {
        f << h.validation[v++].second;
      }
      f << '\n';
    }
  }

  const ExperimentConfig& c_;
  std::uint64_t seed_;
  DataLedger* ledger_;
  std::string dir_;
  bool reuse_;
  std::optional<TaskData> data_;
  std::optional<EncodedDataset> public_;
  std::optional<TransformerLM<T>> teacher_, student_, control_;
  std::optional<SoftPrompt<T>> p_s_, p_s_dp_, p_full_, p_ctrl_, p_t_, p_t_dp_, p_t_ctrl_, direct_;
  std::optional<double> alpha_;
  std::map<std::string, double> acc_;
  std::vector<StageTime> timings_;
  std::map<std::string, std::string> artifacts_;
  LmTrainHistory pretrain_history_;
  int kd_steps_ = 0;
};

// ---- Attacks -------------------------------------------------------------------

struct AttackOutcome {
  AttackResult result;
  double null_auc = 0.5;
};

// LiRA against a prompt tuned on a random half of a private-train pool, on
// the student. With `dp` set, target and shadows use the DP trainer.
template <class T>
AttackOutcome run_lira(SeedRun<T>& run, bool dp, int threads = 1) {
  const ExperimentConfig& c = run.config();
  const TransformerLM<T>& model = run.student();
  EncodedDataset pool = run.dataset("attacks", DatasetId::kPrivateTrain);
  if (pool.examples.size() > static_cast<std::size_t>(c.attack.pool_size)) {
    pool.examples.resize(static_cast<std::size_t>(c.attack.pool_size));
  }
  TuneConfig tc = c.attack.tune;
  if (dp) {
    tc.dp = c.attack.dp;
  } else {
    tc.dp.reset();
  }
  const std::uint64_t seed = derive_seed(run.seed(), dp ? "attack_dp" : "attack");
  PromptTrainer<T> train = [&, tc](const EncodedDataset& subset, std::uint64_t s) {
    TuneConfig t = tc;
    t.seed = s;
    SoftPrompt<T> init = make_prompt<T>(static_cast<std::size_t>(c.prompt_length), model, derive_seed(s, "init"),
                                        c.prompt_init);
    return tune_prompt(model, init, subset, t).prompt;
  };
  Rng rng(seed, "target_members");
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng.shuffle(idx.begin(), idx.end());
  std::vector<bool> members(pool.size(), false);
  EncodedDataset target_set;
  target_set.verbalizers = pool.verbalizers;
  target_set.n_classes = pool.n_classes;
  for (std::size_t k = 0; k < pool.size() / 2; ++k) members[idx[k]] = true;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (members[i]) target_set.examples.push_back(pool.examples[i]);
  }
  const SoftPrompt<T> target = train(target_set, derive_seed(seed, "target"));
  AttackOutcome out;
  out.result = lira_attack(model, pool, train, target, members, c.attack.n_shadows, seed, threads);
  out.null_auc = shuffled_membership_auc(out.result, seed, 20);
  return out;
}

// Min-k% AUC of kd-corpus members against fresh sentences from the same
// generator, for the teacher and the distilled student.
template <class T>
std::pair<double, double> run_mink(SeedRun<T>& run) {
  const ExperimentConfig& c = run.config();
  const auto& kd = run.kd_corpus("attacks");
  const std::size_t m = std::min<std::size_t>(static_cast<std::size_t>(c.attack.mink_samples), run.data().kd_train.size());
  std::vector<std::vector<int>> members(run.data().kd_train.begin(), run.data().kd_train.begin() + static_cast<long>(m));
  (void)kd;
  SynthTaskSpec spec = c.synthetic;
  spec.seed = derive_seed(run.seed(), "mink_fresh");
  spec.n_kd = static_cast<int>(m);
  const SynthTask fresh = gen_synth_pair(spec);
  std::vector<std::vector<int>> non;
  for (const auto& s : fresh.kd_corpus) {
    std::vector<int> ids{Vocab::kBos};
    for (int id : run.data().vocab.encode(s)) ids.push_back(id);
    if (ids.size() > static_cast<std::size_t>(c.teacher.max_seq_len)) ids.resize(static_cast<std::size_t>(c.teacher.max_seq_len));
    non.push_back(std::move(ids));
  }
  for (auto& ids : members) {
    if (ids.size() > static_cast<std::size_t>(c.teacher.max_seq_len)) ids.resize(static_cast<std::size_t>(c.teacher.max_seq_len));
  }
  return {mink_auc(run.teacher(), members, non, c.attack.mink_k), mink_auc(run.student(), members, non, c.attack.mink_k)};
}

// ---- Pipeline --------------------------------------------------------------------

struct SeedReport {
  std::uint64_t seed = 0;
  std::map<std::string, double> accuracy;
  std::vector<StageTime> timings;
  std::map<std::string, std::string> artifacts;
  std::optional<double> alpha;
  std::string error;  // stage-tagged, empty on success
};

struct RunReport {
  std::string config_digest;
  std::vector<SeedReport> seeds;
  std::vector<AccessRecord> ledger;

  // Mean and (population) standard deviation over seeds that produced the
  // baseline.
  std::map<std::string, std::pair<double, double>> summary() const {
    std::map<std::string, std::vector<double>> v;
    for (const auto& s : seeds) {
      for (const auto& [k, a] : s.accuracy) v[k].push_back(a);
    }
    std::map<std::string, std::pair<double, double>> out;
    for (const auto& [k, xs] : v) {
      double m = 0;
      for (double x : xs) m += x;
      m /= double(xs.size());
      double var = 0;
      for (double x : xs) var += (x - m) * (x - m);
      out[k] = {m, std::sqrt(var / double(xs.size()))};
    }
    return out;
  }

  bool any_failed() const {
    for (const auto& s : seeds) {
      if (!s.error.empty()) return true;
    }
    return false;
  }
};

inline std::string seed_dir(const std::string& out, std::uint64_t seed) {
  return out.empty() ? "" : out + "/seed_" + std::to_string(seed);
}

// Evaluates every requested baseline for one seed.
template <class T>
SeedReport run_seed_baselines(SeedRun<T>& run, const std::vector<std::string>& baselines) {
  SeedReport r;
  r.seed = run.seed();
  try {
    for (const auto& b : baselines) r.accuracy[b] = run.accuracy_of(b);
  } catch (const ConfigError&) {
    throw;
  } catch (const StageError& e) {
    r.error = e.what();
  } catch (const std::exception& e) {
    r.error = std::string("[unknown] ") + e.what();
  }
  r.alpha = run.resolved_alpha();
  r.timings = run.timings();
  r.artifacts = run.artifacts();
  return r;
}

template <class T = Real>
RunReport run_pipeline(const ExperimentConfig& config, bool reuse_artifacts = false) {
  validate_config(config);
  RunReport report;
  report.config_digest = config.digest;
  DataLedger ledger;
  std::vector<SeedReport> seeds(config.seeds.size());
  auto work = [&](std::size_t i) {
    SeedRun<T> run(config, config.seeds[i], &ledger, seed_dir(config.output_dir, config.seeds[i]), reuse_artifacts);
    seeds[i] = run_seed_baselines(run, config.baselines);
  };
  const int threads = config.strict_deterministic ? 1 : std::min<int>(config.threads, static_cast<int>(config.seeds.size()));
  if (threads <= 1) {
    for (std::size_t i = 0; i < seeds.size(); ++i) work(i);
  } else {
    std::vector<std::thread> ts;
    std::vector<std::exception_ptr> errs(static_cast<std::size_t>(threads));
    for (int w = 0; w < threads; ++w) {
      ts.emplace_back([&, w] {
        try {
          for (std::size_t i = static_cast<std::size_t>(w); i < seeds.size(); i += static_cast<std::size_t>(threads)) work(i);
        } catch (...) {
          errs[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& t : ts) t.join();
    for (auto& e : errs) {
      if (e) std::rethrow_exception(e);
    }
  }
  report.seeds = std::move(seeds);
  // Records from parallel seeds arrive interleaved; order them.
  report.ledger = ledger.records();
  std::stable_sort(report.ledger.begin(), report.ledger.end(),
                   [](const AccessRecord& a, const AccessRecord& b) { return a.seed < b.seed; });
  return report;
}

inline Json report_to_json(const RunReport& r, const ExperimentConfig& c) {
  Json j;
  j["config_digest"] = r.config_digest;
  Json base = Json::object();
  for (const auto& [k, ms] : r.summary()) {
    Json per = Json::array();
    for (const auto& s : r.seeds) {
      auto it = s.accuracy.find(k);
      per.push_back(it == s.accuracy.end() ? Json(nullptr) : Json(it->second));
    }
    base[k] = {{"mean", ms.first}, {"std", ms.second}, {"per_seed", per}};
    if (k == "full_pt") base[k]["note"] = "upper-bound control: tuned on the teacher with private data";
  }
  j["baselines"] = base;
  Json seeds = Json::array();
  for (const auto& s : r.seeds) {
    Json sj{{"seed", s.seed}, {"artifacts", s.artifacts}};
    sj["alpha"] = s.alpha ? Json(*s.alpha) : Json(nullptr);
    Json st = Json::object();
    for (const auto& t : s.timings) st[t.stage] = t.seconds;
    sj["stage_seconds"] = st;
    sj["error"] = s.error.empty() ? Json(nullptr) : Json(s.error);
    seeds.push_back(sj);
  }
  j["seeds"] = seeds;
  j["seed_list"] = c.seeds;
  j["confidentiality_violations"] = confidentiality_violations(r.ledger).size();
  return j;
}

inline void write_metrics_csv(std::ostream& os, const RunReport& r) {
  os << "baseline,seed,accuracy\n";
  char buf[64];
  for (const auto& s : r.seeds) {
    for (const auto& [k, a] : s.accuracy) {
      std::snprintf(buf, sizeof(buf), "%.6f", a);
      os << k << ',' << s.seed << ',' << buf << '\n';
    }
  }
}

inline void write_timing_csv(std::ostream& os, const RunReport& r) {
  os << "stage,seconds,seed,amortizable\n";
  char buf[64];
  for (const auto& s : r.seeds) {
    for (const auto& t : s.timings) {
      std::snprintf(buf, sizeof(buf), "%.3f", t.seconds);
      os << t.stage << ',' << buf << ',' << t.seed << ',' << (is_amortizable(t.stage) ? 1 : 0) << '\n';
    }
  }
}

inline void write_report_files(const RunReport& r, const ExperimentConfig& c) {
  std::filesystem::create_directories(c.output_dir);
  std::ofstream(c.output_dir + "/report.json") << report_to_json(r, c).dump(2) << '\n';
  std::ofstream m(c.output_dir + "/metrics.csv");
  write_metrics_csv(m, r);
  std::ofstream t(c.output_dir + "/timing.csv");
  write_timing_csv(t, r);
  std::ofstream l(c.output_dir + "/data_access.csv");
  write_ledger_csv(l, r.ledger);
}

}  // namespace softxfer

#endif  // SOFTXFER_HARNESS_HPP_
