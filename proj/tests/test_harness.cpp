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

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "softxfer/harness.hpp"

namespace softxfer {
namespace {

namespace fs = std::filesystem;

std::string temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("softxfer_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

// A pipeline small enough to run in a few seconds.
Json tiny_json() {
  return Json::parse(R"({
    "teacher": {"n_layers": 2, "d_model": 16, "n_heads": 2, "max_seq_len": 24},
    "pretrain": {"learning_rate": 0.003, "batch_size": 8, "max_steps": 40, "eval_interval": 20},
    "kd": {"student_layers": 1, "max_steps": 10},
    "prompt": {"length": 2, "init_scheme": "embedding_sample"},
    "tune": {"epochs": 1, "learning_rate": 0.01, "batch_size": 8},
    "transfer": {"alpha": 0.5, "steps": 5, "batch_size": 8},
    "task": {"synthetic": {"keywords_per_class": 4, "noise_words": 10, "min_len": 3, "max_len": 6,
                           "n_private_train": 16, "n_private_test": 16, "n_public": 16, "n_kd": 80}},
    "baselines": ["full_zs", "compressed_pt", "direct_transfer", "post", "finetuned_control"],
    "seeds": [1, 2]
  })");
}

ExperimentConfig tiny_config(const std::string& out = "", Json j = tiny_json()) {
  ExperimentConfig c = experiment_from_json(j);
  validate_config(c);
  c.digest = config_digest(j);
  c.output_dir = out;
  return c;
}

std::string write_json(const std::string& dir, const Json& j) {
  const std::string path = dir + "/config.json";
  std::ofstream(path) << j.dump(2);
  return path;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// ---- Config --------------------------------------------------------------------

TEST(Config, DefaultDemoConfigLoads) {
  const ExperimentConfig c = load_config(SOFTXFER_SOURCE_DIR "/configs/default.json");
  EXPECT_EQ(c.teacher.n_layers, 4);
  EXPECT_EQ(c.teacher.d_model, 64);
  EXPECT_EQ(c.kd.student_layer_indices, (std::vector<int>{0, 3}));
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_EQ(c.digest.size(), 16u);
}

TEST(Config, UnknownKeysRejectedAtEveryLevel) {
  for (const char* ptr : {"/bogus", "/teacher/bogus", "/kd/weights/bogus", "/tune/bogus", "/tune/dp/bogus",
                          "/transfer/bogus", "/task/synthetic/bogus", "/attack/bogus"}) {
    Json j = tiny_json();
    j["tune"]["dp"] = Json::object();
    j["kd"]["weights"] = Json::object();
    j["attack"] = Json::object();
    j[Json::json_pointer(ptr)] = 1;
    EXPECT_THROW(experiment_from_json(j), ConfigError) << ptr;
  }
}

TEST(Config, RangeAndNameErrors) {
  auto bad = [](auto edit) {
    Json j = tiny_json();
    edit(j);
    return [j] { validate_config(experiment_from_json(j)); };
  };
  EXPECT_THROW(bad([](Json& j) { j["baselines"] = {"full_zs", "oracle"}; })(), ConfigError);
  EXPECT_THROW(bad([](Json& j) { j["seeds"] = Json::array(); })(), ConfigError);
  EXPECT_THROW(bad([](Json& j) { j["transfer"]["alpha"] = "auto"; })(), ConfigError);
  EXPECT_THROW(bad([](Json& j) { j["transfer"]["alpha"] = 1.5; })(), ConfigError);
  EXPECT_THROW(bad([](Json& j) { j["kd"]["student_layers"] = 3; })(), ConfigError);
  EXPECT_THROW(bad([](Json& j) { j["tune"]["epochs"] = "ten"; })(), ConfigError);
  EXPECT_THROW(bad([](Json& j) { j["prompt"]["init_scheme"] = "zeros"; })(), ConfigError);
  EXPECT_NO_THROW(bad([](Json& j) { j["transfer"]["alpha"] = "heuristic"; })());
}

TEST(Config, CsvPathsResolvedBeforeRun) {
  Json j = tiny_json();
  j["task"] = {{"csv", {{"private_train", "/nonexistent/a.csv"}, {"private_test", "/nonexistent/b.csv"},
                        {"public", "/nonexistent/c.csv"}, {"kd_corpus", "/nonexistent/d.txt"},
                        {"verbalizers", {{"good"}, {"bad"}}}}}};
  try {
    validate_config(experiment_from_json(j));
    FAIL() << "missing file accepted";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/a.csv"), std::string::npos);
  }
}

TEST(Config, LoadErrorsAreConfigErrors) {
  const std::string dir = temp_dir("load");
  EXPECT_THROW(load_config(dir + "/missing.json"), ConfigError);
  std::ofstream(dir + "/broken.json") << "{\"seeds\": [1,";
  EXPECT_THROW(load_config(dir + "/broken.json"), ConfigError);
}

TEST(Config, DigestFollowsContent) {
  Json a = tiny_json(), b = tiny_json();
  EXPECT_EQ(config_digest(a), config_digest(b));
  b["seeds"] = {1, 3};
  EXPECT_NE(config_digest(a), config_digest(b));
}

// ---- Ledger ------------------------------------------------------------------------

TEST(DataLedger, DeduplicatesAndFlagsProviderReads) {
  DataLedger l;
  l.record(1, "kd", DatasetId::kKdCorpus);
  l.record(1, "kd", DatasetId::kKdCorpus);
  l.record(1, "tune_student", DatasetId::kPrivateTrain);
  EXPECT_EQ(l.records().size(), 2u);
  EXPECT_TRUE(confidentiality_violations(l.records()).empty());
  l.record(1, "transfer", DatasetId::kPrivateTrain);
  l.record(2, "kd", DatasetId::kPrivateTest);
  const auto bad = confidentiality_violations(l.records());
  ASSERT_EQ(bad.size(), 2u);
  EXPECT_EQ(bad[0].stage, "transfer");
  std::ostringstream os;
  write_ledger_csv(os, l.records());
  EXPECT_EQ(os.str().substr(0, 19), "seed,stage,dataset\n");
}

// ---- Pipeline ------------------------------------------------------------------------

TEST(Pipeline, FullZsOnlySkipsDistillationAndTuning) {
  Json j = tiny_json();
  j["baselines"] = {"full_zs"};
  const std::string dir = temp_dir("lazy");
  const RunReport r = run_pipeline<float>(tiny_config(dir, j));
  for (const auto& s : r.seeds) {
    ASSERT_TRUE(s.error.empty()) << s.error;
    std::set<std::string> stages;
    for (const auto& t : s.timings) stages.insert(t.stage);
    EXPECT_EQ(stages, (std::set<std::string>{"pretrain", "eval"}));
    EXPECT_TRUE(fs::exists(seed_dir(dir, s.seed) + "/teacher.pstl"));
    EXPECT_FALSE(fs::exists(seed_dir(dir, s.seed) + "/student.pstl"));
  }
  for (const auto& rec : r.ledger) EXPECT_NE(rec.stage, "kd");
}

TEST(Pipeline, ProviderStagesNeverReadPrivateData) {
  const RunReport r = run_pipeline<float>(tiny_config());
  ASSERT_FALSE(r.any_failed());
  EXPECT_TRUE(confidentiality_violations(r.ledger).empty());
  std::map<std::string, std::set<std::string>> reads;
  for (const auto& rec : r.ledger) reads[rec.stage].insert(rec.dataset);
  EXPECT_EQ(reads["pretrain"], (std::set<std::string>{"kd_corpus"}));
  EXPECT_EQ(reads["kd"], (std::set<std::string>{"kd_corpus"}));
  EXPECT_EQ(reads["transfer"], (std::set<std::string>{"public"}));
  EXPECT_EQ(reads["control_train"], (std::set<std::string>{"kd_corpus"}));
  EXPECT_EQ(reads["control_transfer"], (std::set<std::string>{"public"}));
  EXPECT_EQ(reads["tune_student"], (std::set<std::string>{"private_train"}));
  EXPECT_EQ(reads["eval"], (std::set<std::string>{"private_test"}));
}

TEST(Pipeline, FullPtIsTheOnlyTeacherStageOnPrivateTrain) {
  Json j = tiny_json();
  j["baselines"] = {"full_pt", "post"};
  const RunReport r = run_pipeline<float>(tiny_config("", j));
  std::set<std::string> private_readers;
  for (const auto& rec : r.ledger) {
    if (rec.dataset == "private_train") private_readers.insert(rec.stage);
  }
  EXPECT_EQ(private_readers, (std::set<std::string>{"full_pt", "tune_student"}));
  EXPECT_TRUE(confidentiality_violations(r.ledger).empty());
}

TEST(Pipeline, StrictModeReproducesAccuracyBytes) {
  ExperimentConfig c = tiny_config();
  c.strict_deterministic = true;
  std::ostringstream a, b;
  write_metrics_csv(a, run_pipeline<float>(c));
  write_metrics_csv(b, run_pipeline<float>(c));
  EXPECT_EQ(a.str(), b.str());
  c.strict_deterministic = false;
  c.threads = 2;  // seeds on separate threads, merged by index
  std::ostringstream p;
  write_metrics_csv(p, run_pipeline<float>(c));
  EXPECT_EQ(p.str(), a.str());
}

TEST(Pipeline, ReportFilesAndLayout) {
  const std::string dir = temp_dir("report");
  Json j = tiny_json();
  j["baselines"] = {"full_zs", "full_pt", "compressed_pt", "post"};
  const ExperimentConfig c = tiny_config(dir, j);
  const RunReport r = run_pipeline<float>(c);
  write_report_files(r, c);
  for (const char* f : {"report.json", "metrics.csv", "timing.csv", "data_access.csv"}) {
    EXPECT_TRUE(fs::exists(dir + "/" + f)) << f;
  }
  const Json rep = Json::parse(slurp(dir + "/report.json"));
  EXPECT_EQ(rep["config_digest"], c.digest);
  EXPECT_EQ(rep["baselines"]["post"]["per_seed"].size(), 2u);
  EXPECT_TRUE(rep["baselines"]["full_pt"].contains("note"));
  EXPECT_FALSE(rep["baselines"]["post"].contains("note"));
  EXPECT_EQ(rep["confidentiality_violations"], 0);
  for (const auto& [k, v] : rep["baselines"].items()) {
    EXPECT_GE(v["mean"].get<double>(), 0.0);
    EXPECT_LE(v["mean"].get<double>(), 1.0);
  }

  const std::string metrics = slurp(dir + "/metrics.csv");
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')), "baseline,seed,accuracy");
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 1 + 4 * 2);

  std::ifstream t(dir + "/timing.csv");
  std::string line;
  std::getline(t, line);
  EXPECT_EQ(line, "stage,seconds,seed,amortizable");
  std::set<std::string> stages;
  while (std::getline(t, line)) {
    const std::string stage = line.substr(0, line.find(','));
    stages.insert(stage);
    EXPECT_EQ(line.back(), (stage == "kd" || stage == "pretrain") ? '1' : '0') << line;
  }
  EXPECT_EQ(stages, (std::set<std::string>{"pretrain", "eval", "full_pt", "kd", "tune_student", "transfer"}));

  const std::string s1 = seed_dir(dir, 1);
  for (const char* f : {"teacher.pstl", "student.pstl", "prompt_student.pspa", "prompt_teacher.pspa",
                        "prompt_full_pt.pspa", "kd_loss.csv", "transfer_loss.csv", "pretrain_loss.csv",
                        "manifest.json", "vocab.json"}) {
    EXPECT_TRUE(fs::exists(s1 + "/" + f)) << f;
  }
}

TEST(Pipeline, EvaluatingTwiceGivesTheSameAccuracy) {
  const ExperimentConfig c = tiny_config();
  SeedRun<float> run(c, 1, nullptr);
  const double a = run.accuracy_of("post");
  EXPECT_EQ(run.teacher_accuracy(run.teacher_prompt()), a);
  EXPECT_EQ(run.accuracy_of("post"), a);
}

TEST(Pipeline, HeuristicAlphaResolvedFromMeasuredAccuracies) {
  Json j = tiny_json();
  j["transfer"]["alpha"] = "heuristic";
  j["baselines"] = {"post"};
  j["pretrain"]["max_steps"] = 200;
  j["tune"]["epochs"] = 10;
  j["task"]["synthetic"]["n_private_train"] = 64;
  const ExperimentConfig c = tiny_config("", j);
  SeedRun<float> run(c, 1, nullptr);
  const double post = run.accuracy_of("post");
  ASSERT_TRUE(run.resolved_alpha().has_value());
  EXPECT_DOUBLE_EQ(*run.resolved_alpha(),
                   alpha_heuristic({100 * run.accuracy_of("full_zs"), 100 * run.accuracy_of("compressed_pt"), 50.0}));
  EXPECT_GE(post, 0.0);
  const RunReport r = run_pipeline<float>(c);
  for (const auto& s : r.seeds) EXPECT_TRUE(s.alpha.has_value());
}

TEST(Pipeline, UndefinedHeuristicAlphaIsAStageFailure) {
  // An untuned prompt on a barely trained student sits at the random-guess
  // rate, where the heuristic is undefined.
  Json j = tiny_json();
  j["transfer"]["alpha"] = "heuristic";
  j["tune"]["epochs"] = 0;
  j["baselines"] = {"post"};
  j["seeds"] = {1};
  const RunReport r = run_pipeline<float>(tiny_config("", j));
  ASSERT_EQ(r.seeds.size(), 1u);
  EXPECT_EQ(r.seeds[0].error.rfind("[alpha]", 0), 0u) << r.seeds[0].error;
}

TEST(Pipeline, ReusedArtifactsGiveTheSameResult) {
  const std::string dir = temp_dir("reuse");
  Json j = tiny_json();
  j["baselines"] = {"compressed_pt", "post"};
  const ExperimentConfig c = tiny_config(dir, j);
  const RunReport first = run_pipeline<float>(c);
  const RunReport again = run_pipeline<float>(c, true);
  std::ostringstream a, b;
  write_metrics_csv(a, first);
  write_metrics_csv(b, again);
  EXPECT_EQ(a.str(), b.str());
  for (const auto& s : again.seeds) {
    for (const auto& t : s.timings) EXPECT_EQ(t.stage, "eval");  // nothing retrained
  }
}

TEST(Pipeline, StageFailureIsTaggedAndOtherSeedsProceed) {
  const std::string dir = temp_dir("failure");
  Json j = tiny_json();
  j["baselines"] = {"compressed_pt"};
  const ExperimentConfig c = tiny_config(dir, j);
  // A corrupt student checkpoint for seed 1 only.
  fs::create_directories(seed_dir(dir, 1));
  {
    SeedRun<float> probe(c, 1, nullptr, seed_dir(dir, 1));
    probe.teacher();
  }
  std::ofstream(seed_dir(dir, 1) + "/student.pstl") << "not a checkpoint";
  const RunReport r = run_pipeline<float>(c, true);
  ASSERT_EQ(r.seeds.size(), 2u);
  EXPECT_FALSE(r.seeds[0].error.empty());
  EXPECT_TRUE(r.seeds[1].error.empty()) << r.seeds[1].error;
  EXPECT_TRUE(r.any_failed());
  EXPECT_EQ(r.seeds[0].error.front(), '[');
  EXPECT_EQ(r.seeds[1].accuracy.count("compressed_pt"), 1u);
}

// ---- CLI ----------------------------------------------------------------------------

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SOFTXFER_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, ExitCodes) {
  const std::string dir = temp_dir("cli");
  Json j = tiny_json();
  j["baselines"] = {"full_zs"};
  j["seeds"] = {1};
  const std::string cfg = write_json(dir, j);
  EXPECT_EQ(run_cli("eval --config " + cfg + " --out " + dir + "/out"), 0);
  EXPECT_TRUE(fs::exists(dir + "/out/report.json"));
  EXPECT_EQ(run_cli("eval"), 2);  // --config missing
  EXPECT_EQ(run_cli("frobnicate --config " + cfg), 2);
  EXPECT_EQ(run_cli("eval --config " + dir + "/missing.json"), 2);
  EXPECT_EQ(run_cli("eval --config " + cfg + " --threads 0"), 2);
  j["bogus"] = true;
  std::ofstream(dir + "/bad.json") << j.dump();
  EXPECT_EQ(run_cli("eval --config " + dir + "/bad.json"), 2);

  // Stage failure: a corrupt teacher checkpoint in the reused artifact dir.
  fs::create_directories(dir + "/broken/seed_1");
  std::ofstream(dir + "/broken/seed_1/teacher.pstl") << "garbage";
  EXPECT_EQ(run_cli("eval --config " + cfg + " --out " + dir + "/broken"), 3);
}

TEST(Cli, SeedOverrideAndStrictFlag) {
  const std::string dir = temp_dir("cli_seed");
  Json j = tiny_json();
  j["baselines"] = {"full_zs"};
  const std::string cfg = write_json(dir, j);
  ASSERT_EQ(run_cli("pipeline --config " + cfg + " --seed 7 --strict-deterministic --out " + dir + "/a"), 0);
  ASSERT_EQ(run_cli("pipeline --config " + cfg + " --seed 7 --strict-deterministic --out " + dir + "/b"), 0);
  EXPECT_EQ(slurp(dir + "/a/metrics.csv"), slurp(dir + "/b/metrics.csv"));
  EXPECT_NE(slurp(dir + "/a/metrics.csv").find("full_zs,7,"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir + "/a/seed_7/teacher.pstl"));
  EXPECT_FALSE(fs::exists(dir + "/a/seed_1"));
}

}  // namespace
}  // namespace softxfer
