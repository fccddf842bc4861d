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

// softxfer command line. Stage subcommands share one artifact directory per
// seed (<out>/seed_<n>) and reuse whatever earlier stages left there.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "softxfer/harness.hpp"

namespace sx = softxfer;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> threads;
  bool strict = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "experiment config (JSON)")->required();
  app->add_option("--seed", c.seed, "run a single seed instead of the config's list");
  app->add_option("--out", c.out, "output directory (overrides output_dir)");
  app->add_option("--threads", c.threads, "worker threads");
  app->add_flag("--strict-deterministic", c.strict, "single-threaded, bitwise reproducible");
}

sx::ExperimentConfig resolve(const Common& c) {
  sx::ExperimentConfig cfg = sx::load_config(c.config);
  if (c.seed) cfg.seeds = {*c.seed};
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (c.threads) {
    if (*c.threads < 1) throw sx::ConfigError("--threads must be at least 1");
    cfg.threads = *c.threads;
  }
  cfg.strict_deterministic = c.strict;
  if (c.strict) cfg.threads = 1;
  return cfg;
}

int stage_threads(const sx::ExperimentConfig& cfg) { return cfg.strict_deterministic ? 1 : cfg.threads; }

void print_timings(const sx::SeedRun<float>& run) {
  for (const auto& t : run.timings()) std::fprintf(stderr, "  %-18s %8.2f s\n", t.stage.c_str(), t.seconds);
}

int cmd_pipeline(const sx::ExperimentConfig& cfg) {
  const sx::RunReport r = sx::run_pipeline<float>(cfg);
  sx::write_report_files(r, cfg);
  for (const auto& [k, ms] : r.summary()) {
    std::printf("%-18s %.4f +- %.4f%s\n", k.c_str(), ms.first, ms.second,
                k == "full_pt" ? "  (upper bound, tuned on the teacher with private data)" : "");
  }
  for (const auto& s : r.seeds) {
    if (!s.error.empty()) std::fprintf(stderr, "seed %llu failed: %s\n", (unsigned long long)s.seed, s.error.c_str());
  }
  return r.any_failed() ? kExitStage : 0;
}

// Runs `body` for every seed with a reusing SeedRun; stage errors are
// reported per seed.
template <class F>
int per_seed(const sx::ExperimentConfig& cfg, F&& body) {
  sx::DataLedger ledger;
  bool failed = false;
  for (std::uint64_t seed : cfg.seeds) {
    sx::SeedRun<float> run(cfg, seed, &ledger, sx::seed_dir(cfg.output_dir, seed), true);
    try {
      body(run);
    } catch (const sx::StageError& e) {
      std::fprintf(stderr, "seed %llu: %s\n", (unsigned long long)seed, e.what());
      failed = true;
    }
    print_timings(run);
  }
  std::ofstream l(cfg.output_dir + "/data_access.csv");
  sx::write_ledger_csv(l, ledger.records());
  return failed ? kExitStage : 0;
}

int cmd_eval(const sx::ExperimentConfig& cfg) {
  sx::RunReport report;
  report.config_digest = cfg.digest;
  sx::DataLedger ledger;
  for (std::uint64_t seed : cfg.seeds) {
    sx::SeedRun<float> run(cfg, seed, &ledger, sx::seed_dir(cfg.output_dir, seed), true);
    report.seeds.push_back(sx::run_seed_baselines(run, cfg.baselines));
  }
  report.ledger = ledger.records();
  sx::write_report_files(report, cfg);
  for (const auto& [k, ms] : report.summary()) std::printf("%-18s %.4f +- %.4f\n", k.c_str(), ms.first, ms.second);
  return report.any_failed() ? kExitStage : 0;
}

void write_attack(const std::string& dir, const std::string& name, const sx::AttackOutcome& o, std::uint64_t seed) {
  std::ofstream csv(dir + "/" + name + ".csv");
  sx::write_attack_csv(csv, o.result);
  sx::Json s = sx::attack_summary(o.result);
  s["shuffled_membership_auc"] = o.null_auc;
  s["root_seed"] = seed;
  std::ofstream(dir + "/" + name + "_summary.json") << s.dump(2) << '\n';
  std::printf("seed %llu %-10s auc %.4f tpr@1%%fpr %.4f null %.4f\n", (unsigned long long)seed, name.c_str(),
              o.result.auc, o.result.tpr_at_1pct_fpr, o.null_auc);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"softxfer: private soft-prompt transfer through a distilled proxy model"};
  app.require_subcommand(1);
  Common common;
  std::map<std::string, CLI::App*> sub;
  for (const char* name : {"distill", "tune", "transfer", "attack", "eval", "pipeline"}) {
    sub[name] = app.add_subcommand(name);
    add_common(sub[name], common);
  }
  sub["distill"]->description("pretrain the teacher and distill the student");
  sub["tune"]->description("tune the student prompt on the private train split");
  sub["transfer"]->description("transfer the student prompt to the teacher with public data");
  sub["attack"]->description("LiRA on student prompts (plain and DP) and Min-k% on teacher vs student");
  sub["eval"]->description("evaluate the configured baselines on the private test split");
  sub["pipeline"]->description("run every stage and write the report");
  bool mink = true;
  sub["attack"]->add_flag("!--no-mink", mink, "skip the Min-k% comparison");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }

  try {
    const sx::ExperimentConfig cfg = resolve(common);
    std::filesystem::create_directories(cfg.output_dir);
    if (sub["pipeline"]->parsed()) return cmd_pipeline(cfg);
    if (sub["eval"]->parsed()) return cmd_eval(cfg);
    if (sub["distill"]->parsed()) {
      return per_seed(cfg, [](sx::SeedRun<float>& r) {
        r.student();
        std::printf("seed %llu: student %s after %d kd steps\n", (unsigned long long)r.seed(),
                    r.student().fingerprint().c_str(), r.kd_steps());
      });
    }
    if (sub["tune"]->parsed()) {
      return per_seed(cfg, [](sx::SeedRun<float>& r) {
        const auto& p = r.student_prompt();
        std::printf("seed %llu: prompt %zux%zu%s\n", (unsigned long long)r.seed(), p.length(), p.width(),
                    p.dp_meta ? " (dp)" : "");
      });
    }
    if (sub["transfer"]->parsed()) {
      return per_seed(cfg, [](sx::SeedRun<float>& r) {
        r.teacher_prompt();
        std::printf("seed %llu: alpha %.4f\n", (unsigned long long)r.seed(), r.alpha());
      });
    }
    if (sub["attack"]->parsed()) {
      return per_seed(cfg, [&](sx::SeedRun<float>& r) {
        const std::string dir = sx::seed_dir(cfg.output_dir, r.seed());
        write_attack(dir, "lira", sx::run_lira(r, false, stage_threads(cfg)), r.seed());
        write_attack(dir, "lira_dp", sx::run_lira(r, true, stage_threads(cfg)), r.seed());
        if (mink && !cfg.csv) {
          const auto [t, s] = sx::run_mink(r);
          std::ofstream(dir + "/mink_summary.json") << sx::Json{{"teacher_auc", t}, {"student_auc", s}, {"k", cfg.attack.mink_k}}.dump(2) << '\n';
          std::printf("seed %llu mink auc teacher %.4f student %.4f\n", (unsigned long long)r.seed(), t, s);
        }
      });
    }
  } catch (const sx::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const sx::StageError& e) {
    std::fprintf(stderr, "stage failure: %s\n", e.what());
    return kExitStage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "stage failure: %s\n", e.what());
    return kExitStage;
  }
  return 0;
}
