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

#include <cmath>
#include <sstream>

#include "softxfer/attacks.hpp"
#include "softxfer/prompt_tune.hpp"
#include "test_util.hpp"

namespace softxfer {
namespace {

using testing::random_ids;
using testing::tiny_config;
using testing::toy_model;
using testing::toy_task;

// ---- logit_scale ------------------------------------------------------------

TEST(LogitScale, Examples) {
  EXPECT_EQ(logit_scale(0.5), 0.0);
  EXPECT_NEAR(logit_scale(0.9), std::log(9.0), 1e-12);
  EXPECT_NEAR(logit_scale(0.9), 2.1972, 1e-4);
}

TEST(LogitScale, AntisymmetricAndClamped) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double p = rng.uniform();
    EXPECT_NEAR(logit_scale(p), -logit_scale(1 - p), 1e-9);
  }
  EXPECT_NEAR(logit_scale(0.0), std::log(1e-6 / (1 - 1e-6)), 1e-9);
  EXPECT_NEAR(logit_scale(1.0), -logit_scale(0.0), 1e-9);
  EXPECT_TRUE(std::isfinite(logit_scale(-3.0)));
}

// ---- auc / tpr_at_fpr -----------------------------------------------------------

// Scores for members {0.9, 0.4} and non-members {0.6, 0.2}.
const std::vector<double> kSmallScores{0.9, 0.4, 0.6, 0.2};
const std::vector<bool> kSmallLabels{true, true, false, false};

double pairwise_auc(const std::vector<double>& s, const std::vector<bool>& m) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!m[i] || m[j]) continue;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      pairs += 1;
    }
  }
  return wins / pairs;
}

TEST(Auc, Examples) {
  EXPECT_DOUBLE_EQ(auc(kSmallScores, kSmallLabels), 0.75);
  EXPECT_DOUBLE_EQ(auc(std::vector<double>{3, 4, 1, 2}, kSmallLabels), 1.0);
  EXPECT_DOUBLE_EQ(auc(std::vector<double>{1, 1, 1, 1}, kSmallLabels), 0.5);
}

TEST(Auc, SingleClassRejected) {
  EXPECT_THROW(auc(std::vector<double>{1, 2}, {true, true}), std::invalid_argument);
  EXPECT_THROW(auc(std::vector<double>{1, 2}, {false, false}), std::invalid_argument);
  EXPECT_THROW(auc(std::vector<double>{1, 2, 3}, {false, true}), std::invalid_argument);
}

TEST(Auc, MatchesPairwiseCountingWithTies) {
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    const int n = rng.between(2, 30);
    std::vector<double> s(static_cast<std::size_t>(n));
    std::vector<bool> m(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      s[static_cast<std::size_t>(i)] = rng.between(0, 5);  // coarse, so ties are common
      m[static_cast<std::size_t>(i)] = i % 2 == 0;
    }
    EXPECT_NEAR(auc(s, m), pairwise_auc(s, m), 1e-12);
  }
}

TEST(Auc, NegatedScoresComplement) {
  Rng rng(6);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> s(20), neg(20);
    std::vector<bool> m(20);
    for (std::size_t i = 0; i < 20; ++i) {
      s[i] = rng.normal(0.0, 1.0);
      neg[i] = -s[i];
      m[i] = rng.uniform() < 0.5;
    }
    m[0] = true;
    m[1] = false;
    EXPECT_NEAR(auc(s, m) + auc(neg, m), 1.0, 1e-12);
  }
}

TEST(TprAtFpr, Examples) {
  EXPECT_DOUBLE_EQ(tpr_at_fpr(kSmallScores, kSmallLabels, 0.01), 0.5);
  EXPECT_DOUBLE_EQ(tpr_at_fpr(kSmallScores, kSmallLabels, 0.5), 1.0);
  for (double f : {0.01, 0.3, 0.99}) {
    EXPECT_DOUBLE_EQ(tpr_at_fpr(std::vector<double>{3, 4, 1, 2}, kSmallLabels, f), 1.0);
  }
}

TEST(TprAtFpr, TargetBelowGranularityExcludesAllNegatives) {
  // 4 negatives: any target below 1/4 admits no false positive at all.
  const std::vector<double> s{5, 3, 1, 4, 2, 0, -1};
  const std::vector<bool> m{true, true, true, false, false, false, false};
  EXPECT_DOUBLE_EQ(tpr_at_fpr(s, m, 0.2), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(tpr_at_fpr(s, m, 0.25), 2.0 / 3.0);
}

TEST(TprAtFpr, NondecreasingInTarget) {
  Rng rng(7);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> s(40);
    std::vector<bool> m(40);
    for (std::size_t i = 0; i < 40; ++i) {
      m[i] = i < 15;
      s[i] = rng.normal(m[i] ? 0.5 : 0.0, 1.0);
    }
    double prev = 0;
    for (double f = 0.01; f < 1.0; f += 0.01) {
      const double v = tpr_at_fpr(s, m, f);
      EXPECT_GE(v, prev);
      prev = v;
    }
  }
}

TEST(TprAtFpr, RejectsBadTarget) {
  EXPECT_THROW(tpr_at_fpr(kSmallScores, kSmallLabels, 0.0), std::invalid_argument);
  EXPECT_THROW(tpr_at_fpr(kSmallScores, kSmallLabels, 1.0), std::invalid_argument);
}

TEST(AttackResult, StoredAucMatchesPerExample) {
  AttackResult r;
  for (std::size_t i = 0; i < kSmallScores.size(); ++i) r.per_example.push_back({i, kSmallScores[i], kSmallLabels[i]});
  r.recompute_metrics();
  EXPECT_EQ(r.auc, auc(r.scores(), r.members()));
  EXPECT_DOUBLE_EQ(r.auc, 0.75);
  EXPECT_DOUBLE_EQ(r.tpr_at_1pct_fpr, 0.5);
}

TEST(AttackResult, CsvAndSummary) {
  AttackResult r;
  r.per_example = {{0, 1.5, true}, {1, -0.25, false}};
  r.n_shadows = 8;
  r.seed = 4;
  r.recompute_metrics();
  std::ostringstream os;
  write_attack_csv(os, r);
  EXPECT_EQ(os.str(), "example_id,score,member_flag\n0,1.5,1\n1,-0.25,0\n");
  const auto j = attack_summary(r);
  EXPECT_EQ(j["auc"].get<double>(), 1.0);
  EXPECT_EQ(j["tpr_at_1pct_fpr"].get<double>(), 1.0);
  EXPECT_EQ(j["n_shadows"].get<int>(), 8);
  EXPECT_EQ(j["seeds"], nlohmann::json::array({4}));
}

TEST(ShuffledMembership, NearHalfForInformativeScores) {
  AttackResult r;
  for (std::size_t i = 0; i < 200; ++i) r.per_example.push_back({i, double(i), i >= 100});
  r.recompute_metrics();
  EXPECT_DOUBLE_EQ(r.auc, 1.0);
  EXPECT_NEAR(shuffled_membership_auc(r, 1, 20), 0.5, 0.05);
  EXPECT_EQ(shuffled_membership_auc(r, 1, 20), shuffled_membership_auc(r, 1, 20));
}

// ---- LiRA ---------------------------------------------------------------------

PromptTrainer<float> quick_trainer(const TransformerLM<float>& model, int epochs = 5) {
  return [&model, epochs](const EncodedDataset& subset, std::uint64_t s) {
    TuneConfig t{.epochs = epochs, .learning_rate = 0.01, .batch_size = 8, .dp = std::nullopt, .seed = s};
    return tune_prompt(model, make_prompt<float>(4, model, derive_seed(s, "init"), PromptInit::kEmbeddingSample),
                       subset, t)
        .prompt;
  };
}

std::vector<bool> first_half(std::size_t n) {
  std::vector<bool> m(n, false);
  for (std::size_t i = 0; i < n / 2; ++i) m[i] = true;
  return m;
}

EncodedDataset take(const EncodedDataset& d, std::size_t from, std::size_t to) {
  EncodedDataset out = d;
  out.examples.assign(d.examples.begin() + static_cast<long>(from), d.examples.begin() + static_cast<long>(to));
  return out;
}

TEST(Lira, RejectsBadArguments) {
  const auto t = toy_task(1, 8);
  const auto m = init_model<float>(tiny_config(1, 8, 2, static_cast<int>(t.vocab.size())), 1);
  const auto p = make_prompt<float>(2, m, 1);
  const auto train = quick_trainer(m, 1);
  EXPECT_THROW(lira_attack(m, t.train, train, p, first_half(t.train.size()), 1, 1), std::invalid_argument);
  EXPECT_THROW(lira_attack(m, t.train, train, p, first_half(t.train.size() + 1), 4, 1), std::invalid_argument);
}

TEST(Lira, DeterministicAndThreadCountInvariant) {
  const auto t = toy_task(2, 16);
  const auto m = toy_model(t, 1, 2, 50);
  const auto train = quick_trainer(m, 2);
  const auto target = train(take(t.train, 0, 8), 99);
  const auto a = lira_attack(m, t.train, train, target, first_half(16), 4, 7, 1);
  const auto b = lira_attack(m, t.train, train, target, first_half(16), 4, 7, 3);
  ASSERT_EQ(a.per_example.size(), 16u);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_EQ(a.per_example[i].score, b.per_example[i].score);
    EXPECT_EQ(a.per_example[i].member, i < 8);
  }
  EXPECT_EQ(a.auc, b.auc);
  EXPECT_EQ(a.n_shadows, 4);
}

TEST(Lira, TwoShadowsFallBackToGlobalMeans) {
  // With two half-splits some candidates are IN both or OUT of both.
  const auto t = toy_task(3, 16);
  const auto m = toy_model(t, 1, 3, 50);
  const auto train = quick_trainer(m, 1);
  const auto target = train(take(t.train, 0, 8), 5);
  const auto r = lira_attack(m, t.train, train, target, first_half(16), 2, 11);
  EXPECT_GT(r.fallback_in + r.fallback_out, 0u);
  EXPECT_EQ(r.fallback_in, r.fallback_out);  // equal-size halves
  for (const auto& e : r.per_example) EXPECT_TRUE(std::isfinite(e.score));
}

TEST(Lira, NullControlDisjointTargetNearHalfOverFiveSeeds) {
  double total = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto t = toy_task(seed, 128);
    const auto m = toy_model(t, 2, seed, 300);
    const auto train = quick_trainer(m, 5);
    // Target never sees the pool; the "members" mask is arbitrary.
    const auto target = train(t.public_set, derive_seed(seed, "disjoint"));
    const auto pool = take(t.train, 0, 64);
    total += lira_attack(m, pool, train, target, first_half(64), 8, seed).auc;
  }
  const double mean = total / 5;
  EXPECT_GE(mean, 0.45);
  EXPECT_LE(mean, 0.55);
}

// ---- Min-k% ---------------------------------------------------------------------

TEST(MinK, FullFractionIsNegativeLmLoss) {
  const auto m = init_model<float>(tiny_config(), 4);
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const auto ids = random_ids(static_cast<std::size_t>(rng.between(2, 24)), 20, rng);
    EXPECT_NEAR(mink_score(m, std::span<const int>(ids), 100.0), -double(lm_loss<float>(m, ids)), 1e-5);
  }
}

TEST(MinK, UniformModelScoresNegLogVocab) {
  const TransformerLM<float> m(tiny_config());  // all-zero weights, flat logits
  Rng rng(5);
  for (double k : {5.0, 20.0, 100.0}) {
    const auto ids = random_ids(12, 20, rng);
    EXPECT_NEAR(mink_score(m, std::span<const int>(ids), k), -std::log(20.0), 1e-5);
  }
}

TEST(MinK, LowestFractionByHand) {
  // 11 tokens give 10 targets; k = 20 keeps the 2 lowest. k = 1 keeps 1.
  const auto m = init_model<float>(tiny_config(), 6);
  Rng rng(6);
  const auto ids = random_ids(11, 20, rng);
  const auto logits = forward(m, std::span<const int>(ids));
  std::vector<double> lp;
  for (std::size_t r = 0; r + 1 < ids.size(); ++r) {
    double mx = -1e300, z = 0;
    for (std::size_t v = 0; v < 20; ++v) mx = std::max(mx, double(logits.row(r)[v]));
    for (std::size_t v = 0; v < 20; ++v) z += std::exp(double(logits.row(r)[v]) - mx);
    lp.push_back(double(logits.row(r)[static_cast<std::size_t>(ids[r + 1])]) - mx - std::log(z));
  }
  std::sort(lp.begin(), lp.end());
  EXPECT_NEAR(mink_score(m, std::span<const int>(ids), 20.0), (lp[0] + lp[1]) / 2, 1e-5);
  EXPECT_NEAR(mink_score(m, std::span<const int>(ids), 1.0), lp[0], 1e-5);
  EXPECT_NEAR(mink_score(m, std::span<const int>(ids), 30.0), (lp[0] + lp[1] + lp[2]) / 3, 1e-5);
}

TEST(MinK, NondecreasingInK) {
  const auto m = init_model<float>(tiny_config(), 7);
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    const auto ids = random_ids(16, 20, rng);
    double prev = -1e300;
    for (double k = 5; k <= 100; k += 5) {
      const double s = mink_score(m, std::span<const int>(ids), k);
      EXPECT_GE(s, prev - 1e-9);
      prev = s;
    }
  }
}

TEST(MinK, RejectsBadInput) {
  const auto m = init_model<float>(tiny_config(), 8);
  const std::vector<int> one{3}, two{3, 4};
  EXPECT_THROW(mink_score(m, std::span<const int>(one), 20.0), std::invalid_argument);
  EXPECT_THROW(mink_score(m, std::span<const int>(two), 0.0), std::invalid_argument);
  EXPECT_THROW(mink_score(m, std::span<const int>(two), 100.5), std::invalid_argument);
}

TEST(MinK, TrainedModelSeparatesItsCorpus) {
  // Members: sentences the model was trained on; non-members: random ids.
  const auto t = toy_task(9);
  const auto m = toy_model(t, 2, 9, 300);
  Rng rng(9);
  std::vector<std::vector<int>> members(t.corpus.begin(), t.corpus.begin() + 50), non;
  for (int i = 0; i < 50; ++i) non.push_back(random_ids(8, static_cast<int>(t.vocab.size()), rng));
  EXPECT_GT(mink_auc(m, members, non, 20.0), 0.9);
}

}  // namespace
}  // namespace softxfer
