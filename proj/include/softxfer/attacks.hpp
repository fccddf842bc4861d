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

// Membership inference against soft prompts (likelihood-ratio attack with
// shadow prompts) and Min-k% scoring of training-corpus membership.

#ifndef SOFTXFER_ATTACKS_HPP_
#define SOFTXFER_ATTACKS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <ostream>
#include <thread>
#include <vector>

#include "json.hpp"
#include "softxfer/corpus.hpp"
#include "softxfer/model.hpp"
#include "softxfer/rng.hpp"

namespace softxfer {

inline double logit_scale(double p) {
  p = std::clamp(p, 1e-6, 1 - 1e-6);
  return std::log(p / (1 - p));
}

namespace detail {

inline void check_two_classes(std::span<const double> scores, const std::vector<bool>& labels) {
  require(scores.size() == labels.size(), "attack metrics: scores and labels differ in length");
  const auto pos = std::count(labels.begin(), labels.end(), true);
  require(pos > 0 && static_cast<std::size_t>(pos) < labels.size(),
          "attack metrics: both member and non-member labels are required");
}

}  // namespace detail

// Mann-Whitney AUC; tied pairs count one half.
inline double auc(std::span<const double> scores, const std::vector<bool>& labels) {
  detail::check_two_classes(scores, labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0, n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = 0.5 * double(i + 1 + j);  // average 1-based rank
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) {
        rank_sum += mid;
        n_pos += 1;
      }
    }
    i = j;
  }
  const double n_neg = double(n) - n_pos;
  return (rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg);
}

// Best TPR over thresholds "score >= t" whose empirical FPR <= fpr_target.
inline double tpr_at_fpr(std::span<const double> scores, const std::vector<bool>& labels,
                         double fpr_target) {
  detail::check_two_classes(scores, labels);
  require(fpr_target > 0 && fpr_target < 1, "tpr_at_fpr: target must lie in (0, 1)");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const double n_pos = double(std::count(labels.begin(), labels.end(), true));
  const double n_neg = double(n) - n_pos;
  double tp = 0, fp = 0, best = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    for (std::size_t k = i; k < j; ++k) (labels[order[k]] ? tp : fp) += 1;
    if (fp / n_neg <= fpr_target) best = std::max(best, tp / n_pos);
    i = j;
  }
  return best;
}

struct MembershipScore {
  std::size_t example_id = 0;
  double score = 0;
  bool member = false;
};

struct AttackResult {
  std::vector<MembershipScore> per_example;
  double auc = 0.5;
  double tpr_at_1pct_fpr = 0;
  int n_shadows = 0;
  std::size_t fallback_in = 0;   // candidates never IN a shadow
  std::size_t fallback_out = 0;  // candidates never OUT of a shadow
  std::uint64_t seed = 0;

  std::vector<double> scores() const {
    std::vector<double> s;
    for (const auto& e : per_example) s.push_back(e.score);
    return s;
  }
  std::vector<bool> members() const {
    std::vector<bool> m;
    for (const auto& e : per_example) m.push_back(e.member);
    return m;
  }
  void recompute_metrics() {
    const auto s = scores();
    const auto m = members();
    auc = softxfer::auc(s, m);
    tpr_at_1pct_fpr = tpr_at_fpr(s, m, 0.01);
  }
};

// Logit-scaled probability of the example's own label.
template <class T>
double membership_signal(const TransformerLM<T>& model, const SoftPrompt<T>& prompt,
                         const EncodedExample& ex, const Verbalizers& verbalizers) {
  const auto c = classify(model, &prompt, std::span<const int>(ex.ids), verbalizers);
  return logit_scale(double(c.probs[static_cast<std::size_t>(ex.label)]));
}

template <class T>
using PromptTrainer = std::function<SoftPrompt<T>(const EncodedDataset& subset, std::uint64_t seed)>;

// Online likelihood-ratio attack. Shadow s trains on a random half of the
// pool; per-candidate IN/OUT means are fit with one pooled variance.
template <class T>
AttackResult lira_attack(const TransformerLM<T>& model, const EncodedDataset& pool,
                         const PromptTrainer<T>& train_fn, const SoftPrompt<T>& target_prompt,
                         const std::vector<bool>& target_members, int n_shadows,
                         std::uint64_t seed, int threads = 1) {
  require(n_shadows >= 2, "lira_attack: need at least two shadow prompts");
  require(target_members.size() == pool.size(), "lira_attack: membership mask size mismatch");
  const std::size_t n = pool.size();
  require(n >= 2, "lira_attack: pool too small");

  std::vector<std::vector<bool>> in(static_cast<std::size_t>(n_shadows));
  std::vector<std::vector<double>> sig(static_cast<std::size_t>(n_shadows));
  auto run_shadow = [&](int s) {
    Rng rng(seed, "lira/shadow_split", static_cast<std::uint64_t>(s));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    rng.shuffle(idx.begin(), idx.end());
    std::vector<bool> mask(n, false);
    EncodedDataset sub;
    sub.verbalizers = pool.verbalizers;
    sub.n_classes = pool.n_classes;
    for (std::size_t k = 0; k < n / 2; ++k) {
      mask[idx[k]] = true;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (mask[i]) sub.examples.push_back(pool.examples[i]);
    }
    const SoftPrompt<T> p = train_fn(sub, derive_seed(seed, "lira/shadow_train", static_cast<std::uint64_t>(s)));
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = membership_signal(model, p, pool.examples[i], pool.verbalizers);
    in[static_cast<std::size_t>(s)] = std::move(mask);
    sig[static_cast<std::size_t>(s)] = std::move(out);
  };
  const int workers = std::max(1, std::min(threads, n_shadows));
  if (workers == 1) {
    for (int s = 0; s < n_shadows; ++s) run_shadow(s);
  } else {
    std::vector<std::thread> pool_threads;
    for (int w = 0; w < workers; ++w) {
      pool_threads.emplace_back([&, w] {
        for (int s = w; s < n_shadows; s += workers) run_shadow(s);
      });
    }
    for (auto& t : pool_threads) t.join();
  }

  // Per-candidate means and a single pooled variance.
  std::vector<double> mu_in(n, 0), mu_out(n, 0);
  std::vector<int> c_in(n, 0), c_out(n, 0);
  double g_in = 0, g_out = 0;
  int gc_in = 0, gc_out = 0;
  for (int s = 0; s < n_shadows; ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      const double x = sig[static_cast<std::size_t>(s)][i];
      if (in[static_cast<std::size_t>(s)][i]) {
        mu_in[i] += x, ++c_in[i], g_in += x, ++gc_in;
      } else {
        mu_out[i] += x, ++c_out[i], g_out += x, ++gc_out;
      }
    }
  }
  g_in = gc_in ? g_in / gc_in : 0;
  g_out = gc_out ? g_out / gc_out : 0;
  AttackResult res;
  res.n_shadows = n_shadows;
  res.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    if (c_in[i]) {
      mu_in[i] /= c_in[i];
    } else {
      mu_in[i] = g_in;
      ++res.fallback_in;
    }
    if (c_out[i]) {
      mu_out[i] /= c_out[i];
    } else {
      mu_out[i] = g_out;
      ++res.fallback_out;
    }
  }
  double ss = 0;
  long long dof = 0;
  for (int s = 0; s < n_shadows; ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      const double x = sig[static_cast<std::size_t>(s)][i];
      const double m = in[static_cast<std::size_t>(s)][i] ? mu_in[i] : mu_out[i];
      ss += (x - m) * (x - m);
      ++dof;
    }
  }
  for (std::size_t i = 0; i < n; ++i) dof -= (c_in[i] > 0) + (c_out[i] > 0);
  const double var = std::max(ss / double(std::max<long long>(dof, 1)), 1e-6);
  if (res.fallback_in || res.fallback_out) {
    std::fprintf(stderr, "lira: %zu candidates without IN shadows, %zu without OUT shadows; "
                 "using global means\n", res.fallback_in, res.fallback_out);
  }

  for (std::size_t i = 0; i < n; ++i) {
    const double x = membership_signal(model, target_prompt, pool.examples[i], pool.verbalizers);
    const double llr = ((x - mu_out[i]) * (x - mu_out[i]) - (x - mu_in[i]) * (x - mu_in[i])) / (2 * var);
    res.per_example.push_back({i, llr, target_members[i]});
  }
  res.recompute_metrics();
  return res;
}

// AUC with membership labels permuted at random, averaged over
// `permutations` draws.
inline double shuffled_membership_auc(const AttackResult& r, std::uint64_t seed, int permutations = 1) {
  require(permutations >= 1, "shuffled_membership_auc: need at least one permutation");
  const auto s = r.scores();
  auto m = r.members();
  Rng rng(seed, "lira/null");
  double total = 0;
  for (int k = 0; k < permutations; ++k) {
    rng.shuffle(m.begin(), m.end());
    total += auc(s, m);
  }
  return total / permutations;
}

inline void write_attack_csv(std::ostream& os, const AttackResult& r) {
  os << "example_id,score,member_flag\n";
  char buf[96];
  for (const auto& e : r.per_example) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%d\n", e.example_id, e.score, e.member ? 1 : 0);
    os << buf;
  }
}

inline nlohmann::json attack_summary(const AttackResult& r) {
  return {{"auc", r.auc},
          {"tpr_at_1pct_fpr", r.tpr_at_1pct_fpr},
          {"n_shadows", r.n_shadows},
          {"seeds", {r.seed}},
          {"fallback_in", r.fallback_in},
          {"fallback_out", r.fallback_out}};
}

// ---- Min-k% ----------------------------------------------------------------

// Mean of the lowest ceil(k% of (n - 1)) next-token log-probabilities.
template <class T>
double mink_score(const TransformerLM<T>& model, std::span<const int> ids, double k_percent) {
  require(k_percent > 0 && k_percent <= 100, "mink_score: k must lie in (0, 100]");
  require(ids.size() >= 2, "mink_score: need at least two tokens");
  const Tensor<T> logits = forward(model, ids);
  std::vector<double> lp;
  lp.reserve(ids.size() - 1);
  for (std::size_t r = 0; r + 1 < ids.size(); ++r) {
    auto row = logits.row(r);
    const double lse = detail::log_sum_exp<T>(row);
    lp.push_back(double(row[static_cast<std::size_t>(ids[r + 1])]) - lse);
  }
  std::sort(lp.begin(), lp.end());
  const auto m = static_cast<std::size_t>(std::ceil(k_percent / 100.0 * double(lp.size()) - 1e-9));
  const std::size_t take = std::clamp<std::size_t>(m, 1, lp.size());
  return std::accumulate(lp.begin(), lp.begin() + static_cast<long>(take), 0.0) / double(take);
}

// AUC of Min-k% scores separating `members` from `non_members`.
template <class T>
double mink_auc(const TransformerLM<T>& model, const std::vector<std::vector<int>>& members,
                const std::vector<std::vector<int>>& non_members, double k_percent) {
  std::vector<double> s;
  std::vector<bool> lab;
  for (const auto& ids : members) {
    s.push_back(mink_score(model, std::span<const int>(ids), k_percent));
    lab.push_back(true);
  }
  for (const auto& ids : non_members) {
    s.push_back(mink_score(model, std::span<const int>(ids), k_percent));
    lab.push_back(false);
  }
  return auc(s, lab);
}

}  // namespace softxfer

#endif  // SOFTXFER_ATTACKS_HPP_
