#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "flyt/common.hpp"
#include "flyt/rng.hpp"
#include "flyt/score_table.hpp"

namespace flyt {

// Ordered multiset of uids in sampling order.
struct SampleManifest {
  std::vector<std::string> uids;

  std::size_t size() const { return uids.size(); }
};

// count -> number of distinct uids drawn exactly that many times.
inline std::map<std::int64_t, std::int64_t> repetition_histogram(const SampleManifest& m) {
  std::map<std::string, std::int64_t> per_uid;
  for (const auto& u : m.uids) ++per_uid[u];
  std::map<std::int64_t, std::int64_t> hist;
  for (const auto& [uid, c] : per_uid) ++hist[c];
  return hist;
}

namespace detail {

inline void check_scores(const std::vector<double>& s) {
  require(!s.empty(), "sampler: empty score column");
  for (double x : s) require(std::isfinite(x), "sampler: non-finite score");
}

// Top-`take` indices of (score + Gumbel noise), descending. Equivalent
// in distribution to successive renormalized softmax draws without
// replacement.
inline std::vector<int> gumbel_top(const std::vector<double>& scores, int take, Rng& rng) {
  const int m = static_cast<int>(scores.size());
  std::vector<std::pair<double, int>> keyed(m);
  for (int i = 0; i < m; ++i) keyed[i] = {scores[i] + rng.gumbel(), i};
  std::partial_sort(keyed.begin(), keyed.begin() + take, keyed.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<int> out(take);
  for (int i = 0; i < take; ++i) out[i] = keyed[i].second;
  return out;
}

}  // namespace detail

// Soft Cap Sampling: repeated without-replacement batch draws from
// softmax(scores); each drawn example's score drops by alpha.
inline SampleManifest scs_sample(const ScoreTable& table, const std::string& column, double alpha,
                                 std::int64_t n, int g, std::uint64_t seed) {
  std::vector<double> scores = table.column(column);
  detail::check_scores(scores);
  require(n >= 1, "scs_sample: N must be >= 1");
  require(g >= 1, "scs_sample: G must be >= 1");
  require(std::isfinite(alpha) && alpha >= 0.0, "scs_sample: alpha must be finite and >= 0");
  const int m = table.rows();
  Rng rng(seed);
  SampleManifest out;
  out.uids.reserve(static_cast<std::size_t>(n));
  while (static_cast<std::int64_t>(out.uids.size()) < n) {
    const int take = static_cast<int>(
        std::min<std::int64_t>({static_cast<std::int64_t>(g),
                                n - static_cast<std::int64_t>(out.uids.size()),
                                static_cast<std::int64_t>(m)}));
    const std::vector<int> drawn = detail::gumbel_top(scores, take, rng);
    for (int idx : drawn) out.uids.push_back(table.uids[idx]);
    for (int idx : drawn) scores[idx] -= alpha;
  }
  return out;
}

// Hard Cap Sampling: sequential softmax draws; an example hitting the
// repetition cap beta is excluded from further draws.
inline SampleManifest hcs_sample(const ScoreTable& table, const std::string& column, int beta,
                                 std::int64_t n, std::uint64_t seed) {
  const std::vector<double>& scores = table.column(column);
  detail::check_scores(scores);
  require(beta >= 1, "hcs_sample: beta must be >= 1");
  const int m = table.rows();
  require(n >= 1, "hcs_sample: N must be >= 1");
  require(n <= static_cast<std::int64_t>(beta) * m, "hcs_sample: N exceeds beta * pool size");
  Rng rng(seed);
  std::vector<int> counts(m, 0);
  SampleManifest out;
  out.uids.reserve(static_cast<std::size_t>(n));
  for (std::int64_t t = 0; t < n; ++t) {
    // Gumbel-argmax over non-capped entries
    int best = -1;
    double best_key = 0.0;
    for (int i = 0; i < m; ++i) {
      const double key = scores[i] + rng.gumbel();
      if (counts[i] < beta && (best < 0 || key > best_key)) {
        best = i;
        best_key = key;
      }
    }
    ++counts[best];
    out.uids.push_back(table.uids[best]);
  }
  return out;
}

// No-Cap sampling: N i.i.d. draws from softmax(scores).
inline SampleManifest nocap_sample(const ScoreTable& table, const std::string& column,
                                   std::int64_t n, std::uint64_t seed) {
  const std::vector<double>& scores = table.column(column);
  detail::check_scores(scores);
  require(n >= 1, "nocap_sample: N must be >= 1");
  const int m = table.rows();
  Rng rng(seed);
  SampleManifest out;
  out.uids.reserve(static_cast<std::size_t>(n));
  for (std::int64_t t = 0; t < n; ++t) {
    int best = 0;
    double best_key = scores[0] + rng.gumbel();
    for (int i = 1; i < m; ++i) {
      const double key = scores[i] + rng.gumbel();
      if (key > best_key) {
        best = i;
        best_key = key;
      }
    }
    out.uids.push_back(table.uids[best]);
  }
  return out;
}

// Top floor(p * M) uids by score, each exactly once, ties broken by
// ascending uid.
inline SampleManifest threshold_select(const ScoreTable& table, const std::string& column,
                                       double p) {
  require(table.rows() >= 1, "threshold_select: empty table");
  require(p > 0.0 && p <= 1.0, "threshold_select: fraction must be in (0, 1]");
  const std::vector<double>& scores = table.column(column);
  const int m = table.rows();
  const int take = static_cast<int>(std::floor(p * m));
  require(take >= 1, "threshold_select: selection would be empty");
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return table.uids[a] < table.uids[b];
  });
  SampleManifest out;
  out.uids.reserve(take);
  for (int i = 0; i < take; ++i) out.uids.push_back(table.uids[order[i]]);
  return out;
}

// Seeded shuffle for consumers that want manifests in random order.
inline SampleManifest shuffle_manifest(SampleManifest m, std::uint64_t seed) {
  Rng rng(seed);
  rng.shuffle(m.uids);
  return m;
}

}  // namespace flyt
