#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <unordered_map>
#include <vector>

#include "flyt/common.hpp"
#include "flyt/data.hpp"
#include "flyt/sampling.hpp"
#include "flyt/score_table.hpp"

namespace flyt {

// Area under the ROC curve of `scores` as a detector of label == 1,
// via the rank-sum (Mann-Whitney) formulation with midrank ties.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  require(scores.size() == labels.size(), "roc_auc: length mismatch");
  require(!scores.empty(), "roc_auc: empty input");
  const std::size_t n = scores.size();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return scores[a] < scores[b]; });
  std::size_t n_pos = 0, n_neg = 0;
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == 1) {
        ++n_pos;
        rank_sum_pos += midrank;
      } else {
        ++n_neg;
      }
    }
    i = j;
  }
  require(n_pos > 0 && n_neg > 0, "roc_auc: need both labels present");
  return (rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1)) /
         (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// Fraction of manifest entries (with multiplicity) whose uid is flagged
// corrupt in the ground truth.
inline double corrupt_fraction(const SampleManifest& manifest, const PoolWithTruth& pool) {
  require(!manifest.uids.empty(), "corrupt_fraction: empty manifest");
  std::unordered_map<std::string, std::uint8_t> flag;
  flag.reserve(pool.records.size());
  for (std::size_t i = 0; i < pool.records.size(); ++i)
    flag.emplace(pool.records[i].uid, pool.corrupt[i]);
  std::int64_t bad = 0;
  for (const auto& u : manifest.uids) {
    const auto it = flag.find(u);
    require(it != flag.end(), "corrupt_fraction: uid not in pool: " + u);
    bad += it->second;
  }
  return static_cast<double>(bad) / static_cast<double>(manifest.uids.size());
}

}  // namespace flyt
