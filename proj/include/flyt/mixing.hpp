#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "flyt/common.hpp"
#include "flyt/model.hpp"
#include "flyt/score_table.hpp"

namespace flyt {

struct ColumnStats {
  std::vector<double> means;
  std::vector<double> stds;  // population sigma
};

// (x - mu) / sigma per column, population sigma. Constant columns are
// rejected by name.
inline std::pair<ScoreTable, ColumnStats> standardize(const ScoreTable& table) {
  require(table.cols() >= 1, "standardize: no columns");
  require(table.rows() >= 1, "standardize: no rows");
  ScoreTable out = table;
  ColumnStats stats;
  const double n = static_cast<double>(table.rows());
  for (int j = 0; j < table.cols(); ++j) {
    double mean = 0.0;
    for (double x : table.columns[j]) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : table.columns[j]) var += (x - mean) * (x - mean);
    var /= n;
    if (var <= 0.0)
      throw invalid_input("standardize: column '" + table.names[j] + "' is constant");
    const double sd = std::sqrt(var);
    for (double& x : out.columns[j]) x = (x - mean) / sd;
    stats.means.push_back(mean);
    stats.stds.push_back(sd);
  }
  return {std::move(out), std::move(stats)};
}

// Rowwise sum, optionally after standardization.
inline ScoreTable aggregate_sum(const ScoreTable& table, bool standardized) {
  require(table.cols() >= 1, "aggregate_sum: no columns");
  const ScoreTable& src = table;
  ScoreTable work;
  if (standardized) work = standardize(table).first;
  const ScoreTable& t = standardized ? work : src;
  std::vector<double> sum(t.rows(), 0.0);
  for (int j = 0; j < t.cols(); ++j)
    for (int i = 0; i < t.rows(); ++i) sum[i] += t.columns[j][i];
  ScoreTable out;
  out.uids = table.uids;
  out.add_column(standardized ? "std_sum" : "sum", std::move(sum));
  return out;
}

// Per-method weights from min-max normalized accuracies shifted to hit
// the requested max/min ratio.
inline std::vector<double> in_weights(const std::vector<double>& accuracies, double ratio) {
  require(accuracies.size() >= 2, "in_weighted: needs >= 2 methods");
  require(ratio > 1.0, "in_weighted: ratio must be > 1");
  const auto [lo_it, hi_it] = std::minmax_element(accuracies.begin(), accuracies.end());
  const double lo = *lo_it, hi = *hi_it;
  require(hi > lo, "in_weighted: all accuracies equal");
  std::vector<double> w(accuracies.size());
  for (std::size_t i = 0; i < w.size(); ++i)
    w[i] = (accuracies[i] - lo) / (hi - lo) + 1.0 / (ratio - 1.0);
  return w;
}

// IN-weighted standardized sum baseline. Returns the single-column
// table; `weights_out`, when given, receives the per-method weights.
inline ScoreTable in_weighted(const ScoreTable& table, const std::vector<double>& in_accuracies,
                              double ratio, std::vector<double>* weights_out = nullptr) {
  require(static_cast<int>(in_accuracies.size()) == table.cols(),
          "in_weighted: one accuracy per column required");
  const std::vector<double> w = in_weights(in_accuracies, ratio);
  const ScoreTable std_table = standardize(table).first;
  std::vector<double> sum(table.rows(), 0.0);
  for (int j = 0; j < table.cols(); ++j)
    for (int i = 0; i < table.rows(); ++i) sum[i] += w[j] * std_table.columns[j][i];
  if (weights_out != nullptr) *weights_out = w;
  ScoreTable out;
  out.uids = table.uids;
  out.add_column("in_weighted", std::move(sum));
  return out;
}

// Applies a trained scorer to a table using the statistics baked into
// the model (never recomputed from the table).
inline ScoreTable apply_mixer(const ScoringParams& phi, const ScoreTable& table) {
  phi.validate();
  Matrix features(table.rows(), phi.k());
  for (int j = 0; j < phi.k(); ++j) {
    const std::vector<double>& col = table.column(phi.input_names[j]);
    for (int i = 0; i < table.rows(); ++i) features.at(i, j) = col[i];
  }
  std::vector<double> scores = score_batch(phi, features);
  ScoreTable out;
  out.uids = table.uids;
  out.add_column("mixed", std::move(scores));
  return out;
}

}  // namespace flyt
