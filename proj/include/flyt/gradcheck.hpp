#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"

#include "flyt/metagrad.hpp"
#include "flyt/model.hpp"

namespace flyt {

// Central finite differences of the post-update downstream loss over
// every scoring parameter plus the downstream log-temperature. Layout
// matches MetaGradient::grad_phi.
inline std::vector<double> finite_difference_metagrad(const ScoringParams& phi,
                                                      const ReferenceParams& theta,
                                                      const OptimizerSpec& opt,
                                                      const std::vector<ExampleRecord>& upstream,
                                                      const Matrix& features,
                                                      const DownstreamBatch& down,
                                                      DownstreamLoss kind, double step = 1e-5) {
  std::vector<double> fd(phi.params.size() + 1, 0.0);
  ScoringParams probe = phi;
  for (std::size_t i = 0; i <= phi.params.size(); ++i) {
    double* coord = i < phi.params.size() ? &probe.params[i] : &probe.downstream_log_temperature;
    const double saved = *coord;
    *coord = saved + step;
    const double up = evaluate_downstream(probe, theta, opt, upstream, features, down, kind);
    *coord = saved - step;
    const double dn = evaluate_downstream(probe, theta, opt, upstream, features, down, kind);
    *coord = saved;
    fd[i] = (up - dn) / (2.0 * step);
  }
  if (kind == DownstreamLoss::ce) fd.back() = 0.0;  // temperature fixed at 1 for plain CE
  return fd;
}

struct GradCheckBlock {
  std::string name;
  double max_relative_error = 0.0;
  double mean_relative_error = 0.0;
  std::string oracle;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckBlock> blocks;
  double tolerance = 1e-4;
  bool pass = false;
};

// Elementwise |a - b| / max(||b||_inf, floor); the infinity-norm
// denominator keeps near-zero coordinates from dominating.
inline double relative_error(double a, double b, double scale) {
  return std::abs(a - b) / std::max(scale, 1e-12);
}

inline GradCheckBlock compare_gradients(const std::string& name, const std::vector<double>& got,
                                        const std::vector<double>& expected,
                                        const std::string& oracle, double tolerance) {
  GradCheckBlock blk;
  blk.name = name;
  blk.oracle = oracle;
  require(got.size() == expected.size(), "compare_gradients: length mismatch");
  double scale = 0.0;
  for (double x : expected) scale = std::max(scale, std::abs(x));
  double sum = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double e = relative_error(got[i], expected[i], scale);
    blk.max_relative_error = std::max(blk.max_relative_error, e);
    sum += e;
  }
  blk.mean_relative_error = sum / static_cast<double>(got.size());
  blk.pass = blk.max_relative_error < tolerance;
  return blk;
}

inline nlohmann::json gradcheck_report_to_json(const GradCheckReport& r) {
  nlohmann::json j;
  j["tolerance"] = r.tolerance;
  j["pass"] = r.pass;
  j["blocks"] = nlohmann::json::array();
  for (const auto& b : r.blocks) {
    j["blocks"].push_back({{"name", b.name},
                           {"max_relative_error", b.max_relative_error},
                           {"mean_relative_error", b.mean_relative_error},
                           {"oracle", b.oracle},
                           {"pass", b.pass}});
  }
  return j;
}

}  // namespace flyt
