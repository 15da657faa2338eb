#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "flyt/common.hpp"
#include "flyt/dual.hpp"

namespace flyt {

enum class OptimizerKind { sgd, adamw };

// Optimizer hyperparameters plus per-parameter moment state. Updates
// return a successor spec; the input is never mutated.
struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::sgd;
  double learning_rate = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::vector<double> m;  // first moments (adamw)
  std::vector<double> v;  // second moments (adamw)
  std::int64_t step = 0;

  static OptimizerSpec sgd(double lr) {
    OptimizerSpec s;
    s.kind = OptimizerKind::sgd;
    s.learning_rate = lr;
    return s;
  }

  static OptimizerSpec adamw(double lr, double beta1 = 0.9, double beta2 = 0.98,
                             double eps = 1e-8, double weight_decay = 0.0) {
    OptimizerSpec s;
    s.kind = OptimizerKind::adamw;
    s.learning_rate = lr;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps = eps;
    s.weight_decay = weight_decay;
    return s;
  }

  void ensure_state(std::size_t n) {
    if (kind == OptimizerKind::adamw && m.size() != n) {
      require(m.empty() && v.empty(), "optimizer state shape mismatch");
      m.assign(n, 0.0);
      v.assign(n, 0.0);
    }
  }
};

namespace detail {

inline double eps_like(const double&, double e) { return e; }
inline Dual eps_like(const Dual&, double e) { return Dual{e, 0.0}; }

// One coordinate of the update as a function of the incoming gradient,
// with the pre-step moments held constant. T = double evaluates the
// update; T = Dual differentiates it.
template <class T>
T update_coord(const OptimizerSpec& spec, std::int64_t t, double theta, double m0, double v0,
               const T& g) {
  using std::sqrt;
  if (spec.kind == OptimizerKind::sgd) {
    return theta - spec.learning_rate * g;
  }
  const T m1 = spec.beta1 * m0 + (1.0 - spec.beta1) * g;
  const T v1 = spec.beta2 * v0 + (1.0 - spec.beta2) * g * g;
  const double c1 = 1.0 - std::pow(spec.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(spec.beta2, static_cast<double>(t));
  const T mhat = m1 / c1;
  const T vhat = v1 / c2;
  return theta - spec.learning_rate * (mhat / (sqrt(vhat) + eps_like(g, spec.eps)) +
                                       spec.weight_decay * theta);
}

}  // namespace detail

// theta' = theta - eta * g.
inline std::vector<double> sgd_update(const std::vector<double>& theta,
                                      const std::vector<double>& g, double eta) {
  require(theta.size() == g.size(), "sgd_update: shape mismatch");
  std::vector<double> out(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) out[i] = theta[i] - eta * g[i];
  return out;
}

// Decoupled-weight-decay Adam step with bias correction. Returns the
// new parameters and the successor optimizer state.
inline std::pair<std::vector<double>, OptimizerSpec> adamw_update(const std::vector<double>& theta,
                                                                  const std::vector<double>& g,
                                                                  OptimizerSpec spec) {
  require(theta.size() == g.size(), "adamw_update: shape mismatch");
  spec.ensure_state(theta.size());
  require(spec.m.size() == theta.size() && spec.v.size() == theta.size(),
          "adamw_update: moment state shape mismatch");
  const std::int64_t t = spec.step + 1;
  std::vector<double> out(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    out[i] = detail::update_coord(spec, t, theta[i], spec.m[i], spec.v[i], g[i]);
    spec.m[i] = spec.beta1 * spec.m[i] + (1.0 - spec.beta1) * g[i];
    spec.v[i] = spec.beta2 * spec.v[i] + (1.0 - spec.beta2) * g[i] * g[i];
  }
  spec.step = t;
  return {std::move(out), std::move(spec)};
}

// Applies one update of either kind without advancing state (the
// successor state is only needed when the step is committed).
template <class T>
std::vector<T> apply_update(const OptimizerSpec& spec, const std::vector<double>& theta,
                            const std::vector<T>& g) {
  require(theta.size() == g.size(), "apply_update: shape mismatch");
  std::vector<T> out(theta.size());
  const std::int64_t t = spec.step + 1;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double m0 = spec.m.empty() ? 0.0 : spec.m[i];
    const double v0 = spec.v.empty() ? 0.0 : spec.v[i];
    out[i] = detail::update_coord(spec, t, theta[i], m0, v0, g[i]);
  }
  return out;
}

// d theta'_j / d g_j, elementwise (the update touches each coordinate
// independently).
inline std::vector<double> update_input_sensitivity(const OptimizerSpec& spec,
                                                    const std::vector<double>& theta,
                                                    const std::vector<double>& g) {
  require(theta.size() == g.size(), "update_input_sensitivity: shape mismatch");
  std::vector<double> out(theta.size());
  const std::int64_t t = spec.step + 1;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double m0 = spec.m.empty() ? 0.0 : spec.m[i];
    const double v0 = spec.v.empty() ? 0.0 : spec.v[i];
    out[i] = detail::update_coord(spec, t, theta[i], m0, v0, Dual{g[i], 1.0}).d;
  }
  return out;
}

}  // namespace flyt
