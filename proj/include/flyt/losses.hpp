#pragma once

#include <cmath>
#include <vector>

#include "flyt/common.hpp"
#include "flyt/model.hpp"

namespace flyt {

enum class DownstreamLoss { ce, ce_temperature, clip };

inline const char* to_string(DownstreamLoss l) {
  switch (l) {
    case DownstreamLoss::ce: return "ce";
    case DownstreamLoss::ce_temperature: return "ce_temperature";
    case DownstreamLoss::clip: return "clip";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Templated cores. T is double, Dual, or Rev<S>.
// ---------------------------------------------------------------------------

template <class T>
T logsumexp(const std::vector<T>& a) {
  using std::exp;
  using std::log;
  int arg = 0;
  for (std::size_t j = 1; j < a.size(); ++j)
    if (a[arg] < a[j]) arg = static_cast<int>(j);
  const T m = a[arg];
  T acc = exp(a[0] - m);
  for (std::size_t j = 1; j < a.size(); ++j) acc += exp(a[j] - m);
  return m + log(acc);
}

template <class T>
std::vector<T> softmax_t(const std::vector<T>& s) {
  using std::exp;
  int arg = 0;
  for (std::size_t j = 1; j < s.size(); ++j)
    if (s[arg] < s[j]) arg = static_cast<int>(j);
  const T m = s[arg];
  std::vector<T> e(s.size());
  T z = T{};
  for (std::size_t j = 0; j < s.size(); ++j) {
    e[j] = exp(s[j] - m);
    z += e[j];
  }
  for (auto& x : e) x = x / z;
  return e;
}

namespace detail {

template <class T>
T dot(const T* a, const T* b, int d) {
  T acc = a[0] * b[0];
  for (int i = 1; i < d; ++i) acc += a[i] * b[i];
  return acc;
}

// One direction of Eq-style contrastive loss: sum_i -log softmax over
// tau <u_i, v_j>, diagonal positive.
template <class T>
T contrast_sum(int b, int d, const T* u, const T* v, const T& tau) {
  T loss = T{};
  std::vector<T> row(b);
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < b; ++j) row[j] = tau * dot(u + i * d, v + j * d, d);
    loss += logsumexp(row) - row[i];
  }
  return loss;
}

// Weighted contrastive direction. `active` lists indices with w > 0;
// zero-weight entries are dropped outright so excluding an example and
// zeroing its weight execute identical arithmetic.
template <class T>
T weighted_contrast_sum(int d, const T* u, const T* v, const std::vector<T>& w,
                        const std::vector<int>& active, const T& tau) {
  using std::log;
  T loss = T{};
  const int a = static_cast<int>(active.size());
  std::vector<T> logw(a);
  for (int j = 0; j < a; ++j) logw[j] = log(w[active[j]]);
  std::vector<T> row(a);
  for (int ii = 0; ii < a; ++ii) {
    const int i = active[ii];
    for (int jj = 0; jj < a; ++jj) {
      const int j = active[jj];
      row[jj] = logw[jj] + tau * dot(u + i * d, v + j * d, d);
    }
    loss += w[i] * (logsumexp(row) - row[ii]);
  }
  return loss;
}

template <class T>
T clip_loss_t(int b, int d, const T* u, const T* v, const T& tau) {
  return (contrast_sum(b, d, u, v, tau) + contrast_sum(b, d, v, u, tau)) * 0.5;
}

template <class T>
T weighted_clip_loss_t(int b, int d, const T* u, const T* v, const std::vector<T>& w,
                       const T& tau) {
  std::vector<int> active;
  active.reserve(b);
  for (int i = 0; i < b; ++i) {
    const double wi = value_of(w[i]);
    require(wi >= 0.0, "weighted_clip_loss: negative weight");
    if (wi > 0.0) active.push_back(i);
  }
  require(!active.empty(), "weighted_clip_loss: all weights are zero");
  return (weighted_contrast_sum(d, u, v, w, active, tau) +
          weighted_contrast_sum(d, v, u, w, active, tau)) *
         0.5;
}

// Downstream losses on already-encoded image embeddings `X` (B' x d)
// and per-class template embeddings `Tm` (K x d).
template <class T>
T downstream_loss_core(int bp, int k, int d, const T* X, const T* Tm,
                       const std::vector<int>& labels, DownstreamLoss kind, const T& tau_ds) {
  T loss = T{};
  if (kind == DownstreamLoss::clip) {
    // two-directional contrast against the batch's own class templates
    std::vector<T> row(bp);
    for (int i = 0; i < bp; ++i) {
      for (int j = 0; j < bp; ++j) row[j] = tau_ds * dot(X + i * d, Tm + labels[j] * d, d);
      loss += logsumexp(row) - row[i];
    }
    for (int i = 0; i < bp; ++i) {
      for (int j = 0; j < bp; ++j) row[j] = tau_ds * dot(Tm + labels[i] * d, X + j * d, d);
      loss += logsumexp(row) - row[i];
    }
    return loss;
  }
  // K-way cross entropy over template logits
  std::vector<T> row(k);
  for (int i = 0; i < bp; ++i) {
    for (int j = 0; j < k; ++j) row[j] = tau_ds * dot(X + i * d, Tm + j * d, d);
    loss += logsumexp(row) - row[labels[i]];
  }
  return loss;
}

// Encodes a downstream batch with tower parameters of scalar type T
// and evaluates the chosen loss. `theta` is the full flat reference
// parameter vector (log_temperature unused here).
template <class T>
T downstream_loss_encoded(const EncoderShape& sh, const T* theta,
                          const std::vector<DownstreamExample>& batch,
                          const std::vector<std::vector<double>>& templates, DownstreamLoss kind,
                          const T& tau_ds) {
  const int bp = static_cast<int>(batch.size());
  const int k = static_cast<int>(templates.size());
  const int d = sh.d_emb;
  std::vector<T> X(static_cast<std::size_t>(bp) * d);
  std::vector<T> Tm(static_cast<std::size_t>(k) * d);
  std::vector<int> labels(bp);
  for (int i = 0; i < bp; ++i) {
    encode_one(sh, theta, batch[i].image_features.data(), X.data() + i * d);
    labels[i] = batch[i].class_label;
  }
  for (int j = 0; j < k; ++j) {
    encode_one(sh, theta + sh.param_count(), templates[j].data(), Tm.data() + j * d);
  }
  return downstream_loss_core(bp, k, d, X.data(), Tm.data(), labels, kind, tau_ds);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Public double-precision entry points.
// ---------------------------------------------------------------------------

// softmax over scores, max-subtracted.
inline std::vector<double> softmax_weights(const std::vector<double>& scores) {
  require(!scores.empty(), "softmax_weights: empty input");
  for (double s : scores) require(std::isfinite(s), "softmax_weights: non-finite score");
  return softmax_t(scores);
}

inline double clip_loss(const Matrix& u, const Matrix& v, double tau) {
  require(u.rows >= 1 && u.rows == v.rows && u.cols == v.cols, "clip_loss: shape mismatch");
  require(tau > 0.0, "clip_loss: tau must be positive");
  return detail::clip_loss_t(u.rows, u.cols, u.data.data(), v.data.data(), tau);
}

inline double weighted_clip_loss(const Matrix& u, const Matrix& v, const std::vector<double>& w,
                                 double tau) {
  require(u.rows >= 1 && u.rows == v.rows && u.cols == v.cols,
          "weighted_clip_loss: shape mismatch");
  require(static_cast<int>(w.size()) == u.rows, "weighted_clip_loss: weight length mismatch");
  require(tau > 0.0, "weighted_clip_loss: tau must be positive");
  return detail::weighted_clip_loss_t(u.rows, u.cols, u.data.data(), v.data.data(), w, tau);
}

namespace detail {
inline void check_downstream(const ReferenceParams& params,
                             const std::vector<DownstreamExample>& batch,
                             const std::vector<std::vector<double>>& templates, double tau_ds) {
  require(!batch.empty(), "downstream loss: empty batch");
  require(!templates.empty(), "downstream loss: no class templates");
  require(tau_ds > 0.0, "downstream loss: tau_ds must be positive");
  const int k = static_cast<int>(templates.size());
  for (const auto& t : templates)
    require(static_cast<int>(t.size()) == params.shape.d_in,
            "downstream loss: template width mismatch");
  for (const auto& e : batch) {
    require(e.class_label >= 0 && e.class_label < k, "downstream loss: label out of range");
    require(static_cast<int>(e.image_features.size()) == params.shape.d_in,
            "downstream loss: image feature width mismatch");
  }
}
}  // namespace detail

// K-way cross entropy over sampled class templates. tau_ds = 1 is the
// plain CE variant.
inline double downstream_ce_loss(const ReferenceParams& params,
                                 const std::vector<DownstreamExample>& batch,
                                 const std::vector<std::vector<double>>& templates,
                                 double tau_ds = 1.0) {
  detail::check_downstream(params, batch, templates, tau_ds);
  return detail::downstream_loss_encoded(params.shape, params.values.data(), batch, templates,
                                         DownstreamLoss::ce_temperature, tau_ds);
}

// Two-directional contrastive loss against the batch's own sampled
// class templates.
inline double downstream_clip_loss(const ReferenceParams& params,
                                   const std::vector<DownstreamExample>& batch,
                                   const std::vector<std::vector<double>>& templates,
                                   double tau_ds) {
  detail::check_downstream(params, batch, templates, tau_ds);
  return detail::downstream_loss_encoded(params.shape, params.values.data(), batch, templates,
                                         DownstreamLoss::clip, tau_ds);
}

}  // namespace flyt
