#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "flyt/common.hpp"
#include "flyt/dual.hpp"
#include "flyt/losses.hpp"
#include "flyt/model.hpp"
#include "flyt/optim.hpp"
#include "flyt/tape.hpp"

namespace flyt {

// A downstream batch with templates already sampled (one per class),
// so every loss evaluation here is a pure function.
struct DownstreamBatch {
  std::vector<DownstreamExample> examples;
  std::vector<std::vector<double>> templates;
};

// Gradient of the downstream loss w.r.t. the scoring parameters.
// Layout: [phi.params..., downstream_log_temperature].
struct MetaGradient {
  std::vector<double> grad_phi;
  double upstream_loss = 0.0;
  double downstream_loss = 0.0;
};

namespace detail {

// grad of the weighted CLIP loss w.r.t. the full flat reference
// parameter vector (log_temperature included). Scalar S = double gives
// the plain gradient; S = Dual threads a score-space direction through
// the weights.
template <class S>
std::vector<S> wcl_theta_grad(const EncoderShape& sh, const std::vector<double>& theta,
                              const std::vector<ExampleRecord>& batch, const std::vector<S>& w,
                              S* loss_out) {
  const int n = static_cast<int>(theta.size());
  const int b = static_cast<int>(batch.size());
  const int d = sh.d_emb;
  Tape<S> tape;
  std::vector<Rev<S>> th(n);
  for (int i = 0; i < n; ++i) th[i] = make_leaf(tape, S{theta[i]});

  std::vector<Rev<S>> u(static_cast<std::size_t>(b) * d), v(u.size());
  for (int i = 0; i < b; ++i) {
    encode_one(sh, th.data(), batch[i].image_features.data(), u.data() + i * d);
    encode_one(sh, th.data() + sh.param_count(), batch[i].text_features.data(),
               v.data() + i * d);
  }
  std::vector<Rev<S>> wv(b);
  for (int i = 0; i < b; ++i) wv[i] = make_const(tape, w[i]);
  const Rev<S> tau = exp(th[n - 1]);
  const Rev<S> loss = weighted_clip_loss_t(b, d, u.data(), v.data(), wv, tau);
  if (loss_out != nullptr) *loss_out = loss.val;

  const std::vector<S> adj = tape.adjoints(loss.idx);
  std::vector<S> g(n);
  for (int i = 0; i < n; ++i) g[i] = adj[th[i].idx];
  return g;
}

// Full chain scores -> weights -> weighted loss -> theta gradient ->
// optimizer update -> downstream loss, in one scalar type.
template <class S>
S downstream_after_update(const EncoderShape& sh, const std::vector<double>& theta,
                          const std::vector<ExampleRecord>& upstream,
                          const std::vector<S>& scores, const OptimizerSpec& opt,
                          const DownstreamBatch& down, DownstreamLoss kind, const S& tau_ds,
                          S* upstream_loss_out = nullptr) {
  const std::vector<S> w = softmax_t(scores);
  S lup{};
  const std::vector<S> g = wcl_theta_grad(sh, theta, upstream, w, &lup);
  if (upstream_loss_out != nullptr) *upstream_loss_out = lup;
  const std::vector<S> theta_plus = apply_update(opt, theta, g);
  return downstream_loss_encoded(sh, theta_plus.data(), down.examples, down.templates, kind,
                                 tau_ds);
}

inline void check_meta_inputs(const ScoringParams& phi, const ReferenceParams&,
                              const std::vector<ExampleRecord>& upstream, const Matrix& features,
                              const DownstreamBatch& down) {
  phi.validate();
  require(!upstream.empty(), "meta_gradient: empty upstream batch");
  require(features.rows == static_cast<int>(upstream.size()),
          "meta_gradient: feature row count != batch size");
  require(!down.examples.empty(), "meta_gradient: empty downstream batch");
  require(!down.templates.empty(), "meta_gradient: no templates");
  for (const auto& e : down.examples)
    require(e.class_label >= 0 && e.class_label < static_cast<int>(down.templates.size()),
            "meta_gradient: downstream label out of range");
}

inline double effective_tau_ds(const ScoringParams& phi, DownstreamLoss kind) {
  return kind == DownstreamLoss::ce ? 1.0 : phi.downstream_tau();
}

}  // namespace detail

// Exact reverse-mode gradient of the weighted CLIP loss w.r.t. all
// reference parameters (log_temperature included).
inline std::vector<double> upstream_grad(const ReferenceParams& theta,
                                         const std::vector<ExampleRecord>& batch,
                                         const std::vector<double>& w,
                                         double* loss_out = nullptr) {
  require(!batch.empty(), "upstream_grad: empty batch");
  require(w.size() == batch.size(), "upstream_grad: weight length mismatch");
  return detail::wcl_theta_grad(theta.shape, theta.values, batch, w, loss_out);
}

// Downstream loss after one optimizer update, as a plain function of
// phi. Shared by the training loop and the finite-difference oracle.
inline double evaluate_downstream(const ScoringParams& phi, const ReferenceParams& theta,
                                  const OptimizerSpec& opt,
                                  const std::vector<ExampleRecord>& upstream,
                                  const Matrix& features, const DownstreamBatch& down,
                                  DownstreamLoss kind, double* upstream_loss_out = nullptr) {
  detail::check_meta_inputs(phi, theta, upstream, features, down);
  const std::vector<double> scores = score_batch(phi, features);
  return detail::downstream_after_update(theta.shape, theta.values, upstream, scores, opt, down,
                                         kind, detail::effective_tau_ds(phi, kind),
                                         upstream_loss_out);
}

// ---------------------------------------------------------------------------
// Direct meta-gradient: forward-over-reverse, one dual direction per
// upstream score plus one for the downstream temperature. Pre-step
// optimizer moments are treated as constants.
// ---------------------------------------------------------------------------
inline MetaGradient meta_gradient_direct(const ScoringParams& phi, const ReferenceParams& theta,
                                         const OptimizerSpec& opt,
                                         const std::vector<ExampleRecord>& upstream,
                                         const Matrix& features, const DownstreamBatch& down,
                                         DownstreamLoss kind) {
  detail::check_meta_inputs(phi, theta, upstream, features, down);
  const EncoderShape& sh = theta.shape;
  const int b = static_cast<int>(upstream.size());
  const std::vector<double> scores = score_batch(phi, features);
  const double tau_ds_val = detail::effective_tau_ds(phi, kind);

  MetaGradient out;
  std::vector<double> dl_ds(b, 0.0);
  for (int j = 0; j < b; ++j) {
    std::vector<Dual> s(b);
    for (int i = 0; i < b; ++i) s[i] = Dual{scores[i], i == j ? 1.0 : 0.0};
    Dual lup{};
    const Dual l = detail::downstream_after_update(sh, theta.values, upstream, s, opt, down, kind,
                                                   Dual{tau_ds_val, 0.0}, &lup);
    if (!std::isfinite(l.v) || !std::isfinite(l.d))
      throw numeric_failure("meta_gradient_direct", "non-finite downstream value");
    dl_ds[j] = l.d;
    if (j == 0) {
      out.upstream_loss = lup.v;
      out.downstream_loss = l.v;
    }
  }

  const Matrix jac = score_param_jacobian(phi, features);
  out.grad_phi.assign(phi.params.size() + 1, 0.0);
  for (int i = 0; i < b; ++i) {
    const double* ji = jac.row(i);
    for (std::size_t p = 0; p < phi.params.size(); ++p) out.grad_phi[p] += dl_ds[i] * ji[p];
  }

  if (kind != DownstreamLoss::ce) {
    // temperature only enters the downstream loss; one extra dual pass
    std::vector<Dual> s(b);
    for (int i = 0; i < b; ++i) s[i] = Dual{scores[i], 0.0};
    const Dual l = detail::downstream_after_update(sh, theta.values, upstream, s, opt, down, kind,
                                                   Dual{tau_ds_val, tau_ds_val}, static_cast<Dual*>(nullptr));
    out.grad_phi.back() = l.d;
  }
  for (double gphi : out.grad_phi) check_finite(gphi, "meta_gradient_direct");
  return out;
}

// ---------------------------------------------------------------------------
// Accumulated meta-gradient: the chunked decomposition. Embedding
// Jacobians never materialize; per chunk we run one backward pass for
// the theta-gradient contribution and one dual-seeded
// forward-over-reverse pass for the weight gradient.
// ---------------------------------------------------------------------------
inline MetaGradient meta_gradient_accumulated(const ScoringParams& phi,
                                              const ReferenceParams& theta,
                                              const OptimizerSpec& opt,
                                              const std::vector<ExampleRecord>& upstream,
                                              const Matrix& features, const DownstreamBatch& down,
                                              DownstreamLoss kind, int chunk_size) {
  detail::check_meta_inputs(phi, theta, upstream, features, down);
  const int b = static_cast<int>(upstream.size());
  require(chunk_size >= 1 && chunk_size <= b, "meta_gradient_accumulated: bad chunk size");
  const EncoderShape& sh = theta.shape;
  const int d = sh.d_emb;
  const int enc = sh.param_count();      // one tower
  const int n_enc = 2 * enc;             // both towers, temperature excluded
  const int n = static_cast<int>(theta.values.size());

  const std::vector<double> scores = score_batch(phi, features);
  const std::vector<double> w = softmax_weights(scores);
  const double tau_ds_val = detail::effective_tau_ds(phi, kind);
  const double log_tau = theta.log_temperature();

  // Embeddings as plain values.
  const auto [embed_u, embed_v] = encode_batch(theta, upstream);

  // Loss given embeddings: leaves are the embeddings and log_tau.
  // Backward gives u_i = d l_WCL / d f_i and the temperature gradient.
  Matrix bar_u(b, d), bar_v(b, d);
  double g_tau = 0.0;
  double l_up = 0.0;
  {
    Tape<double> tape;
    std::vector<Rev<double>> fu(static_cast<std::size_t>(b) * d), fv(fu.size());
    for (int i = 0; i < b * d; ++i) fu[i] = make_leaf(tape, embed_u.data[i]);
    for (int i = 0; i < b * d; ++i) fv[i] = make_leaf(tape, embed_v.data[i]);
    Rev<double> lt = make_leaf(tape, log_tau);
    std::vector<Rev<double>> wv(b);
    for (int i = 0; i < b; ++i) wv[i] = make_const(tape, w[i]);
    const Rev<double> loss =
        detail::weighted_clip_loss_t(b, d, fu.data(), fv.data(), wv, exp(lt));
    l_up = loss.val;
    const std::vector<double> adj = tape.adjoints(loss.idx);
    for (int i = 0; i < b * d; ++i) bar_u.data[i] = adj[fu[i].idx];
    for (int i = 0; i < b * d; ++i) bar_v.data[i] = adj[fv[i].idx];
    g_tau = adj[lt.idx];
  }

  // (i) accumulate g over chunks: per chunk, one backward pass through
  // the encoders seeded with the fixed embedding gradients.
  std::vector<double> g(n, 0.0);
  for (int start = 0; start < b; start += chunk_size) {
    const int stop = std::min(b, start + chunk_size);
    Tape<double> tape;
    std::vector<Rev<double>> th(n_enc);
    for (int i = 0; i < n_enc; ++i) th[i] = make_leaf(tape, theta.values[i]);
    std::vector<std::pair<std::int32_t, double>> seeds;
    std::vector<Rev<double>> emb(d);
    for (int i = start; i < stop; ++i) {
      encode_one(sh, th.data(), upstream[i].image_features.data(), emb.data());
      for (int e = 0; e < d; ++e) seeds.emplace_back(emb[e].idx, bar_u.at(i, e));
      encode_one(sh, th.data() + enc, upstream[i].text_features.data(), emb.data());
      for (int e = 0; e < d; ++e) seeds.emplace_back(emb[e].idx, bar_v.at(i, e));
    }
    const std::vector<double> adj = tape.adjoints_seeded(seeds);
    for (int i = 0; i < n_enc; ++i) g[i] += adj[th[i].idx];
  }
  g[n - 1] = g_tau;

  // (ii) v = sensitivity of the downstream loss to g, through the
  // optimizer update.
  const std::vector<double> theta_plus = apply_update(opt, theta.values, g);
  double l_down = 0.0;
  std::vector<double> v(n, 0.0);
  {
    Tape<double> tape;
    std::vector<Rev<double>> tp(n);
    for (int i = 0; i < n; ++i) tp[i] = make_leaf(tape, theta_plus[i]);
    std::vector<Rev<double>> x(static_cast<std::size_t>(down.examples.size()) * d);
    std::vector<Rev<double>> tm(static_cast<std::size_t>(down.templates.size()) * d);
    std::vector<int> labels(down.examples.size());
    for (std::size_t i = 0; i < down.examples.size(); ++i) {
      encode_one(sh, tp.data(), down.examples[i].image_features.data(), x.data() + i * d);
      labels[i] = down.examples[i].class_label;
    }
    for (std::size_t j = 0; j < down.templates.size(); ++j)
      encode_one(sh, tp.data() + enc, down.templates[j].data(), tm.data() + j * d);
    Rev<double> tau_ds = make_const(tape, tau_ds_val);
    const Rev<double> loss = detail::downstream_loss_core(
        static_cast<int>(down.examples.size()), static_cast<int>(down.templates.size()), d,
        x.data(), tm.data(), labels, kind, tau_ds);
    l_down = loss.val;
    const std::vector<double> adj = tape.adjoints(loss.idx);
    const std::vector<double> sens = update_input_sensitivity(opt, theta.values, g);
    for (int i = 0; i < n; ++i) v[i] = sens[i] * adj[tp[i].idx];
  }

  // (iii) per chunk: directional embedding derivatives D_i along v,
  // then backpropagate S(w) = sum_i <u_i, D_i> through the weights via
  // a dual-seeded forward-over-reverse pass.
  std::vector<double> grad_w(b, 0.0);
  std::vector<double> d_u(static_cast<std::size_t>(b) * d, 0.0);
  std::vector<double> d_v(static_cast<std::size_t>(b) * d, 0.0);
  {
    std::vector<Dual> th_dir(n_enc);
    for (int i = 0; i < n_enc; ++i) th_dir[i] = Dual{theta.values[i], v[i]};
    std::vector<Dual> emb(d);
    for (int i = 0; i < b; ++i) {
      encode_one(sh, th_dir.data(), upstream[i].image_features.data(), emb.data());
      for (int e = 0; e < d; ++e) d_u[i * d + e] = emb[e].d;
      encode_one(sh, th_dir.data() + enc, upstream[i].text_features.data(), emb.data());
      for (int e = 0; e < d; ++e) d_v[i * d + e] = emb[e].d;
    }
  }
  for (int start = 0; start < b; start += chunk_size) {
    const int stop = std::min(b, start + chunk_size);
    Tape<Dual> tape;
    std::vector<Rev<Dual>> fu(static_cast<std::size_t>(b) * d), fv(fu.size());
    for (int i = 0; i < b; ++i) {
      const bool in_chunk = i >= start && i < stop;
      for (int e = 0; e < d; ++e) {
        fu[i * d + e] =
            make_leaf(tape, Dual{embed_u.at(i, e), in_chunk ? d_u[i * d + e] : 0.0});
        fv[i * d + e] =
            make_leaf(tape, Dual{embed_v.at(i, e), in_chunk ? d_v[i * d + e] : 0.0});
      }
    }
    // temperature direction rides with the first chunk only
    Rev<Dual> lt = make_leaf(tape, Dual{log_tau, start == 0 ? v[n - 1] : 0.0});
    std::vector<Rev<Dual>> wv(b);
    for (int i = 0; i < b; ++i) wv[i] = make_leaf(tape, Dual{w[i], 0.0});
    const Rev<Dual> loss = detail::weighted_clip_loss_t(b, d, fu.data(), fv.data(), wv, exp(lt));
    const std::vector<Dual> adj = tape.adjoints(loss.idx, Dual{1.0, 0.0});
    for (int i = 0; i < b; ++i) grad_w[i] += adj[wv[i].idx].d;
  }

  // (iv) chain through softmax and the scoring model.
  double inner = 0.0;
  for (int i = 0; i < b; ++i) inner += w[i] * grad_w[i];
  std::vector<double> grad_s(b);
  for (int i = 0; i < b; ++i) grad_s[i] = w[i] * (grad_w[i] - inner);

  MetaGradient out;
  out.upstream_loss = l_up;
  out.downstream_loss = l_down;
  const Matrix jac = score_param_jacobian(phi, features);
  out.grad_phi.assign(phi.params.size() + 1, 0.0);
  for (int i = 0; i < b; ++i) {
    const double* ji = jac.row(i);
    for (std::size_t p = 0; p < phi.params.size(); ++p) out.grad_phi[p] += grad_s[i] * ji[p];
  }
  if (kind != DownstreamLoss::ce) {
    const Dual l = detail::downstream_loss_encoded(
        sh, std::vector<Dual>(theta_plus.begin(), theta_plus.end()).data(), down.examples,
        down.templates, kind, Dual{tau_ds_val, tau_ds_val});
    out.grad_phi.back() = l.d;
  }
  for (double gphi : out.grad_phi) check_finite(gphi, "meta_gradient_accumulated");
  return out;
}

// Central-difference fallback for the directional embedding
// derivative; kept as an independent check on the dual-number path.
inline void directional_embedding_derivative_fd(const EncoderShape& sh,
                                                const std::vector<double>& enc_params,
                                                const std::vector<double>& direction,
                                                const std::vector<double>& x, double step,
                                                std::vector<double>& out) {
  const std::size_t np = enc_params.size();
  std::vector<double> plus(np), minus(np);
  for (std::size_t i = 0; i < np; ++i) {
    plus[i] = enc_params[i] + step * direction[i];
    minus[i] = enc_params[i] - step * direction[i];
  }
  std::vector<double> ep(sh.d_emb), em(sh.d_emb);
  encode_one(sh, plus.data(), x.data(), ep.data());
  encode_one(sh, minus.data(), x.data(), em.data());
  out.resize(sh.d_emb);
  for (int e = 0; e < sh.d_emb; ++e) out[e] = (ep[e] - em[e]) / (2.0 * step);
}

}  // namespace flyt
