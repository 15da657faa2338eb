#pragma once

// Shared fixtures and independent straight-line oracles for the unit
// tests. Oracles deliberately avoid the library's templated code paths
// so agreement is meaningful.

#include <cmath>
#include <vector>

#include "flyt/losses.hpp"
#include "flyt/metagrad.hpp"
#include "flyt/model.hpp"
#include "flyt/rng.hpp"

namespace testutil {

// Naive double-loop contrastive loss: sum_i -log softmax_i of one
// direction, averaged over both directions. No max subtraction.
inline double oracle_clip_loss(const flyt::Matrix& u, const flyt::Matrix& v, double tau) {
  const int b = u.rows, d = u.cols;
  double li = 0.0, lt = 0.0;
  for (int i = 0; i < b; ++i) {
    double num_i = 0.0, den_i = 0.0, den_t = 0.0;
    for (int j = 0; j < b; ++j) {
      double dot_uv = 0.0, dot_vu = 0.0;
      for (int e = 0; e < d; ++e) {
        dot_uv += u.at(i, e) * v.at(j, e);
        dot_vu += v.at(i, e) * u.at(j, e);
      }
      den_i += std::exp(tau * dot_uv);
      den_t += std::exp(tau * dot_vu);
      if (j == i) num_i = tau * dot_uv;
    }
    li += -(num_i - std::log(den_i));
    lt += -(tau * [&] {
              double s = 0.0;
              for (int e = 0; e < d; ++e) s += v.at(i, e) * u.at(i, e);
              return s;
            }() -
            std::log(den_t));
  }
  return 0.5 * (li + lt);
}

// Naive weighted contrastive loss with explicit 0*log(0) := 0 handling
// and zero-weight terms dropped from denominators.
inline double oracle_weighted_clip_loss(const flyt::Matrix& u, const flyt::Matrix& v,
                                        const std::vector<double>& w, double tau) {
  const int b = u.rows, d = u.cols;
  auto dir = [&](const flyt::Matrix& a, const flyt::Matrix& c) {
    double loss = 0.0;
    for (int i = 0; i < b; ++i) {
      if (w[i] == 0.0) continue;
      double dot_ii = 0.0;
      for (int e = 0; e < d; ++e) dot_ii += a.at(i, e) * c.at(i, e);
      double den = 0.0;
      for (int j = 0; j < b; ++j) {
        if (w[j] == 0.0) continue;
        double dot_ij = 0.0;
        for (int e = 0; e < d; ++e) dot_ij += a.at(i, e) * c.at(j, e);
        den += w[j] * std::exp(tau * dot_ij);
      }
      loss += -w[i] * std::log(w[i] * std::exp(tau * dot_ii) / den);
    }
    return loss;
  };
  return 0.5 * (dir(u, v) + dir(v, u));
}

// Straight-line reimplementation of the two-layer tanh encoder with
// unit-norm output, for one example.
inline std::vector<double> oracle_encode(const flyt::EncoderShape& sh,
                                         const std::vector<double>& params, int offset,
                                         const std::vector<double>& x) {
  std::vector<double> h(sh.d_hidden), y(sh.d_emb);
  int p = offset;
  for (int j = 0; j < sh.d_hidden; ++j)
    for (int i = 0; i < sh.d_in; ++i) h[j] += params[p++] * x[i];
  for (int j = 0; j < sh.d_hidden; ++j) h[j] = std::tanh(h[j] + params[p++]);
  for (int e = 0; e < sh.d_emb; ++e)
    for (int j = 0; j < sh.d_hidden; ++j) y[e] += params[p++] * h[j];
  for (int e = 0; e < sh.d_emb; ++e) y[e] += params[p++];
  double n = 0.0;
  for (int e = 0; e < sh.d_emb; ++e) n += y[e] * y[e];
  n = std::sqrt(n);
  for (int e = 0; e < sh.d_emb; ++e) y[e] /= n;
  return y;
}

// Straight-line AdamW step (decoupled weight decay, bias correction),
// mutating moments in place.
inline void oracle_adamw(std::vector<double>& theta, const std::vector<double>& g,
                         std::vector<double>& m, std::vector<double>& v, int step, double lr,
                         double b1, double b2, double eps, double wd) {
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
    const double mh = m[i] / (1.0 - std::pow(b1, step));
    const double vh = v[i] / (1.0 - std::pow(b2, step));
    theta[i] -= lr * (mh / (std::sqrt(vh) + eps) + wd * theta[i]);
  }
}

// Random unit-norm embedding batch.
inline std::pair<flyt::Matrix, flyt::Matrix> random_embeddings(int b, int d, flyt::Rng& rng) {
  flyt::Matrix u(b, d), v(b, d);
  for (auto* m : {&u, &v}) {
    for (int i = 0; i < b; ++i) {
      double n = 0.0;
      for (int e = 0; e < d; ++e) {
        m->at(i, e) = rng.normal();
        n += m->at(i, e) * m->at(i, e);
      }
      n = std::sqrt(n);
      for (int e = 0; e < d; ++e) m->at(i, e) /= n;
    }
  }
  return {std::move(u), std::move(v)};
}

inline std::vector<flyt::ExampleRecord> random_batch(int b, int d_in, flyt::Rng& rng) {
  std::vector<flyt::ExampleRecord> batch(b);
  for (int i = 0; i < b; ++i) {
    batch[i].uid = "u" + std::to_string(i);
    batch[i].image_features.resize(d_in);
    batch[i].text_features.resize(d_in);
    for (int j = 0; j < d_in; ++j) {
      batch[i].image_features[j] = rng.normal();
      batch[i].text_features[j] = rng.normal();
    }
  }
  return batch;
}

// A small randomized bilevel configuration shared by the meta-gradient
// tests: B = 8, B' = 8, d_in = 4, d_emb = 3, linear scorer over 4
// features.
struct ToyConfig {
  flyt::ScoringParams phi;
  flyt::ReferenceParams theta;
  std::vector<flyt::ExampleRecord> upstream;
  flyt::Matrix features;
  flyt::DownstreamBatch down;
};

inline ToyConfig make_toy(std::uint64_t seed, int b = 8, int bp = 8) {
  flyt::Rng rng(seed);
  ToyConfig t;
  const int d_in = 4, d_emb = 3, d_hidden = 5, k = 4, n_classes = 3;
  t.theta = flyt::ReferenceParams::random_init({d_in, d_hidden, d_emb}, rng.next_u64());
  t.upstream = random_batch(b, d_in, rng);
  t.features = flyt::Matrix(b, k);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < k; ++j) t.features.at(i, j) = rng.normal();
  t.phi = flyt::ScoringParams::linear_init({"f0", "f1", "f2", "f3"});
  for (auto& p : t.phi.params) p = 0.3 * rng.normal();
  t.down.examples.resize(bp);
  for (int i = 0; i < bp; ++i) {
    t.down.examples[i].class_label = static_cast<int>(rng.below(n_classes));
    t.down.examples[i].image_features.resize(d_in);
    for (int j = 0; j < d_in; ++j) t.down.examples[i].image_features[j] = rng.normal();
  }
  t.down.templates.resize(n_classes);
  for (int c = 0; c < n_classes; ++c) {
    t.down.templates[c].resize(d_in);
    for (int j = 0; j < d_in; ++j) t.down.templates[c][j] = rng.normal();
  }
  return t;
}

}  // namespace testutil
