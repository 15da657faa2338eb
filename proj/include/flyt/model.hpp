#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "flyt/common.hpp"
#include "flyt/dual.hpp"
#include "flyt/rng.hpp"

namespace flyt {

// Dense row-major matrix of doubles. Enough linear algebra for this
// library lives in loops next to the formulas; no BLAS needed at this
// scale.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
};

// One upstream pair: paired image/text feature vectors standing in for
// a raw image and caption.
struct ExampleRecord {
  std::string uid;
  std::vector<double> image_features;
  std::vector<double> text_features;
};

// One labeled downstream example (image side only; class templates are
// pool-level).
struct DownstreamExample {
  std::vector<double> image_features;
  int class_label = 0;
};

struct DownstreamData {
  std::vector<DownstreamExample> examples;
  // class_templates[c] holds >= 1 text-feature vectors for class c
  std::vector<std::vector<std::vector<double>>> class_templates;

  int num_classes() const { return static_cast<int>(class_templates.size()); }
};

// ---------------------------------------------------------------------------
// Reference model: two 2-layer tanh encoders with unit-norm outputs,
// plus a learnable temperature stored as log_temperature so tau > 0
// always holds.
// ---------------------------------------------------------------------------

struct EncoderShape {
  int d_in = 0;
  int d_hidden = 0;
  int d_emb = 0;

  int param_count() const {
    return d_hidden * d_in + d_hidden + d_emb * d_hidden + d_emb;
  }
};

struct ReferenceParams {
  EncoderShape shape;
  // layout: [image encoder | text encoder | log_temperature]
  std::vector<double> values;

  static ReferenceParams random_init(const EncoderShape& shape, std::uint64_t seed,
                                     double initial_tau = 1.0 / 0.07) {
    require(shape.d_in >= 1 && shape.d_hidden >= 1 && shape.d_emb >= 1,
            "encoder dimensions must be >= 1");
    ReferenceParams p;
    p.shape = shape;
    p.values.assign(2 * shape.param_count() + 1, 0.0);
    Rng rng(seed);
    int off = 0;
    for (int tower = 0; tower < 2; ++tower) {
      const double s1 = 1.0 / std::sqrt(static_cast<double>(shape.d_in));
      for (int i = 0; i < shape.d_hidden * shape.d_in; ++i) p.values[off++] = s1 * rng.normal();
      off += shape.d_hidden;  // biases start at zero
      const double s2 = 1.0 / std::sqrt(static_cast<double>(shape.d_hidden));
      for (int i = 0; i < shape.d_emb * shape.d_hidden; ++i) p.values[off++] = s2 * rng.normal();
      off += shape.d_emb;
    }
    p.values.back() = std::log(initial_tau);
    return p;
  }

  int param_count() const { return static_cast<int>(values.size()); }
  int encoder_offset(bool text_tower) const { return text_tower ? shape.param_count() : 0; }
  double log_temperature() const { return values.back(); }
  double tau() const { return std::exp(values.back()); }
};

// Runs one example through a tower. `params` points at the tower's
// parameter block; scalar type T is double, Dual, or Rev<S>.
template <class T>
void encode_one(const EncoderShape& sh, const T* params, const double* x, T* out) {
  const T* w1 = params;
  const T* b1 = w1 + sh.d_hidden * sh.d_in;
  const T* w2 = b1 + sh.d_hidden;
  const T* b2 = w2 + sh.d_emb * sh.d_hidden;

  std::vector<T> h(sh.d_hidden);
  for (int j = 0; j < sh.d_hidden; ++j) {
    T acc = b1[j];
    for (int i = 0; i < sh.d_in; ++i) acc = acc + w1[j * sh.d_in + i] * x[i];
    using std::tanh;
    h[j] = tanh(acc);
  }
  std::vector<T> y(sh.d_emb);
  for (int e = 0; e < sh.d_emb; ++e) {
    T acc = b2[e];
    for (int j = 0; j < sh.d_hidden; ++j) acc = acc + w2[e * sh.d_hidden + j] * h[j];
    y[e] = acc;
  }
  T n2 = y[0] * y[0];
  for (int e = 1; e < sh.d_emb; ++e) n2 = n2 + y[e] * y[e];
  if (value_of(n2) < 1e-60) throw numeric_failure("encode", "pre-normalization output is ~0");
  using std::sqrt;
  const T norm = sqrt(n2);
  for (int e = 0; e < sh.d_emb; ++e) out[e] = y[e] / norm;
}

// encode_batch: unit-norm embeddings for every (image, text) pair, in
// input order.
inline std::pair<Matrix, Matrix> encode_batch(const ReferenceParams& params,
                                              const std::vector<ExampleRecord>& batch) {
  require(!batch.empty(), "encode_batch: empty batch");
  const EncoderShape& sh = params.shape;
  Matrix u(static_cast<int>(batch.size()), sh.d_emb);
  Matrix v(static_cast<int>(batch.size()), sh.d_emb);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    require(static_cast<int>(batch[i].image_features.size()) == sh.d_in &&
                static_cast<int>(batch[i].text_features.size()) == sh.d_in,
            "encode_batch: feature width mismatch for uid " + batch[i].uid);
    encode_one(sh, params.values.data() + params.encoder_offset(false),
               batch[i].image_features.data(), u.row(static_cast<int>(i)));
    encode_one(sh, params.values.data() + params.encoder_offset(true),
               batch[i].text_features.data(), v.row(static_cast<int>(i)));
  }
  return {std::move(u), std::move(v)};
}

// ---------------------------------------------------------------------------
// Scoring model: linear mixer or gated MLP head, with standardization
// statistics baked in so a saved model is self-contained.
// ---------------------------------------------------------------------------

enum class ScoringKind { linear, gated_mlp };

struct ScoringParams {
  ScoringKind kind = ScoringKind::linear;
  std::vector<std::string> input_names;
  std::vector<double> input_means;
  std::vector<double> input_stds;
  // linear: [w_0 .. w_{k-1}, bias]
  // gated : [Wg (H*k), bg (H), Wv (H*k), bv (H), wo (H), bo]
  std::vector<double> params;
  int hidden_width = 0;  // gated_mlp only
  double downstream_log_temperature = std::log(1.0 / 0.07);

  int k() const { return static_cast<int>(input_names.size()); }
  double downstream_tau() const { return std::exp(downstream_log_temperature); }

  static ScoringParams linear_init(std::vector<std::string> names) {
    ScoringParams p;
    p.kind = ScoringKind::linear;
    p.input_names = std::move(names);
    p.input_means.assign(p.input_names.size(), 0.0);
    p.input_stds.assign(p.input_names.size(), 1.0);
    p.params.assign(p.input_names.size() + 1, 0.0);
    return p;
  }

  static ScoringParams gated_init(std::vector<std::string> names, std::uint64_t seed,
                                  int hidden = 0) {
    ScoringParams p;
    p.kind = ScoringKind::gated_mlp;
    p.input_names = std::move(names);
    const int k = p.k();
    p.hidden_width = hidden > 0 ? hidden : 4 * k;
    const int h = p.hidden_width;
    p.input_means.assign(k, 0.0);
    p.input_stds.assign(k, 1.0);
    p.params.assign(2 * h * k + 3 * h + 1, 0.0);
    Rng rng(seed);
    const double s = 1.0 / std::sqrt(static_cast<double>(k));
    for (int i = 0; i < h * k; ++i) p.params[i] = s * rng.normal();                 // Wg
    for (int i = 0; i < h * k; ++i) p.params[h * k + h + i] = s * rng.normal();     // Wv
    const double so = 1.0 / std::sqrt(static_cast<double>(h));
    for (int i = 0; i < h; ++i) p.params[2 * h * k + 2 * h + i] = so * rng.normal();  // wo
    return p;
  }

  void validate() const {
    require(!input_names.empty(), "scoring model needs >= 1 input");
    require(input_means.size() == input_names.size() && input_stds.size() == input_names.size(),
            "standardization statistics length mismatch");
    for (double s : input_stds) require(s > 0.0, "input_stds must be strictly positive");
    if (kind == ScoringKind::linear) {
      require(params.size() == input_names.size() + 1,
              "linear scorer needs exactly k weights + 1 bias");
    } else {
      const int k = this->k();
      const int h = hidden_width;
      require(h >= 1, "gated_mlp hidden width must be >= 1");
      require(static_cast<int>(params.size()) == 2 * h * k + 3 * h + 1,
              "gated_mlp parameter count mismatch");
    }
  }
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Standardized input row. Scratch avoids reallocation in hot loops.
inline void standardize_row(const ScoringParams& p, const double* row, double* out) {
  for (int j = 0; j < p.k(); ++j) out[j] = (row[j] - p.input_means[j]) / p.input_stds[j];
}

inline double score_row(const ScoringParams& p, const double* xs) {
  const int k = p.k();
  if (p.kind == ScoringKind::linear) {
    double s = p.params[k];
    for (int j = 0; j < k; ++j) s += p.params[j] * xs[j];
    return s;
  }
  const int h = p.hidden_width;
  const double* wg = p.params.data();
  const double* bg = wg + h * k;
  const double* wv = bg + h;
  const double* bv = wv + h * k;
  const double* wo = bv + h;
  const double bo = wo[h];
  double s = bo;
  for (int m = 0; m < h; ++m) {
    double a = bg[m], u = bv[m];
    for (int j = 0; j < k; ++j) {
      a += wg[m * k + j] * xs[j];
      u += wv[m * k + j] * xs[j];
    }
    s += wo[m] * sigmoid(a) * u;
  }
  return s;
}

// d score / d params for one (already standardized) input row.
inline void score_param_grad(const ScoringParams& p, const double* xs, double* grad) {
  const int k = p.k();
  if (p.kind == ScoringKind::linear) {
    for (int j = 0; j < k; ++j) grad[j] = xs[j];
    grad[k] = 1.0;
    return;
  }
  const int h = p.hidden_width;
  const double* wg = p.params.data();
  const double* bg = wg + h * k;
  const double* wv = bg + h;
  const double* bv = wv + h * k;
  const double* wo = bv + h;
  double* g_wg = grad;
  double* g_bg = g_wg + h * k;
  double* g_wv = g_bg + h;
  double* g_bv = g_wv + h * k;
  double* g_wo = g_bv + h;
  double* g_bo = g_wo + h;
  for (int m = 0; m < h; ++m) {
    double a = bg[m], u = bv[m];
    for (int j = 0; j < k; ++j) {
      a += wg[m * k + j] * xs[j];
      u += wv[m * k + j] * xs[j];
    }
    const double sg = sigmoid(a);
    const double dgate = sg * (1.0 - sg) * u * wo[m];
    const double dval = sg * wo[m];
    for (int j = 0; j < k; ++j) {
      g_wg[m * k + j] = dgate * xs[j];
      g_wv[m * k + j] = dval * xs[j];
    }
    g_bg[m] = dgate;
    g_bv[m] = dval;
    g_wo[m] = sg * u;
  }
  *g_bo = 1.0;
}

}  // namespace detail

// score_batch: one score per row of `features`; column count and order
// must match input_names.
inline std::vector<double> score_batch(const ScoringParams& p, const Matrix& features) {
  p.validate();
  require(features.cols == p.k(), "score_batch: feature column count mismatch");
  std::vector<double> scores(features.rows);
  std::vector<double> xs(p.k());
  for (int i = 0; i < features.rows; ++i) {
    detail::standardize_row(p, features.row(i), xs.data());
    scores[i] = detail::score_row(p, xs.data());
  }
  return scores;
}

// Jacobian d scores / d params, one row per example (length = params.size()).
inline Matrix score_param_jacobian(const ScoringParams& p, const Matrix& features) {
  p.validate();
  require(features.cols == p.k(), "score_param_jacobian: feature column count mismatch");
  Matrix jac(features.rows, static_cast<int>(p.params.size()));
  std::vector<double> xs(p.k());
  for (int i = 0; i < features.rows; ++i) {
    detail::standardize_row(p, features.row(i), xs.data());
    detail::score_param_grad(p, xs.data(), jac.row(i));
  }
  return jac;
}

}  // namespace flyt
