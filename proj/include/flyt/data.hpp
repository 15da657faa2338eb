#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "flyt/common.hpp"
#include "flyt/model.hpp"
#include "flyt/rng.hpp"

namespace flyt {

// Synthetic upstream pool: clean pairs share a per-class latent
// prototype; corrupted pairs mix prototypes of two different classes.
struct SyntheticPoolSpec {
  int pool_size = 0;                // M
  int d_in = 16;
  double corruption_fraction = 0.0;  // rho
  int latent_classes = 10;           // K
  double noise_scale = 0.1;
  std::uint64_t seed = 0;
};

struct PoolWithTruth {
  std::vector<ExampleRecord> records;
  std::vector<std::uint8_t> corrupt;  // aligned with records
};

namespace detail {

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  // splitmix64 over (seed ^ tag) so substreams are decoupled
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::vector<double> unit_sphere_vector(Rng& rng, int d) {
  std::vector<double> v(d);
  double n2 = 0.0;
  do {
    n2 = 0.0;
    for (double& x : v) {
      x = rng.normal();
      n2 += x * x;
    }
  } while (n2 < 1e-12);
  const double inv = 1.0 / std::sqrt(n2);
  for (double& x : v) x *= inv;
  return v;
}

}  // namespace detail

// Per-class latent prototypes, shared by the upstream pool and the
// downstream task so upstream usefulness transfers. One prototype per
// class serves both modalities.
inline std::vector<std::vector<double>> latent_prototypes(const SyntheticPoolSpec& spec) {
  require(spec.latent_classes >= 1, "latent_classes must be >= 1");
  require(spec.d_in >= 1, "d_in must be >= 1");
  Rng rng(detail::derive_seed(spec.seed, 0));
  std::vector<std::vector<double>> protos;
  protos.reserve(spec.latent_classes);
  for (int c = 0; c < spec.latent_classes; ++c)
    protos.push_back(detail::unit_sphere_vector(rng, spec.d_in));
  return protos;
}

inline PoolWithTruth generate_pool(const SyntheticPoolSpec& spec) {
  require(spec.pool_size >= 1, "pool_size must be >= 1");
  require(spec.corruption_fraction >= 0.0 && spec.corruption_fraction <= 1.0,
          "corruption_fraction must be in [0, 1]");
  require(spec.noise_scale >= 0.0, "noise_scale must be >= 0");
  if (spec.corruption_fraction > 0.0)
    require(spec.latent_classes >= 2, "corruption needs >= 2 latent classes");

  const auto protos = latent_prototypes(spec);
  const int m = spec.pool_size;
  const int num_corrupt = static_cast<int>(std::floor(spec.corruption_fraction * m));

  PoolWithTruth out;
  out.records.reserve(m);
  out.corrupt.assign(m, 0);
  for (int i = 0; i < num_corrupt; ++i) out.corrupt[i] = 1;
  Rng flag_rng(detail::derive_seed(spec.seed, 1));
  flag_rng.shuffle(out.corrupt);

  Rng rng(detail::derive_seed(spec.seed, 2));
  const int k = spec.latent_classes;
  char uid[24];
  for (int i = 0; i < m; ++i) {
    ExampleRecord r;
    std::snprintf(uid, sizeof uid, "ex%08d", i);
    r.uid = uid;
    const int img_class = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
    int txt_class = img_class;
    if (out.corrupt[i] != 0) {
      txt_class = static_cast<int>(rng.below(static_cast<std::uint64_t>(k - 1)));
      if (txt_class >= img_class) ++txt_class;
    }
    r.image_features.resize(spec.d_in);
    r.text_features.resize(spec.d_in);
    for (int j = 0; j < spec.d_in; ++j)
      r.image_features[j] = protos[img_class][j] + spec.noise_scale * rng.normal();
    for (int j = 0; j < spec.d_in; ++j)
      r.text_features[j] = protos[txt_class][j] + spec.noise_scale * rng.normal();
    out.records.push_back(std::move(r));
  }
  return out;
}

// Labeled downstream task over the same latent prototypes. Labels are
// assigned round-robin; each class gets `templates_per_class` noisy
// prototype copies as text templates.
inline DownstreamData generate_downstream(const SyntheticPoolSpec& spec, int n,
                                          int templates_per_class) {
  require(n >= 1, "downstream size must be >= 1");
  require(templates_per_class >= 1, "templates_per_class must be >= 1");
  const auto protos = latent_prototypes(spec);
  const int k = spec.latent_classes;
  Rng rng(detail::derive_seed(spec.seed, 3));

  DownstreamData out;
  out.class_templates.resize(k);
  for (int c = 0; c < k; ++c) {
    for (int t = 0; t < templates_per_class; ++t) {
      std::vector<double> tmpl(spec.d_in);
      for (int j = 0; j < spec.d_in; ++j)
        tmpl[j] = protos[c][j] + spec.noise_scale * rng.normal();
      out.class_templates[c].push_back(std::move(tmpl));
    }
  }
  out.examples.reserve(n);
  for (int i = 0; i < n; ++i) {
    DownstreamExample e;
    e.class_label = i % k;
    e.image_features.resize(spec.d_in);
    for (int j = 0; j < spec.d_in; ++j)
      e.image_features[j] = protos[e.class_label][j] + spec.noise_scale * rng.normal();
    out.examples.push_back(std::move(e));
  }
  return out;
}

// Scorer inputs for pool-based training: concatenated image features,
// text features, and their elementwise product (the product block lets
// even a linear scorer express image-text agreement).
inline Matrix upstream_features(const std::vector<ExampleRecord>& records) {
  require(!records.empty(), "upstream_features: empty pool");
  const int d = static_cast<int>(records[0].image_features.size());
  Matrix f(static_cast<int>(records.size()), 3 * d);
  for (std::size_t i = 0; i < records.size(); ++i) {
    require(static_cast<int>(records[i].image_features.size()) == d &&
                static_cast<int>(records[i].text_features.size()) == d,
            "upstream_features: ragged pool");
    double* row = f.row(static_cast<int>(i));
    for (int j = 0; j < d; ++j) {
      row[j] = records[i].image_features[j];
      row[d + j] = records[i].text_features[j];
      row[2 * d + j] = records[i].image_features[j] * records[i].text_features[j];
    }
  }
  return f;
}

inline std::vector<std::string> upstream_feature_names(int d_in) {
  std::vector<std::string> names;
  names.reserve(3 * d_in);
  for (int j = 0; j < d_in; ++j) names.push_back("img" + std::to_string(j));
  for (int j = 0; j < d_in; ++j) names.push_back("txt" + std::to_string(j));
  for (int j = 0; j < d_in; ++j) names.push_back("prod" + std::to_string(j));
  return names;
}

}  // namespace flyt
