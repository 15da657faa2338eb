#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <unordered_map>
#include <string>
#include <utility>
#include <vector>

#include "flyt/common.hpp"
#include "flyt/data.hpp"
#include "flyt/losses.hpp"
#include "flyt/metagrad.hpp"
#include "flyt/mixing.hpp"
#include "flyt/model.hpp"
#include "flyt/optim.hpp"
#include "flyt/rng.hpp"
#include "flyt/score_table.hpp"

namespace flyt {

struct TrainConfig {
  int steps = 500;               // T
  int upstream_batch = 64;       // B
  int downstream_batch = 64;     // B'
  double scoring_lr = 1e-3;
  double reference_lr = 5e-5;
  int warmup_steps = 100;
  OptimizerKind optimizer = OptimizerKind::adamw;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.2;
  DownstreamLoss loss = DownstreamLoss::ce;
  EncoderShape encoder{16, 32, 8};
  std::uint64_t data_seed = 1;
  std::uint64_t template_seed = 2;
  std::uint64_t init_seed = 3;
  int chunk_size = 0;  // 0 means the full upstream batch

  void validate() const {
    require(steps >= 0, "steps must be >= 0");
    require(upstream_batch >= 1 && downstream_batch >= 1, "batch sizes must be >= 1");
    require(warmup_steps >= 0 && warmup_steps <= steps, "warmup must be in [0, steps]");
    require(scoring_lr >= 0.0 && reference_lr >= 0.0, "learning rates must be >= 0");
    require(chunk_size >= 0, "chunk_size must be >= 0");
  }

  OptimizerSpec make_optimizer(double lr) const {
    if (optimizer == OptimizerKind::sgd) return OptimizerSpec::sgd(lr);
    return OptimizerSpec::adamw(lr, beta1, beta2, eps, weight_decay);
  }
};

// Linear warmup from 0 over `warmup` steps, then cosine decay to 0 at
// step `total`.
inline double lr_schedule(int step, int total, int warmup, double base) {
  require(step >= 0 && step < total, "lr_schedule: step out of range");
  require(warmup >= 0 && warmup <= total, "lr_schedule: bad warmup");
  if (step < warmup) return base * static_cast<double>(step + 1) / warmup;
  if (total == warmup) return base;
  const double t = static_cast<double>(step - warmup) / (total - warmup);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

struct StepLog {
  int step = 0;
  double upstream_loss = 0.0;
  double downstream_loss = 0.0;
  double lr_scoring = 0.0;
  double lr_reference = 0.0;
};

struct TrainState {
  ScoringParams phi;
  ReferenceParams theta;
  OptimizerSpec opt_phi;
  OptimizerSpec opt_theta;
  int step = 0;
};

namespace detail {

inline std::vector<double> phi_flat(const ScoringParams& phi) {
  std::vector<double> x = phi.params;
  x.push_back(phi.downstream_log_temperature);
  return x;
}

inline void phi_unflat(ScoringParams& phi, const std::vector<double>& x) {
  for (std::size_t i = 0; i < phi.params.size(); ++i) phi.params[i] = x[i];
  phi.downstream_log_temperature = x.back();
}

}  // namespace detail

// One loop iteration: score the upstream batch, softmax-weight it,
// update the reference model on the weighted contrastive loss, and
// update the scoring model by the meta-gradient of the downstream loss
// through that reference update. Both updates use the gradients taken
// at the incoming (phi_t, theta_t).
inline std::pair<StepLog, TrainState> flyt_step(const TrainState& state, const TrainConfig& cfg,
                                                const std::vector<ExampleRecord>& upstream,
                                                const Matrix& features,
                                                const DownstreamBatch& down) {
  const int b = static_cast<int>(upstream.size());
  const int chunk = cfg.chunk_size > 0 ? std::min(cfg.chunk_size, b) : b;

  TrainState next = state;
  next.opt_phi.learning_rate = lr_schedule(state.step, cfg.steps, cfg.warmup_steps, cfg.scoring_lr);
  next.opt_theta.learning_rate =
      lr_schedule(state.step, cfg.steps, cfg.warmup_steps, cfg.reference_lr);

  const MetaGradient mg = meta_gradient_accumulated(state.phi, state.theta, next.opt_theta,
                                                    upstream, features, down, cfg.loss, chunk);

  // reference update with the same weights and optimizer state the
  // meta-gradient differentiated through
  const std::vector<double> w = softmax_weights(score_batch(state.phi, features));
  const std::vector<double> g = upstream_grad(state.theta, upstream, w);
  if (next.opt_theta.kind == OptimizerKind::sgd) {
    next.theta.values = sgd_update(state.theta.values, g, next.opt_theta.learning_rate);
  } else {
    auto [tv, spec] = adamw_update(state.theta.values, g, next.opt_theta);
    next.theta.values = std::move(tv);
    next.opt_theta = std::move(spec);
  }

  // scoring update
  std::vector<double> pv = detail::phi_flat(state.phi);
  if (next.opt_phi.kind == OptimizerKind::sgd) {
    pv = sgd_update(pv, mg.grad_phi, next.opt_phi.learning_rate);
  } else {
    auto [nv, spec] = adamw_update(pv, mg.grad_phi, next.opt_phi);
    pv = std::move(nv);
    next.opt_phi = std::move(spec);
  }
  detail::phi_unflat(next.phi, pv);
  next.step = state.step + 1;

  StepLog log;
  log.step = state.step;
  log.upstream_loss = mg.upstream_loss;
  log.downstream_loss = mg.downstream_loss;
  log.lr_scoring = next.opt_phi.learning_rate;
  log.lr_reference = next.opt_theta.learning_rate;
  check_finite(log.upstream_loss, "flyt_step");
  check_finite(log.downstream_loss, "flyt_step");
  return {log, std::move(next)};
}

// Full training loop. `features` holds one scorer-input row per pool
// record (same order); `phi0.input_names` must match its width. Pools
// are reshuffled per epoch with deterministically advanced seeds; the
// downstream pool cycles independently; one template per class is
// redrawn each step from a dedicated stream.
inline ScoringParams train_flyt(const TrainConfig& cfg, const std::vector<ExampleRecord>& pool,
                                const Matrix& features, const DownstreamData& down,
                                ScoringParams phi0, std::vector<StepLog>* log_out = nullptr) {
  cfg.validate();
  phi0.validate();
  const int m = static_cast<int>(pool.size());
  require(m >= cfg.upstream_batch, "train_flyt: pool smaller than one upstream batch");
  require(features.rows == m, "train_flyt: feature row count != pool size");
  require(features.cols == phi0.k(), "train_flyt: feature width != scorer input count");
  const int md = static_cast<int>(down.examples.size());
  require(md >= cfg.downstream_batch, "train_flyt: downstream pool smaller than one batch");
  require(down.num_classes() >= 1, "train_flyt: downstream has no classes");
  for (const auto& c : down.class_templates)
    require(!c.empty(), "train_flyt: class without templates");
  if (!pool.empty())
    require(static_cast<int>(pool[0].image_features.size()) == cfg.encoder.d_in,
            "train_flyt: encoder d_in != pool feature width");

  TrainState state;
  state.phi = std::move(phi0);
  state.theta = ReferenceParams::random_init(cfg.encoder, cfg.init_seed);
  state.opt_phi = cfg.make_optimizer(cfg.scoring_lr);
  state.opt_theta = cfg.make_optimizer(cfg.reference_lr);

  Rng template_rng(cfg.template_seed);
  std::vector<int> up_order(m), down_order(md);
  int up_pos = m;  // forces a shuffle on first use
  int down_pos = md;
  std::uint64_t up_epoch = 0, down_epoch = 0;
  for (int i = 0; i < m; ++i) up_order[i] = i;
  for (int i = 0; i < md; ++i) down_order[i] = i;

  std::vector<ExampleRecord> batch(cfg.upstream_batch);
  Matrix batch_features(cfg.upstream_batch, features.cols);
  DownstreamBatch dbatch;
  dbatch.examples.resize(cfg.downstream_batch);
  dbatch.templates.resize(down.num_classes());

  if (log_out != nullptr) log_out->clear();
  for (int step = 0; step < cfg.steps; ++step) {
    if (up_pos + cfg.upstream_batch > m) {
      Rng r(detail::derive_seed(cfg.data_seed, 0x100 + up_epoch++));
      r.shuffle(up_order);
      up_pos = 0;
    }
    if (down_pos + cfg.downstream_batch > md) {
      Rng r(detail::derive_seed(cfg.data_seed, 0x200 + down_epoch++));
      r.shuffle(down_order);
      down_pos = 0;
    }
    for (int i = 0; i < cfg.upstream_batch; ++i) {
      const int idx = up_order[up_pos + i];
      batch[i] = pool[idx];
      for (int j = 0; j < features.cols; ++j) batch_features.at(i, j) = features.at(idx, j);
    }
    up_pos += cfg.upstream_batch;
    for (int i = 0; i < cfg.downstream_batch; ++i)
      dbatch.examples[i] = down.examples[down_order[down_pos + i]];
    down_pos += cfg.downstream_batch;
    for (int c = 0; c < down.num_classes(); ++c) {
      const auto& pool_c = down.class_templates[c];
      dbatch.templates[c] = pool_c[template_rng.below(pool_c.size())];
    }

    try {
      auto [log, next] = flyt_step(state, cfg, batch, batch_features, dbatch);
      state = std::move(next);
      if (log_out != nullptr) log_out->push_back(log);
    } catch (const numeric_failure& e) {
      throw numeric_failure(e.stage(), std::string("at step ") + std::to_string(step) + ": " +
                                           e.what());
    }
  }
  return state.phi;
}

// Computes population mean/sigma per feature column and bakes them
// into the scorer, so raw features arrive standardized (mirrors how
// score columns are standardized before mixing).
inline void bake_feature_stats(ScoringParams& phi, const Matrix& features) {
  require(features.cols == phi.k(), "bake_feature_stats: column count mismatch");
  require(features.rows >= 1, "bake_feature_stats: empty feature matrix");
  const double n = static_cast<double>(features.rows);
  for (int j = 0; j < features.cols; ++j) {
    double mean = 0.0;
    for (int i = 0; i < features.rows; ++i) mean += features.at(i, j);
    mean /= n;
    double var = 0.0;
    for (int i = 0; i < features.rows; ++i) {
      const double d = features.at(i, j) - mean;
      var += d * d;
    }
    var /= n;
    require(var > 0.0, "bake_feature_stats: constant feature column " + phi.input_names[j]);
    phi.input_means[j] = mean;
    phi.input_stds[j] = std::sqrt(var);
  }
}

// One score per pool record, column "flyt". Row i of `features` feeds
// record i; empty pools yield empty tables.
inline ScoreTable score_pool(const ScoringParams& phi, const std::vector<ExampleRecord>& pool,
                             const Matrix& features) {
  require(features.rows == static_cast<int>(pool.size()), "score_pool: row count mismatch");
  ScoreTable t;
  t.uids.reserve(pool.size());
  for (const auto& r : pool) t.uids.push_back(r.uid);
  std::vector<double> scores;
  if (!pool.empty()) scores = score_batch(phi, features);
  scores.resize(pool.size(), 0.0);
  t.add_column("flyt", std::move(scores));
  t.validate();
  return t;
}

// Trains a linear mixer over the table's score columns: the table rows
// (matched to pool records by uid) are the scorer inputs, with
// standardization statistics computed once over the whole table and
// baked into the returned model.
inline ScoringParams train_mixer(const ScoreTable& table, const std::vector<ExampleRecord>& pool,
                                 const DownstreamData& down, const TrainConfig& cfg,
                                 std::vector<StepLog>* log_out = nullptr) {
  table.validate();
  require(table.rows() == static_cast<int>(pool.size()),
          "train_mixer: table row count != pool size");
  ScoringParams phi0 = ScoringParams::linear_init(table.names);
  const ColumnStats stats = standardize(table).second;
  phi0.input_means = stats.means;
  phi0.input_stds = stats.stds;

  // align rows with pool order by uid
  std::unordered_map<std::string, int> row_of;
  row_of.reserve(table.uids.size());
  for (int i = 0; i < table.rows(); ++i) row_of.emplace(table.uids[i], i);
  Matrix features(table.rows(), table.cols());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto it = row_of.find(pool[i].uid);
    require(it != row_of.end(), "train_mixer: pool uid missing from table: " + pool[i].uid);
    for (int j = 0; j < table.cols(); ++j)
      features.at(static_cast<int>(i), j) = table.columns[j][it->second];
  }
  return train_flyt(cfg, pool, features, down, std::move(phi0), log_out);
}

}  // namespace flyt
