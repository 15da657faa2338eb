// flyt: command-line front end for the learned data-filtering library.
//
// Subcommands:
//   gen-pool     generate a synthetic image-text pool with planted corruption
//   train-flyt   train a scoring model against the pool with meta-gradients
//   train-mixer  train a linear mixer over an existing score table
//   mix-baseline combine score columns with a fixed (non-learned) rule
//   sample       draw a training manifest from a score column
//   stats        repetition histogram of a manifest
//   gradcheck    compare analytic meta-gradients against finite differences
//
// Exit codes: 0 success, 1 check failed (gradcheck), 2 usage or input
// error, 3 numeric failure (reported with its pipeline stage).

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "flyt/data.hpp"
#include "flyt/gradcheck.hpp"
#include "flyt/io.hpp"
#include "flyt/metrics.hpp"
#include "flyt/mixing.hpp"
#include "flyt/sampling.hpp"
#include "flyt/score_table.hpp"
#include "flyt/training.hpp"

namespace {

constexpr const char* kToolVersion = "1.0.0";

using nlohmann::json;

void echo_config(const std::string& command, const json& options) {
  json j;
  j["tool_version"] = kToolVersion;
  j["command"] = command;
  j["options"] = options;
  std::cerr << j.dump() << '\n';
}

// options shared by gen-pool and the two training commands that
// regenerate the synthetic downstream task
struct PoolOpts {
  int size = 20000;
  int d_in = 16;
  int classes = 10;
  double corruption = 0.3;
  double noise = 0.1;
  std::uint64_t seed = 42;

  void attach(CLI::App* app, bool with_size) {
    if (with_size) app->add_option("--size", size, "pool size M")->check(CLI::PositiveNumber);
    app->add_option("--d-in", d_in, "raw feature width")->check(CLI::PositiveNumber);
    app->add_option("--classes", classes, "latent class count")->check(CLI::PositiveNumber);
    if (with_size)
      app->add_option("--corruption", corruption, "corrupted fraction in [0,1]")
          ->check(CLI::Range(0.0, 1.0));
    app->add_option("--noise", noise, "feature noise scale")->check(CLI::NonNegativeNumber);
    app->add_option("--gen-seed", seed, "synthetic data seed");
  }

  flyt::SyntheticPoolSpec spec() const {
    flyt::SyntheticPoolSpec s;
    s.pool_size = size;
    s.d_in = d_in;
    s.latent_classes = classes;
    s.corruption_fraction = corruption;
    s.noise_scale = noise;
    s.seed = seed;
    return s;
  }

  json to_json() const {
    return {{"size", size},   {"d_in", d_in},   {"classes", classes},
            {"corruption", corruption}, {"noise", noise}, {"gen_seed", seed}};
  }
};

struct TrainOpts {
  flyt::TrainConfig cfg;
  std::string optimizer = "adamw";
  std::string loss = "ce";
  int downstream_size = 2000;
  int templates_per_class = 4;

  void attach(CLI::App* app) {
    app->add_option("--steps", cfg.steps, "training steps")->check(CLI::NonNegativeNumber);
    app->add_option("--batch", cfg.upstream_batch, "upstream batch size")
        ->check(CLI::PositiveNumber);
    app->add_option("--downstream-batch", cfg.downstream_batch, "downstream batch size")
        ->check(CLI::PositiveNumber);
    app->add_option("--scoring-lr", cfg.scoring_lr, "scoring model peak learning rate");
    app->add_option("--reference-lr", cfg.reference_lr, "reference model peak learning rate");
    app->add_option("--warmup", cfg.warmup_steps, "linear warmup steps")
        ->check(CLI::NonNegativeNumber);
    app->add_option("--optimizer", optimizer, "sgd or adamw")
        ->check(CLI::IsMember({"sgd", "adamw"}));
    app->add_option("--beta1", cfg.beta1, "adamw beta1");
    app->add_option("--beta2", cfg.beta2, "adamw beta2");
    app->add_option("--eps", cfg.eps, "adamw epsilon");
    app->add_option("--weight-decay", cfg.weight_decay, "adamw decoupled weight decay");
    app->add_option("--loss", loss, "downstream loss")
        ->check(CLI::IsMember({"ce", "ce-temperature", "clip"}));
    app->add_option("--hidden", cfg.encoder.d_hidden, "reference encoder hidden width")
        ->check(CLI::PositiveNumber);
    app->add_option("--emb", cfg.encoder.d_emb, "reference embedding width")
        ->check(CLI::PositiveNumber);
    app->add_option("--data-seed", cfg.data_seed, "batch shuffling seed");
    app->add_option("--template-seed", cfg.template_seed, "template draw seed");
    app->add_option("--init-seed", cfg.init_seed, "reference init seed");
    app->add_option("--chunk", cfg.chunk_size, "meta-gradient chunk size (0 = full batch)")
        ->check(CLI::NonNegativeNumber);
    app->add_option("--downstream-size", downstream_size, "downstream example count")
        ->check(CLI::PositiveNumber);
    app->add_option("--templates-per-class", templates_per_class, "templates per class")
        ->check(CLI::PositiveNumber);
  }

  void finalize() {
    cfg.optimizer = optimizer == "sgd" ? flyt::OptimizerKind::sgd : flyt::OptimizerKind::adamw;
    if (loss == "ce")
      cfg.loss = flyt::DownstreamLoss::ce;
    else if (loss == "ce-temperature")
      cfg.loss = flyt::DownstreamLoss::ce_temperature;
    else
      cfg.loss = flyt::DownstreamLoss::clip;
  }

  json to_json() const {
    return {{"steps", cfg.steps},
            {"batch", cfg.upstream_batch},
            {"downstream_batch", cfg.downstream_batch},
            {"scoring_lr", cfg.scoring_lr},
            {"reference_lr", cfg.reference_lr},
            {"warmup", cfg.warmup_steps},
            {"optimizer", optimizer},
            {"beta1", cfg.beta1},
            {"beta2", cfg.beta2},
            {"eps", cfg.eps},
            {"weight_decay", cfg.weight_decay},
            {"loss", loss},
            {"hidden", cfg.encoder.d_hidden},
            {"emb", cfg.encoder.d_emb},
            {"data_seed", cfg.data_seed},
            {"template_seed", cfg.template_seed},
            {"init_seed", cfg.init_seed},
            {"chunk", cfg.chunk_size},
            {"downstream_size", downstream_size},
            {"templates_per_class", templates_per_class}};
  }
};

void write_log(const std::vector<flyt::StepLog>& log, const std::string& path) {
  json j;
  j["tool_version"] = kToolVersion;
  j["steps"] = json::array();
  for (const auto& s : log)
    j["steps"].push_back({{"step", s.step},
                          {"upstream_loss", s.upstream_loss},
                          {"downstream_loss", s.downstream_loss},
                          {"lr_scoring", s.lr_scoring},
                          {"lr_reference", s.lr_reference}});
  flyt::detail::save_json_file(j, path);
}

int run(int argc, char** argv) {
  CLI::App app{"flyt: learned data filtering for contrastive image-text pretraining"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  int threads = 1;
  app.add_option("--threads", threads, "worker threads (execution is deterministic)")
      ->check(CLI::PositiveNumber);

  // ---- gen-pool ----
  auto* gen = app.add_subcommand("gen-pool", "generate a synthetic pool");
  PoolOpts gen_pool_opts;
  gen_pool_opts.attach(gen, true);
  std::string gen_out, gen_truth_out;
  gen->add_option("--out", gen_out, "output pool file (binary)")->required();
  gen->add_option("--truth-out", gen_truth_out, "optional CSV of ground-truth corrupt flags");

  // ---- train-flyt ----
  auto* trainf = app.add_subcommand("train-flyt", "train a scoring model on a pool");
  PoolOpts trainf_pool;
  trainf_pool.attach(trainf, false);
  TrainOpts trainf_train;
  trainf_train.attach(trainf);
  std::string trainf_pool_path, trainf_out, trainf_scores_out, trainf_log_out;
  trainf->add_option("--pool", trainf_pool_path, "pool file from gen-pool")->required();
  trainf->add_option("--out", trainf_out, "output scoring model (JSON)")->required();
  trainf->add_option("--scores-out", trainf_scores_out, "optional per-example score CSV");
  trainf->add_option("--log-out", trainf_log_out, "optional per-step loss log (JSON)");

  // ---- train-mixer ----
  auto* trainm = app.add_subcommand("train-mixer", "train a mixer over a score table");
  PoolOpts trainm_pool;
  trainm_pool.attach(trainm, false);
  TrainOpts trainm_train;
  trainm_train.attach(trainm);
  std::string trainm_table, trainm_pool_path, trainm_out, trainm_mixed_out, trainm_log_out;
  trainm->add_option("--table", trainm_table, "score table CSV")->required();
  trainm->add_option("--pool", trainm_pool_path, "pool file from gen-pool")->required();
  trainm->add_option("--out", trainm_out, "output mixer model (JSON)")->required();
  trainm->add_option("--mixed-out", trainm_mixed_out, "optional mixed-score CSV");
  trainm->add_option("--log-out", trainm_log_out, "optional per-step loss log (JSON)");

  // ---- mix-baseline ----
  auto* mixb = app.add_subcommand("mix-baseline", "fixed-rule score combination");
  std::string mixb_table, mixb_mode = "std-sum", mixb_out;
  double mixb_ratio = 8.0;
  std::vector<double> mixb_acc;
  mixb->add_option("--table", mixb_table, "score table CSV")->required();
  mixb->add_option("--mode", mixb_mode, "sum, std-sum, or in-weighted")
      ->check(CLI::IsMember({"sum", "std-sum", "in-weighted"}));
  mixb->add_option("--ratio", mixb_ratio, "max/min weight ratio (in-weighted)");
  mixb->add_option("--accuracies", mixb_acc, "per-column accuracies (in-weighted)");
  mixb->add_option("--out", mixb_out, "output CSV")->required();

  // ---- sample ----
  auto* smp = app.add_subcommand("sample", "draw a manifest from a score column");
  std::string smp_table, smp_column, smp_method, smp_out;
  double smp_alpha = 0.0, smp_p = 0.0;
  int smp_beta = 1, smp_g = 1;
  std::int64_t smp_n = 0;
  std::uint64_t smp_seed = 0;
  bool smp_shuffle = false;
  smp->add_option("--table", smp_table, "score table CSV")->required();
  smp->add_option("--column", smp_column, "score column name")->required();
  smp->add_option("--method", smp_method, "scs, hcs, nocap, or threshold")
      ->required()
      ->check(CLI::IsMember({"scs", "hcs", "nocap", "threshold"}));
  smp->add_option("--alpha", smp_alpha, "soft cap penalty (scs)");
  smp->add_option("--beta", smp_beta, "hard repetition cap (hcs)");
  smp->add_option("--G", smp_g, "per-iteration batch size (scs)");
  smp->add_option("--N", smp_n, "manifest size (scs/hcs/nocap)");
  smp->add_option("-p,--fraction", smp_p, "selected fraction (threshold)");
  smp->add_option("--seed", smp_seed, "sampler seed");
  smp->add_flag("--shuffle", smp_shuffle, "shuffle the manifest (seeded)");
  smp->add_option("--out", smp_out, "output manifest")->required();

  // ---- stats ----
  auto* sts = app.add_subcommand("stats", "repetition histogram of a manifest");
  std::string sts_manifest, sts_out;
  sts->add_option("--manifest", sts_manifest, "manifest file")->required();
  sts->add_option("--out", sts_out, "output JSON (stdout when omitted)");

  // ---- gradcheck ----
  auto* gck = app.add_subcommand("gradcheck", "meta-gradient vs finite differences");
  std::uint64_t gck_seed = 1;
  int gck_configs = 3;
  double gck_tol = 1e-4;
  std::string gck_out;
  gck->add_option("--seed", gck_seed, "base seed for the probe configurations");
  gck->add_option("--configs", gck_configs, "number of random configurations")
      ->check(CLI::PositiveNumber);
  gck->add_option("--tolerance", gck_tol, "max relative error allowed");
  gck->add_option("--out", gck_out, "report JSON (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (gen->parsed()) {
    json opts = gen_pool_opts.to_json();
    opts["out"] = gen_out;
    opts["threads"] = threads;
    echo_config("gen-pool", opts);
    const auto pool = flyt::generate_pool(gen_pool_opts.spec());
    flyt::save_pool(pool, gen_out);
    if (!gen_truth_out.empty()) {
      flyt::ScoreTable truth;
      std::vector<double> flags;
      for (std::size_t i = 0; i < pool.records.size(); ++i) {
        truth.uids.push_back(pool.records[i].uid);
        flags.push_back(static_cast<double>(pool.corrupt[i]));
      }
      truth.add_column("corrupt", std::move(flags));
      flyt::save_score_table_csv(truth, gen_truth_out);
    }
    return 0;
  }

  if (trainf->parsed()) {
    trainf_train.finalize();
    json opts = trainf_pool.to_json();
    opts.update(trainf_train.to_json());
    opts["pool"] = trainf_pool_path;
    opts["out"] = trainf_out;
    opts["threads"] = threads;
    echo_config("train-flyt", opts);

    const auto pool = flyt::load_pool(trainf_pool_path);
    const int d_in = static_cast<int>(pool.records[0].image_features.size());
    flyt::require(trainf_pool.d_in == 16 || trainf_pool.d_in == d_in,
                  "train-flyt: --d-in disagrees with the pool file");
    auto spec = trainf_pool.spec();
    spec.d_in = d_in;
    spec.pool_size = static_cast<int>(pool.records.size());
    trainf_train.cfg.encoder.d_in = d_in;

    const auto down = flyt::generate_downstream(spec, trainf_train.downstream_size,
                                                trainf_train.templates_per_class);
    const flyt::Matrix features = flyt::upstream_features(pool.records);
    flyt::ScoringParams phi0 =
        flyt::ScoringParams::linear_init(flyt::upstream_feature_names(d_in));
    flyt::bake_feature_stats(phi0, features);

    std::vector<flyt::StepLog> log;
    const flyt::ScoringParams phi =
        flyt::train_flyt(trainf_train.cfg, pool.records, features, down, phi0, &log);
    flyt::save_scoring_params(phi, trainf_out);
    if (!trainf_scores_out.empty())
      flyt::save_score_table_csv(flyt::score_pool(phi, pool.records, features),
                                 trainf_scores_out);
    if (!trainf_log_out.empty()) write_log(log, trainf_log_out);
    return 0;
  }

  if (trainm->parsed()) {
    trainm_train.finalize();
    json opts = trainm_pool.to_json();
    opts.update(trainm_train.to_json());
    opts["table"] = trainm_table;
    opts["pool"] = trainm_pool_path;
    opts["out"] = trainm_out;
    opts["threads"] = threads;
    echo_config("train-mixer", opts);

    const auto table = flyt::load_score_table_csv(trainm_table);
    const auto pool = flyt::load_pool(trainm_pool_path);
    const int d_in = static_cast<int>(pool.records[0].image_features.size());
    auto spec = trainm_pool.spec();
    spec.d_in = d_in;
    spec.pool_size = static_cast<int>(pool.records.size());
    trainm_train.cfg.encoder.d_in = d_in;

    const auto down = flyt::generate_downstream(spec, trainm_train.downstream_size,
                                                trainm_train.templates_per_class);
    std::vector<flyt::StepLog> log;
    const flyt::ScoringParams phi =
        flyt::train_mixer(table, pool.records, down, trainm_train.cfg, &log);
    flyt::save_scoring_params(phi, trainm_out);
    if (!trainm_mixed_out.empty())
      flyt::save_score_table_csv(flyt::apply_mixer(phi, table), trainm_mixed_out);
    if (!trainm_log_out.empty()) write_log(log, trainm_log_out);
    return 0;
  }

  if (mixb->parsed()) {
    echo_config("mix-baseline", {{"table", mixb_table},
                                 {"mode", mixb_mode},
                                 {"ratio", mixb_ratio},
                                 {"accuracies", mixb_acc},
                                 {"out", mixb_out},
                                 {"threads", threads}});
    const auto table = flyt::load_score_table_csv(mixb_table);
    flyt::ScoreTable out;
    if (mixb_mode == "sum") {
      out = flyt::aggregate_sum(table, false);
    } else if (mixb_mode == "std-sum") {
      out = flyt::aggregate_sum(table, true);
    } else {
      flyt::require(!mixb_acc.empty(), "mix-baseline: in-weighted needs --accuracies");
      out = flyt::in_weighted(table, mixb_acc, mixb_ratio);
    }
    flyt::save_score_table_csv(out, mixb_out);
    return 0;
  }

  if (smp->parsed()) {
    echo_config("sample", {{"table", smp_table},
                           {"column", smp_column},
                           {"method", smp_method},
                           {"alpha", smp_alpha},
                           {"beta", smp_beta},
                           {"G", smp_g},
                           {"N", smp_n},
                           {"fraction", smp_p},
                           {"seed", smp_seed},
                           {"shuffle", smp_shuffle},
                           {"out", smp_out},
                           {"threads", threads}});
    const auto table = flyt::load_score_table_csv(smp_table);
    flyt::SampleManifest manifest;
    if (smp_method == "scs") {
      manifest = flyt::scs_sample(table, smp_column, smp_alpha, smp_n, smp_g, smp_seed);
    } else if (smp_method == "hcs") {
      manifest = flyt::hcs_sample(table, smp_column, smp_beta, smp_n, smp_seed);
    } else if (smp_method == "nocap") {
      manifest = flyt::nocap_sample(table, smp_column, smp_n, smp_seed);
    } else {
      manifest = flyt::threshold_select(table, smp_column, smp_p);
    }
    if (smp_shuffle) manifest = flyt::shuffle_manifest(std::move(manifest), smp_seed + 1);
    flyt::save_manifest(manifest, smp_out);
    return 0;
  }

  if (sts->parsed()) {
    echo_config("stats", {{"manifest", sts_manifest}, {"out", sts_out}, {"threads", threads}});
    const auto manifest = flyt::load_manifest(sts_manifest);
    json j;
    j["tool_version"] = kToolVersion;
    j["total_draws"] = manifest.uids.size();
    j["repetition_histogram"] = flyt::histogram_to_json(flyt::repetition_histogram(manifest));
    if (sts_out.empty())
      std::cout << j.dump(2) << '\n';
    else
      flyt::detail::save_json_file(j, sts_out);
    return 0;
  }

  if (gck->parsed()) {
    echo_config("gradcheck", {{"seed", gck_seed},
                              {"configs", gck_configs},
                              {"tolerance", gck_tol},
                              {"out", gck_out},
                              {"threads", threads}});
    flyt::GradCheckReport report;
    report.tolerance = gck_tol;
    report.pass = true;
    for (int c = 0; c < gck_configs; ++c) {
      // small random probe problem: pool of 8, downstream batch of 8
      flyt::Rng rng(flyt::detail::derive_seed(gck_seed, static_cast<std::uint64_t>(c)));
      const int b = 8, d_in = 4, k = 4;
      auto theta = flyt::ReferenceParams::random_init({d_in, 5, 3}, rng.next_u64());
      std::vector<flyt::ExampleRecord> upstream(b);
      flyt::Matrix features(b, k);
      for (int i = 0; i < b; ++i) {
        upstream[i].uid = "u" + std::to_string(i);
        upstream[i].image_features.resize(d_in);
        upstream[i].text_features.resize(d_in);
        for (int j = 0; j < d_in; ++j) {
          upstream[i].image_features[j] = rng.normal();
          upstream[i].text_features[j] = rng.normal();
        }
        for (int j = 0; j < k; ++j) features.at(i, j) = rng.normal();
      }
      auto phi = flyt::ScoringParams::linear_init({"f0", "f1", "f2", "f3"});
      for (auto& p : phi.params) p = 0.3 * rng.normal();
      flyt::DownstreamBatch down;
      down.examples.resize(8);
      for (auto& e : down.examples) {
        e.class_label = static_cast<int>(rng.below(3));
        e.image_features.resize(d_in);
        for (int j = 0; j < d_in; ++j) e.image_features[j] = rng.normal();
      }
      down.templates.resize(3);
      for (auto& t : down.templates) {
        t.resize(d_in);
        for (int j = 0; j < d_in; ++j) t[j] = rng.normal();
      }
      for (auto kind : {flyt::OptimizerKind::sgd, flyt::OptimizerKind::adamw}) {
        for (auto loss : {flyt::DownstreamLoss::ce, flyt::DownstreamLoss::ce_temperature,
                          flyt::DownstreamLoss::clip}) {
          // adamw eps of 1e-4 keeps the update smooth enough for the
          // finite-difference oracle (fresh moments make the first
          // step behave like g / (c|g| + eps))
          const auto opt = kind == flyt::OptimizerKind::sgd
                               ? flyt::OptimizerSpec::sgd(0.05)
                               : flyt::OptimizerSpec::adamw(0.01, 0.9, 0.98, 1e-2, 0.1);
          const auto mg = flyt::meta_gradient_direct(phi, theta, opt, upstream, features,
                                                     down, loss);
          const auto fd = flyt::finite_difference_metagrad(phi, theta, opt, upstream,
                                                           features, down, loss);
          const std::string name = "config" + std::to_string(c) + "/" +
                                   (kind == flyt::OptimizerKind::sgd ? "sgd" : "adamw") + "/" +
                                   flyt::to_string(loss);
          auto blk = flyt::compare_gradients(name, mg.grad_phi, fd,
                                             "central finite differences, step 1e-5", gck_tol);
          report.pass = report.pass && blk.pass;
          report.blocks.push_back(std::move(blk));
        }
      }
    }
    json j = flyt::gradcheck_report_to_json(report);
    j["tool_version"] = kToolVersion;
    if (gck_out.empty())
      std::cout << j.dump(2) << '\n';
    else
      flyt::detail::save_json_file(j, gck_out);
    return report.pass ? 0 : 1;
  }

  return 2;  // unreachable: a subcommand is required
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const flyt::numeric_failure& e) {
    std::cerr << "numeric failure in stage '" << e.stage() << "': " << e.what() << '\n';
    return 3;
  } catch (const flyt::invalid_input& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const flyt::parse_failure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
