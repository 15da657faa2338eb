#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>

#include "flyt/data.hpp"
#include "flyt/io.hpp"
#include "flyt/mixing.hpp"
#include "flyt/score_table.hpp"

using namespace flyt;

namespace {

std::string tmp_path(const std::string& name) {
  return std::string("test_artifact_") + name;
}

struct FileGuard {
  std::string path;
  explicit FileGuard(std::string p) : path(std::move(p)) {}
  ~FileGuard() { std::remove(path.c_str()); }
};

SyntheticPoolSpec small_spec() {
  SyntheticPoolSpec s;
  s.pool_size = 200;
  s.d_in = 6;
  s.corruption_fraction = 0.25;
  s.latent_classes = 4;
  s.seed = 9;
  return s;
}

}  // namespace

TEST_CASE("generated pools plant exactly the requested corruption") {
  auto spec = small_spec();
  const auto pool = generate_pool(spec);
  CHECK(pool.records.size() == 200);
  int corrupt = 0;
  std::set<std::string> uids;
  for (std::size_t i = 0; i < pool.records.size(); ++i) {
    corrupt += pool.corrupt[i];
    uids.insert(pool.records[i].uid);
  }
  CHECK(corrupt == 50);  // floor(0.25 * 200)
  CHECK(uids.size() == 200);

  spec.corruption_fraction = 0.0;
  for (auto f : generate_pool(spec).corrupt) CHECK(f == 0);

  spec.corruption_fraction = 1.0;
  spec.latent_classes = 2;
  for (auto f : generate_pool(spec).corrupt) CHECK(f == 1);
}

TEST_CASE("pool generation is deterministic and validates its spec") {
  const auto spec = small_spec();
  const auto p1 = generate_pool(spec);
  const auto p2 = generate_pool(spec);
  CHECK(p1.corrupt == p2.corrupt);
  for (std::size_t i = 0; i < p1.records.size(); ++i) {
    CHECK(p1.records[i].uid == p2.records[i].uid);
    CHECK(p1.records[i].image_features == p2.records[i].image_features);
    CHECK(p1.records[i].text_features == p2.records[i].text_features);
  }
  SyntheticPoolSpec bad = spec;
  bad.latent_classes = 1;
  CHECK_THROWS_AS(generate_pool(bad), invalid_input);
}

TEST_CASE("corrupted pairs mix two different latent classes") {
  // With zero noise, clean pairs have identical image/text features and
  // corrupted pairs differ.
  auto spec = small_spec();
  spec.noise_scale = 0.0;
  const auto pool = generate_pool(spec);
  for (std::size_t i = 0; i < pool.records.size(); ++i) {
    const bool same = pool.records[i].image_features == pool.records[i].text_features;
    CHECK(same == (pool.corrupt[i] == 0));
  }
}

TEST_CASE("downstream labels cycle through the classes") {
  const auto spec = small_spec();
  const auto down = generate_downstream(spec, 4, 2);
  CHECK(down.num_classes() == 4);
  std::set<int> labels;
  for (const auto& e : down.examples) labels.insert(e.class_label);
  CHECK(labels == std::set<int>{0, 1, 2, 3});
  for (const auto& c : down.class_templates) CHECK(c.size() == 2);
}

TEST_CASE("class-conditional feature means approach the prototypes") {
  auto spec = small_spec();
  spec.noise_scale = 0.1;
  const int per_class = 400;
  const auto down = generate_downstream(spec, per_class * spec.latent_classes, 1);
  const auto protos = latent_prototypes(spec);
  std::vector<std::vector<double>> mean(spec.latent_classes,
                                        std::vector<double>(spec.d_in, 0.0));
  std::vector<int> count(spec.latent_classes, 0);
  for (const auto& e : down.examples) {
    ++count[e.class_label];
    for (int j = 0; j < spec.d_in; ++j) mean[e.class_label][j] += e.image_features[j];
  }
  const double bound = 3.0 * spec.noise_scale / std::sqrt(static_cast<double>(per_class));
  for (int c = 0; c < spec.latent_classes; ++c)
    for (int j = 0; j < spec.d_in; ++j)
      CHECK(std::abs(mean[c][j] / count[c] - protos[c][j]) < bound);
}

TEST_CASE("upstream feature rows concatenate image, text, and product blocks") {
  const auto pool = generate_pool(small_spec());
  const Matrix f = upstream_features(pool.records);
  CHECK(f.cols == 18);
  const auto& r = pool.records[3];
  for (int j = 0; j < 6; ++j) {
    CHECK(f.at(3, j) == r.image_features[j]);
    CHECK(f.at(3, 6 + j) == r.text_features[j]);
    CHECK(f.at(3, 12 + j) == r.image_features[j] * r.text_features[j]);
  }
  CHECK(upstream_feature_names(6).size() == 18);
}

TEST_CASE("pool binary round trip is bit-exact") {
  const auto pool = generate_pool(small_spec());
  FileGuard g(tmp_path("pool.bin"));
  save_pool(pool, g.path);
  const auto loaded = load_pool(g.path);
  CHECK(loaded.corrupt == pool.corrupt);
  REQUIRE(loaded.records.size() == pool.records.size());
  for (std::size_t i = 0; i < pool.records.size(); ++i) {
    CHECK(loaded.records[i].uid == pool.records[i].uid);
    CHECK(loaded.records[i].image_features == pool.records[i].image_features);
    CHECK(loaded.records[i].text_features == pool.records[i].text_features);
  }
}

TEST_CASE("pool loader rejects corrupted files") {
  const auto pool = generate_pool(small_spec());
  FileGuard g(tmp_path("pool_bad.bin"));
  save_pool(pool, g.path);
  // truncate
  {
    std::ifstream in(g.path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    std::ofstream out(g.path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<long>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_pool(g.path), parse_failure);
  // bad magic
  {
    std::ofstream out(g.path, std::ios::binary | std::ios::trunc);
    out << "NOTAPOOLxxxxxxxxxxxx";
  }
  CHECK_THROWS_AS(load_pool(g.path), parse_failure);
}

TEST_CASE("scoring params JSON round trip is bit-exact") {
  for (int gated = 0; gated < 2; ++gated) {
    ScoringParams p = gated ? ScoringParams::gated_init({"a", "b"}, 3, 4)
                            : ScoringParams::linear_init({"a", "b"});
    Rng rng(81);
    for (auto& x : p.params) x = rng.normal();
    p.input_means = {0.123456789012345, -3.0};
    p.input_stds = {1.5, 0.25};
    p.downstream_log_temperature = std::log(1.0 / 0.07) + 0.01;
    FileGuard g(tmp_path(gated ? "phi_g.json" : "phi_l.json"));
    save_scoring_params(p, g.path);
    const auto q = load_scoring_params(g.path);
    CHECK(q.kind == p.kind);
    CHECK(q.input_names == p.input_names);
    CHECK(q.input_means == p.input_means);
    CHECK(q.input_stds == p.input_stds);
    CHECK(q.params == p.params);
    CHECK(q.hidden_width == p.hidden_width);
    CHECK(q.downstream_log_temperature == p.downstream_log_temperature);
  }
}

TEST_CASE("scoring params loader rejects version mismatch and malformed docs") {
  ScoringParams p = ScoringParams::linear_init({"a"});
  FileGuard g(tmp_path("phi_bad.json"));
  auto j = scoring_params_to_json(p);
  j["format_version"] = 999;
  detail::save_json_file(j, g.path);
  try {
    load_scoring_params(g.path);
    FAIL("expected parse_failure");
  } catch (const parse_failure& e) {
    CHECK(std::string(e.what()).find("format_version") != std::string::npos);
  }
  j["format_version"] = kScoringFormatVersion;
  j.erase("weights");
  detail::save_json_file(j, g.path);
  CHECK_THROWS_AS(load_scoring_params(g.path), parse_failure);
}

TEST_CASE("reference params JSON round trip is bit-exact") {
  const auto p = ReferenceParams::random_init({4, 5, 3}, 17, 9.0);
  FileGuard g(tmp_path("theta.json"));
  save_reference_params(p, g.path);
  const auto q = load_reference_params(g.path);
  CHECK(q.shape.d_in == 4);
  CHECK(q.shape.d_hidden == 5);
  CHECK(q.shape.d_emb == 3);
  CHECK(q.values == p.values);
}

TEST_CASE("score table CSV round trip and rejections") {
  ScoreTable t;
  t.uids = {"a", "b", "c"};
  t.add_column("s1", {0.1, -2.5, 1e-17});
  t.add_column("s2", {3.0, 0.333333333333333314829616256247390992939472198486328125, -1.0});
  FileGuard g(tmp_path("table.csv"));
  save_score_table_csv(t, g.path);
  const auto loaded = load_score_table_csv(g.path);
  CHECK(loaded.uids == t.uids);
  CHECK(loaded.names == t.names);
  CHECK(loaded.columns == t.columns);  // bit-exact through %.17g

  // aggregate output reloads identically too
  const auto sum = aggregate_sum(t, false);
  save_score_table_csv(sum, g.path);
  CHECK(load_score_table_csv(g.path).columns == sum.columns);

  {
    std::ofstream out(g.path, std::ios::trunc);
    out << "uid,s\nx,1.0\nx,2.0\n";
  }
  CHECK_THROWS_AS(load_score_table_csv(g.path), parse_failure);
  {
    std::ofstream out(g.path, std::ios::trunc);
    out << "uid,s\nx,notanumber\n";
  }
  CHECK_THROWS_AS(load_score_table_csv(g.path), parse_failure);
  {
    std::ofstream out(g.path, std::ios::trunc);
    out << "id,s\nx,1.0\n";
  }
  CHECK_THROWS_AS(load_score_table_csv(g.path), parse_failure);
}

TEST_CASE("manifest round trip preserves order and multiplicity") {
  SampleManifest m{{"b", "a", "b", "c"}};
  FileGuard g(tmp_path("manifest.txt"));
  save_manifest(m, g.path);
  CHECK(load_manifest(g.path).uids == m.uids);
}

TEST_CASE("histogram JSON shape") {
  const auto j = histogram_to_json({{1, 3}, {4, 2}});
  CHECK(j["1"] == 3);
  CHECK(j["4"] == 2);
  CHECK(j.size() == 2);
}
