#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "flyt/common.hpp"
#include "flyt/data.hpp"
#include "flyt/model.hpp"
#include "flyt/sampling.hpp"

namespace flyt {

inline constexpr int kScoringFormatVersion = 1;
inline constexpr int kReferenceFormatVersion = 1;
inline constexpr std::uint8_t kPoolFormatVersion = 1;

namespace detail {

inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw parse_failure("cannot open: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw parse_failure(path + ": " + e.what());
  }
  return j;
}

inline void save_json_file(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw parse_failure("cannot open for writing: " + path);
  out << j.dump(2) << '\n';
  if (!out) throw parse_failure("write failed: " + path);
}

template <class T>
T json_get(const nlohmann::json& j, const char* key, const std::string& path) {
  if (!j.contains(key)) throw parse_failure(path + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw parse_failure(path + ": field '" + key + "': " + e.what());
  }
}

inline void check_version(const nlohmann::json& j, int expected, const std::string& path) {
  const int v = json_get<int>(j, "format_version", path);
  if (v != expected)
    throw parse_failure(path + ": unsupported format_version " + std::to_string(v) +
                        " (expected " + std::to_string(expected) + ")");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Scoring model checkpoints (JSON).
// ---------------------------------------------------------------------------

inline nlohmann::json scoring_params_to_json(const ScoringParams& p) {
  p.validate();
  nlohmann::json j;
  j["format_version"] = kScoringFormatVersion;
  j["kind"] = p.kind == ScoringKind::linear ? "linear" : "gated_mlp";
  j["input_names"] = p.input_names;
  j["input_means"] = p.input_means;
  j["input_stds"] = p.input_stds;
  j["weights"] = std::vector<double>(p.params.begin(), p.params.end() - 1);
  j["bias"] = p.params.back();
  j["downstream_log_temperature"] = p.downstream_log_temperature;
  if (p.kind == ScoringKind::gated_mlp) j["hidden_width"] = p.hidden_width;
  return j;
}

inline ScoringParams scoring_params_from_json(const nlohmann::json& j, const std::string& path) {
  detail::check_version(j, kScoringFormatVersion, path);
  ScoringParams p;
  const std::string kind = detail::json_get<std::string>(j, "kind", path);
  if (kind == "linear") {
    p.kind = ScoringKind::linear;
  } else if (kind == "gated_mlp") {
    p.kind = ScoringKind::gated_mlp;
    p.hidden_width = detail::json_get<int>(j, "hidden_width", path);
  } else {
    throw parse_failure(path + ": unknown scoring kind '" + kind + "'");
  }
  p.input_names = detail::json_get<std::vector<std::string>>(j, "input_names", path);
  p.input_means = detail::json_get<std::vector<double>>(j, "input_means", path);
  p.input_stds = detail::json_get<std::vector<double>>(j, "input_stds", path);
  p.params = detail::json_get<std::vector<double>>(j, "weights", path);
  p.params.push_back(detail::json_get<double>(j, "bias", path));
  p.downstream_log_temperature =
      detail::json_get<double>(j, "downstream_log_temperature", path);
  try {
    p.validate();
  } catch (const invalid_input& e) {
    throw parse_failure(path + ": " + e.what());
  }
  return p;
}

inline void save_scoring_params(const ScoringParams& p, const std::string& path) {
  detail::save_json_file(scoring_params_to_json(p), path);
}

inline ScoringParams load_scoring_params(const std::string& path) {
  return scoring_params_from_json(detail::load_json_file(path), path);
}

// ---------------------------------------------------------------------------
// Reference model checkpoints (JSON): flat array per layer plus shape
// metadata.
// ---------------------------------------------------------------------------

inline nlohmann::json reference_params_to_json(const ReferenceParams& p) {
  nlohmann::json j;
  j["format_version"] = kReferenceFormatVersion;
  j["d_in"] = p.shape.d_in;
  j["d_hidden"] = p.shape.d_hidden;
  j["d_emb"] = p.shape.d_emb;
  const char* towers[2] = {"image_encoder", "text_encoder"};
  const int sizes[4] = {p.shape.d_hidden * p.shape.d_in, p.shape.d_hidden,
                        p.shape.d_emb * p.shape.d_hidden, p.shape.d_emb};
  const char* layers[4] = {"w1", "b1", "w2", "b2"};
  int off = 0;
  for (int t = 0; t < 2; ++t) {
    nlohmann::json tower;
    for (int l = 0; l < 4; ++l) {
      tower[layers[l]] =
          std::vector<double>(p.values.begin() + off, p.values.begin() + off + sizes[l]);
      off += sizes[l];
    }
    j[towers[t]] = std::move(tower);
  }
  j["log_temperature"] = p.log_temperature();
  return j;
}

inline ReferenceParams reference_params_from_json(const nlohmann::json& j,
                                                  const std::string& path) {
  detail::check_version(j, kReferenceFormatVersion, path);
  ReferenceParams p;
  p.shape.d_in = detail::json_get<int>(j, "d_in", path);
  p.shape.d_hidden = detail::json_get<int>(j, "d_hidden", path);
  p.shape.d_emb = detail::json_get<int>(j, "d_emb", path);
  require(p.shape.d_in >= 1 && p.shape.d_hidden >= 1 && p.shape.d_emb >= 1,
          "reference checkpoint: dimensions must be >= 1");
  p.values.reserve(2 * p.shape.param_count() + 1);
  const char* towers[2] = {"image_encoder", "text_encoder"};
  const int sizes[4] = {p.shape.d_hidden * p.shape.d_in, p.shape.d_hidden,
                        p.shape.d_emb * p.shape.d_hidden, p.shape.d_emb};
  const char* layers[4] = {"w1", "b1", "w2", "b2"};
  for (int t = 0; t < 2; ++t) {
    if (!j.contains(towers[t])) throw parse_failure(path + ": missing tower " + towers[t]);
    const nlohmann::json& tower = j.at(towers[t]);
    for (int l = 0; l < 4; ++l) {
      const auto a = detail::json_get<std::vector<double>>(tower, layers[l], path);
      if (static_cast<int>(a.size()) != sizes[l])
        throw parse_failure(path + ": layer " + std::string(towers[t]) + "." + layers[l] +
                            " has wrong length");
      p.values.insert(p.values.end(), a.begin(), a.end());
    }
  }
  p.values.push_back(detail::json_get<double>(j, "log_temperature", path));
  return p;
}

inline void save_reference_params(const ReferenceParams& p, const std::string& path) {
  detail::save_json_file(reference_params_to_json(p), path);
}

inline ReferenceParams load_reference_params(const std::string& path) {
  return reference_params_from_json(detail::load_json_file(path), path);
}

// ---------------------------------------------------------------------------
// Pool binary format: magic, version byte, record count, feature width,
// then length-prefixed records. Numeric fields are little-endian
// fixed-width; doubles are raw IEEE-754 bits, so round trips are
// bit-exact.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw parse_failure(path + ": truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline void put_f64(std::ostream& out, double x) {
  std::uint64_t bits;
  std::memcpy(&bits, &x, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(std::istream& in, const std::string& path) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw parse_failure(path + ": truncated file");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double x;
  std::memcpy(&x, &bits, 8);
  return x;
}

}  // namespace detail

inline void save_pool(const PoolWithTruth& pool, const std::string& path) {
  require(pool.corrupt.size() == pool.records.size(), "save_pool: flag/record count mismatch");
  require(!pool.records.empty(), "save_pool: empty pool");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw parse_failure("cannot open for writing: " + path);
  out.write("FLYTPOOL", 8);
  out.put(static_cast<char>(kPoolFormatVersion));
  const int d = static_cast<int>(pool.records[0].image_features.size());
  detail::put_u32(out, static_cast<std::uint32_t>(pool.records.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(d));
  for (std::size_t i = 0; i < pool.records.size(); ++i) {
    const ExampleRecord& r = pool.records[i];
    require(static_cast<int>(r.image_features.size()) == d &&
                static_cast<int>(r.text_features.size()) == d,
            "save_pool: ragged pool");
    require(r.uid.size() <= 0xFFFF, "save_pool: uid too long");
    const std::uint16_t len = static_cast<std::uint16_t>(r.uid.size());
    out.put(static_cast<char>(len & 0xFF));
    out.put(static_cast<char>((len >> 8) & 0xFF));
    out.write(r.uid.data(), len);
    for (double x : r.image_features) detail::put_f64(out, x);
    for (double x : r.text_features) detail::put_f64(out, x);
    out.put(static_cast<char>(pool.corrupt[i]));
  }
  if (!out) throw parse_failure("write failed: " + path);
}

inline PoolWithTruth load_pool(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw parse_failure("cannot open: " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, "FLYTPOOL", 8) != 0)
    throw parse_failure(path + ": not a pool file (bad magic)");
  const int version = in.get();
  if (version != kPoolFormatVersion)
    throw parse_failure(path + ": unsupported pool format version " + std::to_string(version));
  const std::uint32_t m = detail::get_u32(in, path);
  const std::uint32_t d = detail::get_u32(in, path);
  if (m == 0 || d == 0) throw parse_failure(path + ": empty pool header");
  PoolWithTruth pool;
  pool.records.reserve(m);
  pool.corrupt.reserve(m);
  for (std::uint32_t i = 0; i < m; ++i) {
    const int lo = in.get();
    const int hi = in.get();
    if (lo < 0 || hi < 0) throw parse_failure(path + ": truncated file");
    const int len = lo | (hi << 8);
    ExampleRecord r;
    r.uid.resize(len);
    if (len > 0 && !in.read(r.uid.data(), len)) throw parse_failure(path + ": truncated file");
    r.image_features.resize(d);
    r.text_features.resize(d);
    for (std::uint32_t j = 0; j < d; ++j) r.image_features[j] = detail::get_f64(in, path);
    for (std::uint32_t j = 0; j < d; ++j) r.text_features[j] = detail::get_f64(in, path);
    const int flag = in.get();
    if (flag < 0) throw parse_failure(path + ": truncated file");
    if (flag != 0 && flag != 1)
      throw parse_failure(path + ": bad corrupt flag " + std::to_string(flag));
    pool.records.push_back(std::move(r));
    pool.corrupt.push_back(static_cast<std::uint8_t>(flag));
  }
  if (in.get() != std::char_traits<char>::eof())
    throw parse_failure(path + ": trailing bytes after last record");
  return pool;
}

// ---------------------------------------------------------------------------
// Manifests (newline-delimited uids) and repetition histograms (JSON).
// ---------------------------------------------------------------------------

inline void save_manifest(const SampleManifest& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw parse_failure("cannot open for writing: " + path);
  for (const auto& u : m.uids) out << u << '\n';
  if (!out) throw parse_failure("write failed: " + path);
}

inline SampleManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw parse_failure("cannot open: " + path);
  SampleManifest m;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    m.uids.push_back(line);
  }
  return m;
}

inline nlohmann::json histogram_to_json(const std::map<std::int64_t, std::int64_t>& hist) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [count, uids] : hist) j[std::to_string(count)] = uids;
  return j;
}

}  // namespace flyt
