#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "flyt/common.hpp"

namespace flyt {

// Columnar uid -> named scores map. Immutable by convention; all
// transformations return new tables.
struct ScoreTable {
  std::vector<std::string> uids;
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;  // aligned with names; each length uids.size()

  int rows() const { return static_cast<int>(uids.size()); }
  int cols() const { return static_cast<int>(names.size()); }

  int find(const std::string& name) const {
    for (std::size_t j = 0; j < names.size(); ++j)
      if (names[j] == name) return static_cast<int>(j);
    return -1;
  }

  const std::vector<double>& column(const std::string& name) const {
    const int j = find(name);
    require(j >= 0, "score table has no column named '" + name + "'");
    return columns[j];
  }

  void add_column(std::string name, std::vector<double> values) {
    require(values.size() == uids.size(), "column length mismatch");
    require(find(name) < 0, "duplicate column name '" + name + "'");
    names.push_back(std::move(name));
    columns.push_back(std::move(values));
  }

  void validate() const {
    require(columns.size() == names.size(), "column/name count mismatch");
    for (const auto& c : columns) require(c.size() == uids.size(), "ragged score table");
    std::unordered_set<std::string> seen;
    for (const auto& u : uids) require(seen.insert(u).second, "duplicate uid '" + u + "'");
  }
};

// CSV with header `uid,<name>,...`; full-precision values.
inline void save_score_table_csv(const ScoreTable& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw parse_failure("cannot open for writing: " + path);
  out << "uid";
  for (const auto& n : t.names) out << ',' << n;
  out << '\n';
  char buf[40];
  for (int i = 0; i < t.rows(); ++i) {
    out << t.uids[i];
    for (int j = 0; j < t.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", t.columns[j][i]);
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw parse_failure("write failed: " + path);
}

inline ScoreTable load_score_table_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw parse_failure("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw parse_failure(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  ScoreTable t;
  {
    std::stringstream ss(line);
    std::string field;
    bool first = true;
    while (std::getline(ss, field, ',')) {
      if (first) {
        if (field != "uid")
          throw parse_failure(path + ": first header column must be 'uid', got '" + field + "'");
        first = false;
      } else {
        t.names.push_back(field);
      }
    }
    if (first) throw parse_failure(path + ": missing header");
  }
  t.columns.assign(t.names.size(), {});

  std::unordered_set<std::string> seen;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    if (!std::getline(ss, field, ','))
      throw parse_failure(path + ":" + std::to_string(lineno) + ": missing uid");
    if (!seen.insert(field).second)
      throw parse_failure(path + ":" + std::to_string(lineno) + ": duplicate uid '" + field + "'");
    t.uids.push_back(field);
    for (std::size_t j = 0; j < t.names.size(); ++j) {
      if (!std::getline(ss, field, ','))
        throw parse_failure(path + ":" + std::to_string(lineno) + ": too few fields");
      std::size_t pos = 0;
      double v = 0.0;
      try {
        v = std::stod(field, &pos);
      } catch (const std::exception&) {
        throw parse_failure(path + ":" + std::to_string(lineno) + ": bad number '" + field + "'");
      }
      if (pos != field.size())
        throw parse_failure(path + ":" + std::to_string(lineno) + ": bad number '" + field + "'");
      t.columns[j].push_back(v);
    }
    if (std::getline(ss, field, ','))
      throw parse_failure(path + ":" + std::to_string(lineno) + ": too many fields");
  }
  t.validate();
  return t;
}

}  // namespace flyt
