#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace flyt {

// Raised when an operation is handed structurally invalid input
// (shape mismatch, empty batch, out-of-range label, ...).
class invalid_input : public std::runtime_error {
 public:
  explicit invalid_input(const std::string& what) : std::runtime_error(what) {}
};

// Raised when a computation produces non-finite values. Carries the
// name of the pipeline stage that blew up.
class numeric_failure : public std::runtime_error {
 public:
  numeric_failure(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// Raised on malformed or version-mismatched persisted files.
class parse_failure : public std::runtime_error {
 public:
  explicit parse_failure(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw invalid_input(msg);
}

inline void check_finite(double x, const char* stage) {
  if (!std::isfinite(x)) throw numeric_failure(stage, "non-finite value");
}

}  // namespace flyt
