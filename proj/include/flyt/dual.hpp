#pragma once

#include <cmath>

namespace flyt {

// First-order forward-mode dual number: value plus the derivative
// along one fixed direction. Comparisons look at the value only, so
// max-subtraction branches match the plain double computation.
struct Dual {
  double v = 0.0;
  double d = 0.0;

  constexpr Dual() = default;
  constexpr Dual(double value) : v(value) {}  // NOLINT(google-explicit-constructor)
  constexpr Dual(double value, double deriv) : v(value), d(deriv) {}

  Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
  Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
  Dual& operator*=(const Dual& o) { d = d * o.v + v * o.d; v *= o.v; return *this; }
};

constexpr Dual operator+(Dual a, const Dual& b) { return {a.v + b.v, a.d + b.d}; }
constexpr Dual operator-(Dual a, const Dual& b) { return {a.v - b.v, a.d - b.d}; }
constexpr Dual operator-(Dual a) { return {-a.v, -a.d}; }
constexpr Dual operator*(Dual a, const Dual& b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
constexpr Dual operator/(Dual a, const Dual& b) {
  const double q = a.v / b.v;
  return {q, (a.d - q * b.d) / b.v};
}

constexpr bool operator<(const Dual& a, const Dual& b) { return a.v < b.v; }
constexpr bool operator>(const Dual& a, const Dual& b) { return a.v > b.v; }

inline Dual exp(const Dual& x) {
  const double e = std::exp(x.v);
  return {e, e * x.d};
}
inline Dual log(const Dual& x) { return {std::log(x.v), x.d / x.v}; }
inline Dual sqrt(const Dual& x) {
  const double s = std::sqrt(x.v);
  return {s, 0.5 * x.d / s};
}
inline Dual tanh(const Dual& x) {
  const double t = std::tanh(x.v);
  return {t, (1.0 - t * t) * x.d};
}

inline double value_of(double x) { return x; }
inline double value_of(const Dual& x) { return x.v; }

}  // namespace flyt
