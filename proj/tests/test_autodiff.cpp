#include "doctest.h"

#include <cmath>

#include "flyt/dual.hpp"
#include "flyt/tape.hpp"

using namespace flyt;

TEST_CASE("dual numbers differentiate elementary compositions") {
  // f(x) = exp(x) * tanh(x) + log(x) / sqrt(x)
  auto f = [](auto x) {
    using std::exp;
    using std::log;
    using std::sqrt;
    using std::tanh;
    return exp(x) * tanh(x) + log(x) / sqrt(x);
  };
  const double x0 = 0.7;
  const Dual y = f(Dual{x0, 1.0});
  CHECK(y.v == doctest::Approx(f(x0)).epsilon(1e-15));
  const double h = 1e-6;
  const double fd = (f(x0 + h) - f(x0 - h)) / (2 * h);
  CHECK(y.d == doctest::Approx(fd).epsilon(1e-8));
}

TEST_CASE("dual arithmetic identities") {
  const Dual x{2.0, 1.0};
  const Dual y = x * x;
  CHECK(y.v == 4.0);
  CHECK(y.d == 4.0);  // d(x^2) = 2x
  const Dual q = Dual{1.0, 0.0} / x;
  CHECK(q.v == 0.5);
  CHECK(q.d == doctest::Approx(-0.25));
  Dual acc{1.0, 2.0};
  acc += Dual{3.0, 4.0};
  CHECK(acc.v == 4.0);
  CHECK(acc.d == 6.0);
  acc *= Dual{2.0, 0.0};
  CHECK(acc.v == 8.0);
  CHECK(acc.d == 12.0);
}

TEST_CASE("tape reverse-mode gradient matches hand derivative") {
  // f(a, b) = a*b + exp(a) - log(b); df/da = b + exp(a); df/db = a - 1/b
  Tape<double> tape;
  const double a0 = 0.4, b0 = 1.3;
  Rev<double> a = make_leaf(tape, a0);
  Rev<double> b = make_leaf(tape, b0);
  Rev<double> f = a * b + exp(a) - log(b);
  CHECK(f.val == doctest::Approx(a0 * b0 + std::exp(a0) - std::log(b0)).epsilon(1e-15));
  const auto adj = tape.adjoints(f.idx);
  CHECK(adj[a.idx] == doctest::Approx(b0 + std::exp(a0)).epsilon(1e-14));
  CHECK(adj[b.idx] == doctest::Approx(a0 - 1.0 / b0).epsilon(1e-14));
}

TEST_CASE("tape with multiple seeded outputs computes a VJP") {
  // y0 = a*b, y1 = a + b; seed (2, 3): dJ/da = 2b + 3, dJ/db = 2a + 3
  Tape<double> tape;
  Rev<double> a = make_leaf(tape, 1.5);
  Rev<double> b = make_leaf(tape, -0.5);
  Rev<double> y0 = a * b;
  Rev<double> y1 = a + b;
  const auto adj = tape.adjoints_seeded({{y0.idx, 2.0}, {y1.idx, 3.0}});
  CHECK(adj[a.idx] == doctest::Approx(2.0 * -0.5 + 3.0));
  CHECK(adj[b.idx] == doctest::Approx(2.0 * 1.5 + 3.0));
}

TEST_CASE("forward-over-reverse yields exact second derivatives") {
  // f(x) = exp(x) * x; f'(x) = exp(x)(x+1); f''(x) = exp(x)(x+2)
  const double x0 = 0.9;
  Tape<Dual> tape;
  Rev<Dual> x = make_leaf(tape, Dual{x0, 1.0});
  Rev<Dual> f = exp(x) * x;
  const auto adj = tape.adjoints(f.idx, Dual{1.0, 0.0});
  CHECK(adj[x.idx].v == doctest::Approx(std::exp(x0) * (x0 + 1.0)).epsilon(1e-14));
  CHECK(adj[x.idx].d == doctest::Approx(std::exp(x0) * (x0 + 2.0)).epsilon(1e-14));
}

TEST_CASE("Rev accumulator starts from the zero element") {
  Tape<double> tape;
  Rev<double> a = make_leaf(tape, 2.0);
  Rev<double> b = make_leaf(tape, 5.0);
  Rev<double> acc{};
  acc += a;
  acc += b;
  CHECK(acc.val == 7.0);
  const auto adj = tape.adjoints(acc.idx);
  CHECK(adj[a.idx] == 1.0);
  CHECK(adj[b.idx] == 1.0);
}
