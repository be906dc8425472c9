#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "ecgi/autodiff.hpp"
#include "support/expr_gen.hpp"

using namespace ecgi;
using ad::Op;
using ad::Tape;
using ad::VarRef;

TEST_CASE("forward pass of the two-input tanh example") {
  Tape tape;
  VarRef x = tape.input(2.0);
  VarRef t = tape.input(3.0);
  VarRef h = tape.sub(tape.mul_const(x, 2.0), t);
  CHECK(tape.value(h) == 1.0);
  VarRef g = tape.tanh(h);
  CHECK(tape.value(g) == doctest::Approx(0.7616).epsilon(0).scale(0).epsilon(1e-4));
  CHECK(tape.value(g) == doctest::Approx(std::tanh(1.0)).epsilon(1e-15));

  CHECK(tape.value(tape.add(tape.constant(5.0), tape.constant(0.0))) == 5.0);
}

TEST_CASE("backward pass of the two-input tanh example") {
  Tape tape;
  VarRef x = tape.input(2.0);
  VarRef t = tape.input(3.0);
  VarRef u = tape.tanh(tape.sub(tape.mul_const(x, 2.0), t));
  const std::vector<VarRef> wrt = {x, t};
  auto g = tape.gradient(u, wrt);
  const double sech2 = 1.0 - std::tanh(1.0) * std::tanh(1.0);  // 0.419974...
  CHECK(g[0] == doctest::Approx(2.0 * sech2).epsilon(1e-14));
  CHECK(g[1] == doctest::Approx(-sech2).epsilon(1e-14));
}

TEST_CASE("product rule") {
  Tape tape;
  VarRef x = tape.input(3.0);
  VarRef y = tape.input(4.0);
  auto g = tape.gradient(tape.mul(x, y), std::vector<VarRef>{x, y});
  CHECK(g[0] == 4.0);
  CHECK(g[1] == 3.0);
}

TEST_CASE("tanh(2x - t)^2 gradient matches central differences") {
  auto f = [](double x, double t) { return std::pow(std::tanh(2 * x - t), 2.0); };
  Tape tape;
  VarRef x = tape.input(1.1);
  VarRef t = tape.input(0.3);
  VarRef out = tape.square(tape.tanh(tape.sub(tape.mul_const(x, 2.0), t)));
  auto g = tape.gradient(out, std::vector<VarRef>{x, t});
  const double h = 1e-5;
  const double fx = (f(1.1 + h, 0.3) - f(1.1 - h, 0.3)) / (2 * h);
  const double ft = (f(1.1, 0.3 + h) - f(1.1, 0.3 - h)) / (2 * h);
  CHECK(std::abs(g[0] - fx) / std::abs(fx) < 1e-6);
  CHECK(std::abs(g[1] - ft) / std::abs(ft) < 1e-6);
}

TEST_CASE("non-ancestor nodes get exact zero gradient") {
  Tape tape;
  VarRef x = tape.input(1.0);
  VarRef y = tape.input(2.0);  // never used
  VarRef out = tape.square(x);
  auto g = tape.gradient(out, std::vector<VarRef>{y});
  CHECK(g[0] == 0.0);

  VarRef later = tape.input(5.0);  // created after the output
  auto g2 = tape.gradient(out, std::vector<VarRef>{later});
  CHECK(g2[0] == 0.0);
}

TEST_CASE("domain errors: division by zero and exp/tanh magnitude cap") {
  Tape tape;
  VarRef x = tape.input(1.0);
  VarRef z = tape.constant(0.0);
  CHECK_THROWS_AS(tape.div(x, z), std::domain_error);
  VarRef big = tape.input(51.0);
  CHECK_THROWS_AS(tape.exp(big), std::domain_error);
  CHECK_THROWS_AS(tape.tanh(big), std::domain_error);
  CHECK_NOTHROW(tape.exp(tape.input(50.0)));
}

TEST_CASE("second derivative of x^2 is exactly 2") {
  Tape tape;
  VarRef x = tape.input(1.7);
  VarRef f = tape.square(x);
  VarRef d1 = tape.gradient_as_graph(f, x);
  CHECK(tape.value(d1) == 3.4);
  VarRef d2 = tape.gradient_as_graph(d1, x);
  CHECK(tape.value(d2) == 2.0);
}

TEST_CASE("second derivative of tanh vanishes at the origin") {
  Tape tape;
  VarRef x = tape.input(0.0);
  VarRef f = tape.tanh(x);
  VarRef d2 = tape.gradient_as_graph(tape.gradient_as_graph(f, x), x);
  CHECK(tape.value(d2) == 0.0);
}

TEST_CASE("mixed partial of tanh(3x + 2y) matches nested finite differences") {
  auto f = [](double x, double y) { return std::tanh(3 * x + 2 * y); };
  const double x0 = 0.2, y0 = -0.1, h = 1e-4;
  auto fx = [&](double x, double y) { return (f(x + h, y) - f(x - h, y)) / (2 * h); };
  const double fd = (fx(x0, y0 + h) - fx(x0, y0 - h)) / (2 * h);

  Tape tape;
  VarRef x = tape.input(x0);
  VarRef y = tape.input(y0);
  VarRef g = tape.tanh(tape.add(tape.mul_const(x, 3.0), tape.mul_const(y, 2.0)));
  VarRef dx = tape.gradient_as_graph(g, x);
  VarRef dxy = tape.gradient_as_graph(dx, y);
  CHECK(std::abs(tape.value(dxy) - fd) < 1e-4);
}

TEST_CASE("graph-mode derivative agrees with value-mode derivative") {
  std::mt19937_64 rng(321);
  for (int rep = 0; rep < 40; ++rep) {
    std::vector<double> inputs;
    auto prog = testsupport::random_program(rng, inputs);
    Tape tape;
    auto [out, refs] = prog.build(tape, inputs);
    auto vals = tape.gradient(out, refs);
    for (std::size_t i = 0; i < refs.size(); ++i) {
      VarRef g = tape.gradient_as_graph(out, refs[i]);
      CHECK(std::abs(tape.value(g) - vals[i]) <= 1e-12 * std::max(1.0, std::abs(vals[i])));
    }
  }
}

TEST_CASE("randomized compositions match central finite differences") {
  std::mt19937_64 rng(777);
  int checked = 0;
  for (int rep = 0; rep < 60; ++rep) {
    std::vector<double> inputs;
    auto prog = testsupport::random_program(rng, inputs);
    Tape tape;
    auto [out, refs] = prog.build(tape, inputs);
    auto grads = tape.gradient(out, refs);
    for (int i = 0; i < prog.n_inputs; ++i) {
      const double h = 1e-5 * std::max(1.0, std::abs(inputs[i]));
      auto lo = inputs, hi = inputs;
      lo[i] -= h;
      hi[i] += h;
      const double fd = (prog.eval(hi) - prog.eval(lo)) / (2 * h);
      const double err = std::abs(grads[i] - fd);
      CHECK(err <= std::max(1e-7, 1e-5 * std::max(std::abs(fd), std::abs(grads[i]))));
      ++checked;
    }
  }
  CHECK(checked > 60);
}

TEST_CASE("gradient is linear in the output combination") {
  std::mt19937_64 rng(99);
  std::vector<double> in_f, in_g;
  auto pf = testsupport::random_program(rng, in_f);
  auto pg = testsupport::random_program(rng, in_g);

  Tape tape;
  auto [f, refs_f] = pf.build(tape, in_f);
  auto [g, refs_g] = pg.build(tape, in_g);
  const double a = 1.7, b = -0.6;
  VarRef combo = tape.add(tape.mul_const(f, a), tape.mul_const(g, b));

  std::vector<VarRef> all(refs_f);
  all.insert(all.end(), refs_g.begin(), refs_g.end());
  auto gc = tape.gradient(combo, all);
  auto gf = tape.gradient(f, all);
  auto gg = tape.gradient(g, all);
  for (std::size_t i = 0; i < all.size(); ++i)
    CHECK(std::abs(gc[i] - (a * gf[i] + b * gg[i])) <= 1e-12 * std::max(1.0, std::abs(gc[i])));
}

TEST_CASE("replaying a program yields bit-identical node values") {
  std::mt19937_64 rng(2024);
  std::vector<double> inputs;
  auto prog = testsupport::random_program(rng, inputs);
  Tape t1, t2;
  auto [o1, r1] = prog.build(t1, inputs);
  auto [o2, r2] = prog.build(t2, inputs);
  REQUIRE(t1.size() == t2.size());
  CHECK(t1.value(o1) == t2.value(o2));
  for (std::int32_t k = 0; k < t1.size(); ++k)
    CHECK(t1.value({&t1, k}) == t2.value({&t2, k}));
}

TEST_CASE("VarRefs from another tape are rejected") {
  Tape t1, t2;
  VarRef x = t1.input(1.0);
  VarRef y = t2.input(2.0);
  CHECK_THROWS_AS(t1.add(x, y), std::invalid_argument);
}
