#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>

#include "memflow/exp_poly.hpp"
#include "oracles.hpp"

using memflow::ExpPolyFn;
using memflow::Phase;

namespace {

ExpPolyFn random_fn(std::mt19937_64& rng, int n_terms) {
  std::uniform_real_distribution<double> coeff(-2.0, 2.0);
  std::uniform_int_distribution<int> power(0, 2);
  std::uniform_int_distribution<int> rate_pick(0, 3);
  std::uniform_int_distribution<int> freq_pick(0, 2);
  const double rates[] = {0.0, -1.0, 0.5, -0.3};
  const double freqs[] = {0.0, 1.0, 2.5};
  std::vector<memflow::ExpPolyTerm> terms;
  for (int i = 0; i < n_terms; ++i) {
    terms.push_back({coeff(rng), power(rng), rates[rate_pick(rng)], freqs[freq_pick(rng)],
                     (i % 2 == 0) ? Phase::Cos : Phase::Sin});
  }
  return ExpPolyFn(terms);
}

}  // namespace

TEST_CASE("evaluation of elementary functions") {
  CHECK(ExpPolyFn::constant(1.0)(3.7) == 1.0);
  CHECK(ExpPolyFn::monomial(1.0, 1, -1.0)(0.0) == 0.0);
  CHECK(ExpPolyFn::parse("sin(t)")(std::numbers::pi / 2) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(ExpPolyFn::parse("exp(-2*t)")(0.5) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  CHECK(ExpPolyFn::zero().is_zero());
  CHECK(ExpPolyFn::zero()(1.0) == 0.0);
}

TEST_CASE("canonical form merges and drops terms") {
  const auto f = ExpPolyFn::parse("t + 2*t - 3*t");
  CHECK(f.is_zero());
  const auto g = ExpPolyFn::parse("cos(t) + cos(-1*t) + sin(-1*t) + sin(0*t)");
  const auto terms = g.terms();
  REQUIRE(terms.size() == 2);
  for (const auto& term : terms) {
    CHECK(term.freq == 1.0);
    if (term.phase == Phase::Cos) CHECK(term.coeff == doctest::Approx(2.0));
    else CHECK(term.coeff == doctest::Approx(-1.0));
  }
}

TEST_CASE("derivatives") {
  const auto d = ExpPolyFn::parse("t^2").derivative(1);
  CHECK(d.to_string() == "2*t");
  const double a = 0.7, b = 1.9;
  const auto f = ExpPolyFn::monomial(1.0, 0, a, b, Phase::Sin);
  const auto df = f.derivative(1);
  for (double t : {0.0, 0.3, 1.1, 2.4}) {
    const double expect = a * std::exp(a * t) * std::sin(b * t) + b * std::exp(a * t) * std::cos(b * t);
    CHECK(df(t) == doctest::Approx(expect).epsilon(1e-14));
  }
  CHECK(std::abs(ExpPolyFn::parse("sin(t)").derivative(2)(0.0)) < 1e-16);
  CHECK(f.derivative(0).to_string() == f.to_string());
}

TEST_CASE("convolution closed forms") {
  const auto one = ExpPolyFn::constant(1.0);
  CHECK(memflow::convolve(one, one).to_string() == "1*t");

  const double a = -0.8;
  const auto e = ExpPolyFn::monomial(1.0, 0, a);
  const auto ee = memflow::convolve(e, e);
  for (double t : {0.1, 0.5, 1.0, 2.0}) {
    const double q = oracle::convolution(e, e, t);
    CHECK(std::abs(ee(t) - q) <= 1e-12);
    CHECK(std::abs(ee(t) - t * std::exp(a * t)) <= 1e-14);
  }
  for (int j = 1; j <= 5; ++j) {
    const auto pj = memflow::conv_power(e, j);
    // oracle: convolve the quadrature-validated (j-1)-th power with e numerically
    const auto prev = memflow::conv_power(e, j - 1);
    for (double t : {0.5, 1.5}) {
      const double closed = std::pow(t, j - 1) * std::exp(a * t) / oracle::factorial(j - 1);
      CHECK(std::abs(pj(t) - closed) <= 1e-13);
      if (j > 1) CHECK(std::abs(pj(t) - oracle::convolution(prev, e, t)) <= 1e-12);
    }
  }
}

TEST_CASE("convolution powers") {
  const auto one = ExpPolyFn::constant(1.0);
  CHECK(memflow::conv_power(one, 0).is_zero());
  CHECK(memflow::conv_power(one, 1).to_string() == "1");
  const auto p3 = memflow::conv_power(one, 3);
  for (double t : {0.2, 1.0, 1.7}) {
    CHECK(p3(t) == doctest::Approx(t * t / 2).epsilon(1e-15));
    CHECK(std::abs(p3(t) - oracle::convolution(memflow::conv_power(one, 2), one, t)) < 1e-12);
  }
}

TEST_CASE("symbolic and numeric convolution agree on random pairs") {
  std::mt19937_64 rng(20240611);
  std::uniform_int_distribution<int> count(1, 4);
  for (int trial = 0; trial < 40; ++trial) {
    const auto f = random_fn(rng, count(rng));
    const auto g = random_fn(rng, count(rng));
    const auto fg = memflow::convolve(f, g);
    for (double t : {0.1, 0.5, 1.0, 2.0}) {
      const double q = oracle::convolution(f, g, t, 1e-14);
      CHECK(std::abs(fg(t) - q) <= 1e-10);
    }
  }
}

TEST_CASE("Leibniz rule for convolution") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto f = random_fn(rng, 3);
    const auto g = random_fn(rng, 3);
    const auto lhs = memflow::convolve(f, g).derivative(1);
    const auto rhs = memflow::convolve(f.derivative(1), g) + g * f(0.0);
    for (int i = 0; i <= 20; ++i) {
      const double t = 0.1 * i;
      CHECK(std::abs(lhs(t) - rhs(t)) <= 1e-10);
    }
  }
}

TEST_CASE("product and sum") {
  const auto f = ExpPolyFn::parse("cos(2*t)");
  const auto g = ExpPolyFn::parse("sin(2*t)");
  const auto h = f * g;
  for (double t : {0.3, 1.3}) CHECK(h(t) == doctest::Approx(0.5 * std::sin(4 * t)).epsilon(1e-14));
  const auto one = f * f + g * g;
  CHECK(one.to_string() == "1");
}

TEST_CASE("parser grammar and round trip") {
  const auto f = ExpPolyFn::parse("t^2*exp(0.5*t)*cos(2*t) + 3*exp(-t)");
  for (double t : {0.0, 0.4, 1.9})
    CHECK(f(t) == doctest::Approx(t * t * std::exp(0.5 * t) * std::cos(2 * t) + 3 * std::exp(-t)));
  CHECK(ExpPolyFn::parse("exp(-1*t)")(1.0) == doctest::Approx(std::exp(-1.0)));
  CHECK(ExpPolyFn::parse("exp(-t/2)")(2.0) == doctest::Approx(std::exp(-1.0)));
  CHECK(ExpPolyFn::parse("2*(t - 1)^2")(3.0) == doctest::Approx(8.0));

  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 30; ++trial) {
    const auto r = random_fn(rng, 4);
    const auto back = ExpPolyFn::parse(r.to_string());
    CHECK(back.to_string() == r.to_string());
    for (double t : {0.0, 0.7, 1.6}) CHECK(back(t) == r(t));
  }
}

TEST_CASE("parse errors carry the position") {
  auto position_of = [](const char* text) -> long {
    try {
      ExpPolyFn::parse(text);
    } catch (const memflow::ParseError& e) {
      return static_cast<long>(e.position());
    }
    return -1;
  };
  CHECK(position_of("1 + ") == 4);
  CHECK(position_of("exp(t^2)") == 4);
  CHECK(position_of("2*x") == 2);
  CHECK(position_of("(1 + t") == 6);
  CHECK(position_of("") == 0);
  CHECK(position_of("t / t") == 4);
  CHECK(position_of("1 2") == 2);
}
