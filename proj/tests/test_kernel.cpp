#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>

#include "memflow/kernel.hpp"
#include "oracles.hpp"

using memflow::ExpPolyFn;

namespace {

std::vector<ExpPolyFn> test_kernels() {
  return {ExpPolyFn::parse("1"), ExpPolyFn::parse("exp(-t)"), ExpPolyFn::parse("sin(t)"),
          ExpPolyFn::parse("t*exp(-0.5*t)")};
}

double max_diff(const ExpPolyFn& a, const std::function<double(double)>& b, double t_max) {
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double t = t_max * i / 99.0;
    worst = std::max(worst, std::abs(a(t) - b(t)));
  }
  return worst;
}

}  // namespace

TEST_CASE("low-order coefficient identities") {
  for (const auto& m : test_kernels()) {
    CHECK(memflow::h_coeff(m, 0).is_zero());
    CHECK((memflow::h_coeff(m, 1) + m).is_zero());
    const double m0 = m(0.0);
    const double dm0 = m.derivative(1)(0.0);
    CHECK(max_diff(memflow::p_coeff(m, 0), [&](double t) { return m0 * t; }, 2.0) <= 1e-12);
    CHECK(max_diff(memflow::p_coeff(m, 1),
                   [&](double t) { return m0 - dm0 * t + 0.5 * m0 * m0 * t * t; }, 2.0) <= 1e-12);
    for (int l = 0; l <= 6; ++l) {
      const double s = memflow::p_coeff(m, l)(0.0) + memflow::h_coeff(m, l)(0.0);
      CHECK(std::abs(s) <= 1e-12);
    }
  }
  CHECK(memflow::p_coeff(ExpPolyFn::parse("sin(t)"), 0).is_zero());
  const auto h1 = memflow::h_coeff(ExpPolyFn::parse("exp(-t)"), 1);
  CHECK(h1.to_string() == "-1*exp(-1*t)");
}

TEST_CASE("h_2 against a brute-force evaluation of its definition") {
  // h_2 = 2 M' + M*M, here with numerical convolution and differences.
  for (const auto& m : test_kernels()) {
    const double t = 1.0;
    const double brute = 2.0 * oracle::finite_difference(m, t, 1, 1e-5) +
                         oracle::convolution(m, m, t);
    CHECK(std::abs(memflow::h_coeff(m, 2)(t) - brute) <= 1e-8);
  }
  CHECK(memflow::h_coeff(ExpPolyFn::constant(1.0), 2).to_string() == "1*t");
}

TEST_CASE("kernel_c_norm") {
  CHECK(memflow::kernel_c_norm(ExpPolyFn::constant(1.0), 2, 1.0) == 1.0);
  CHECK(memflow::kernel_c_norm(ExpPolyFn::parse("exp(-t)"), 1, 2.0) == doctest::Approx(2.0));
  CHECK(memflow::kernel_c_norm(ExpPolyFn::parse("sin(t)"), 0, 3.0) ==
        doctest::Approx(1.0).epsilon(1e-12));
  // interior maximum of t e^{-t/2} at t = 2
  CHECK(memflow::max_abs(ExpPolyFn::parse("t*exp(-0.5*t)"), 0.0, 5.0) ==
        doctest::Approx(2.0 * std::exp(-1.0)).epsilon(1e-12));
}

TEST_CASE("first_nonzero_h_index") {
  CHECK(memflow::first_nonzero_h_index(ExpPolyFn::parse("exp(-t)"), 1.0) == 1);
  const double T = std::numbers::pi;
  CHECK(memflow::first_nonzero_h_index(ExpPolyFn::parse("sin(t)"), T) == 2);
}

TEST_CASE("K_M partial sums") {
  const double c = 1.7;
  const auto k1 = memflow::km_partial(ExpPolyFn::constant(c), 0, 1);
  CHECK(k1.eval(0.8, 0.3) == doctest::Approx(-0.3 * c).epsilon(1e-15));
  for (const auto& m : test_kernels()) {
    const auto k = memflow::km_partial(m, 0, 20);
    CHECK(k.eval(1.3, 0.0) == 0.0);
  }
  const auto k30 = memflow::km_partial(ExpPolyFn::constant(1.0), 0, 60);
  const double diff = std::abs(k30.eval(1.0, 0.5, 30) - k30.eval(1.0, 0.5, 60));
  CHECK(diff <= k30.tail_bound(1.0, 0.5, 30));
}

TEST_CASE("K_M series against direct summation") {
  // For M = 1, M^{*j}(u) = u^{j-1}/(j-1)!, so each term is explicit.
  const auto k = memflow::km_partial(ExpPolyFn::constant(1.0), 2, 30);
  const double t = 1.2, s = 0.7;
  auto kfun = [&](double ss) {
    double acc = 0.0;
    for (int j = 1; j <= 30; ++j)
      acc += std::pow(-ss, j) / oracle::factorial(j) * std::pow(t - ss, j - 1) / oracle::factorial(j - 1);
    return acc;
  };
  CHECK(k.eval(t, s) == doctest::Approx(oracle::finite_difference(kfun, s, 2, 1e-3)).epsilon(1e-5));
}

TEST_CASE("K_M tail bounds dominate successive differences") {
  for (const auto& m : test_kernels()) {
    for (int n : {0, 2, 4}) {
      const auto k = memflow::km_partial(m, n, 40);
      for (double t : {0.5, 1.0, 2.0}) {
        for (double frac : {0.25, 0.75, 1.0}) {
          const double s = frac * t;
          for (int j = 10; j < 40; j += 5) {
            const double d = std::abs(k.eval(t, s, 40) - k.eval(t, s, j));
            CHECK(d <= k.tail_bound(t, s, j) + 1e-15);
          }
          CHECK(k.tail_bound(t, s) < 1e-10);
        }
      }
    }
  }
  const auto k = memflow::km_partial(ExpPolyFn::constant(1.0), 0, 3);
  CHECK_THROWS_AS(k.eval_checked(2.0, 2.0, 1e-12), memflow::TruncationError);
}
