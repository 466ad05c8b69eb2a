#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>

#include "memflow/spectral.hpp"
#include "oracles.hpp"

using namespace memflow;

TEST_CASE("interval eigenpairs") {
  const auto b = interval_basis(8, 64);
  b.validate();
  for (int j = 0; j < 8; ++j) CHECK(b.eta(j) == doctest::Approx(std::pow((j + 1) * std::numbers::pi, 2)).epsilon(1e-15));
  // -e_j'' = eta_j e_j, checked by a second difference at interior points
  for (int j = 0; j < 3; ++j) {
    const auto e = [&](double x) { return std::sqrt(2.0) * std::sin((j + 1) * std::numbers::pi * x); };
    for (double x : {0.2, 0.5, 0.77}) {
      const double lap = -oracle::finite_difference(e, x, 2, 1e-3);
      CHECK(lap == doctest::Approx(b.eta(j) * e(x)).epsilon(1e-5));
    }
  }
}

TEST_CASE("discrete orthonormality") {
  const auto b = interval_basis(16, 64);
  const Eigen::MatrixXd G = b.values.transpose() * b.weights.asDiagonal() * b.values;
  CHECK((G - Eigen::MatrixXd::Identity(16, 16)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("aliasing guard and validation") {
  CHECK_THROWS_AS(interval_basis(20, 64), std::invalid_argument);
  auto b = interval_basis(4, 16);
  b.eta(2) = b.eta(1);
  CHECK_THROWS_AS(b.validate(), std::invalid_argument);
}

TEST_CASE("Sobolev norms and powers of A") {
  const auto b = interval_basis(4, 16);
  SpectralVec v{Eigen::Vector4d(1.0, 0.0, 2.0, 0.0), 0.0};
  const double pi2 = std::numbers::pi * std::numbers::pi;
  CHECK(hs_norm(b, v, 0.0) == doctest::Approx(std::sqrt(5.0)));
  CHECK(hs_norm(b, v, 2.0) == doctest::Approx(std::sqrt(pi2 * pi2 + 4.0 * 81.0 * pi2 * pi2)));
  const auto a2 = apply_A_power(b, v, 2);
  CHECK(hs_norm(b, a2, -4.0) == doctest::Approx(hs_norm(b, v, 0.0)));
  const auto a1 = apply_A_power(b, v, 1);
  CHECK(a1.coeffs(0) == doctest::Approx(-pi2));
  const auto half = apply_minus_A_power(b, apply_minus_A_power(b, v, 0.5), -0.5);
  CHECK((half.coeffs - v.coeffs).norm() < 1e-14);
}

TEST_CASE("projection and evaluation") {
  const auto b = interval_basis(6, 48);
  Eigen::VectorXd f(48);
  for (int i = 0; i < 48; ++i) f(i) = std::sin(std::numbers::pi * b.x(i)) + 0.25 * std::sin(3 * std::numbers::pi * b.x(i));
  const auto v = project_function(f, b);
  CHECK(v.coeffs(0) == doctest::Approx(1.0 / std::sqrt(2.0)));
  CHECK(v.coeffs(2) == doctest::Approx(0.25 / std::sqrt(2.0)));
  CHECK(std::abs(v.coeffs(1)) < 1e-14);
  CHECK((evaluate_on_grid(v, b) - f).cwiseAbs().maxCoeff() < 1e-13);
  CHECK(grid_inner(b, f, f) == doctest::Approx(0.5 + 0.03125));
}

TEST_CASE("csv round trip") {
  SpectralVec v{Eigen::Vector3d(0.1, -2.5e-7, 3.0), -4.0};
  const auto w = from_csv_line(to_csv_line(v));
  CHECK(w.s == -4.0);
  CHECK(w.coeffs == v.coeffs);
}
