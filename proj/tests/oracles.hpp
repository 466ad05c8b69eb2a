#pragma once

// Reference computations for the tests. Deliberately independent of the
// library: plain recursive Simpson quadrature and direct summation.

#include <cmath>
#include <functional>
#include <stdexcept>

namespace oracle {

inline double simpson_rec(const std::function<double(double)>& f, double a, double b, double fa,
                          double fm, double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double diff = left + right - whole;
  if (depth <= 0 || std::abs(diff) <= 15.0 * tol) return left + right + diff / 15.0;
  return simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

/// Adaptive Simpson on [a, b].
inline double simpson(const std::function<double(double)>& f, double a, double b,
                      double tol = 1e-13, int depth = 40) {
  if (a == b) return 0.0;
  const double fa = f(a);
  const double fb = f(b);
  const double fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_rec(f, a, b, fa, fm, fb, whole, tol, depth);
}

/// (f*g)(t) = int_0^t f(t - tau) g(tau) dtau.
inline double convolution(const std::function<double(double)>& f,
                          const std::function<double(double)>& g, double t, double tol = 1e-13) {
  return simpson([&](double tau) { return f(t - tau) * g(tau); }, 0.0, t, tol);
}

inline double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

inline double factorial(int n) {
  double r = 1.0;
  for (int i = 2; i <= n; ++i) r *= i;
  return r;
}

/// Central finite difference of order k with step h (k <= 4).
inline double finite_difference(const std::function<double(double)>& f, double t, int k, double h) {
  double acc = 0.0;
  for (int i = 0; i <= k; ++i) {
    const double sign = ((k - i) % 2 == 0) ? 1.0 : -1.0;
    acc += sign * binomial(k, i) * f(t + (i - 0.5 * k) * h);
  }
  return acc / std::pow(h, k);
}

}  // namespace oracle

#include <Eigen/Dense>
#include <string>

namespace oracle {

/// Linear system x' = A x with x(0) = x0, classical RK4 with n steps.
inline Eigen::VectorXd rk4_linear(const Eigen::MatrixXd& A, Eigen::VectorXd x, double t, long n) {
  const double h = t / n;
  for (long k = 0; k < n; ++k) {
    const Eigen::VectorXd k1 = A * x;
    const Eigen::VectorXd k2 = A * (x + 0.5 * h * k1);
    const Eigen::VectorXd k3 = A * (x + 0.5 * h * k2);
    const Eigen::VectorXd k4 = A * (x + h * k3);
    x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return x;
}

/// One mode of y' = -eta y - ∫M(t-s)y(s)ds, y(0)=1, for the four test kernels,
/// written as an augmented ODE: the memory term is carried by auxiliary states.
inline double memory_mode(const std::string& kernel, double eta, double t, long n = 20000) {
  Eigen::MatrixXd A;
  if (kernel == "1") {  // z = ∫y
    A.resize(2, 2);
    A << -eta, -1.0, 1.0, 0.0;
  } else if (kernel == "exp(-t)") {  // z' = y - z
    A.resize(2, 2);
    A << -eta, -1.0, 1.0, -1.0;
  } else if (kernel == "sin(t)") {  // z1 = ∫sin(t-s)y, z2 = ∫cos(t-s)y
    A.resize(3, 3);
    A << -eta, -1.0, 0.0, 0.0, 0.0, 1.0, 1.0, -1.0, 0.0;
  } else if (kernel == "t*exp(-0.5*t)") {  // z1 = ∫(t-s)e^{-(t-s)/2}y, z0 = ∫e^{-(t-s)/2}y
    A.resize(3, 3);
    A << -eta, -1.0, 0.0, 0.0, -0.5, 1.0, 1.0, 0.0, -0.5;
  } else {
    throw std::invalid_argument("memory_mode: unsupported kernel " + kernel);
  }
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(A.rows());
  x0(0) = 1.0;
  return rk4_linear(A, x0, t, n)(0);
}

}  // namespace oracle
