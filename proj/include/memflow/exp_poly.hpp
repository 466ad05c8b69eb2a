#pragma once

#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace memflow {

enum class Phase { Cos, Sin };

/// One real term coeff * t^power * exp(rate*t) * {cos,sin}(freq*t).
struct ExpPolyTerm {
  double coeff = 0.0;
  int power = 0;
  double rate = 0.0;
  double freq = 0.0;
  Phase phase = Phase::Cos;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, std::size_t position)
      : std::runtime_error(msg + " at position " + std::to_string(position)),
        position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

/// Real exponential polynomial  f(t) = sum_k c_k t^m_k e^{a_k t} {cos,sin}(b_k t).
///
/// Stored internally in complex form  f(t) = Re sum_g P_g(t) e^{lambda_g t}, with
/// conjugate rates kept in pairs so that every algebraic operation (product,
/// derivative, convolution) is closed and exact up to rounding. The real term
/// list handed out by terms() is the canonical form: no duplicate
/// (power, rate, freq, phase) keys, no zero coefficients, freq >= 0 and only
/// cosine terms at freq == 0.
class ExpPolyFn {
 public:
  struct Group {
    std::complex<double> rate;
    std::vector<std::complex<double>> poly;  // poly[m] multiplies t^m
  };

  ExpPolyFn() = default;
  explicit ExpPolyFn(const std::vector<ExpPolyTerm>& terms);

  static ExpPolyFn zero() { return {}; }
  static ExpPolyFn constant(double c);
  static ExpPolyFn monomial(double coeff, int power, double rate = 0.0, double freq = 0.0,
                            Phase phase = Phase::Cos);
  /// Parses the kernel grammar, e.g. "t^2*exp(0.5*t)*cos(2*t) + 3*exp(-t)".
  static ExpPolyFn parse(std::string_view text);

  double operator()(double t) const { return eval(t); }
  double eval(double t) const;

  bool is_zero() const { return groups_.empty(); }
  std::vector<ExpPolyTerm> terms() const;
  const std::vector<Group>& groups() const { return groups_; }
  /// Distinct complex rates, sorted.
  std::vector<std::complex<double>> rates() const;
  int max_power() const;

  ExpPolyFn derivative(int k = 1) const;
  ExpPolyFn operator+(const ExpPolyFn& other) const;
  ExpPolyFn operator-(const ExpPolyFn& other) const;
  ExpPolyFn operator*(const ExpPolyFn& other) const;
  ExpPolyFn operator*(double s) const;
  ExpPolyFn operator-() const { return (*this) * -1.0; }

  /// Canonical printer; parse(to_string()) reproduces the function exactly.
  std::string to_string() const;

 private:
  explicit ExpPolyFn(std::vector<Group> groups);
  void canonicalize();

  std::vector<Group> groups_;

  friend ExpPolyFn convolve(const ExpPolyFn& f, const ExpPolyFn& g);
};

inline ExpPolyFn operator*(double s, const ExpPolyFn& f) { return f * s; }

double eval(const ExpPolyFn& f, double t);
ExpPolyFn derivative(const ExpPolyFn& f, int k);
/// (f*g)(t) = int_0^t f(t-tau) g(tau) dtau, in closed form.
ExpPolyFn convolve(const ExpPolyFn& f, const ExpPolyFn& g);
/// j-fold convolution M*...*M; the zero function for j == 0.
ExpPolyFn conv_power(const ExpPolyFn& m, int j);

}  // namespace memflow
