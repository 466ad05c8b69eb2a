#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "memflow/exp_poly.hpp"

namespace memflow {

class TruncationError : public std::runtime_error {
 public:
  TruncationError(const std::string& msg, double bound) : std::runtime_error(msg), bound_(bound) {}
  double bound() const { return bound_; }

 private:
  double bound_;
};

/// h_l = (-1)^l sum_{j=0}^{l} C(l, l-j) D^{l-j} (M^{*j}).
ExpPolyFn h_coeff(const ExpPolyFn& m, int l);

/// p_l; satisfies p_l(0) = -h_l(0).
ExpPolyFn p_coeff(const ExpPolyFn& m, int l);

/// max_{[a,b]} |f|: 1024-point sampling followed by golden-section refinement.
double max_abs(const ExpPolyFn& f, double a, double b);

/// sum_{j<=n} max_{[0,t]} |M^{(j)}|.
double kernel_c_norm(const ExpPolyFn& m, int n, double t);

/// Right-hand side of the remainder estimate e^t (exp[N(1+t) c_N(t)] - 1).
double remainder_bound(const ExpPolyFn& m, int n, double t);

/// Smallest l >= 1 with |h_l(T)| > 1e-12 kernel_c_norm(M, l, T); -1 if none up to l_max.
int first_nonzero_h_index(const ExpPolyFn& m, double T, int l_max = 12);

/// Partial sums of d^N/ds^N K_M(t, s), where
/// K_M(t, s) = sum_{j>=1} (-s)^j / j! (M^{*j})(t - s).
class BivariateKernel {
 public:
  /// Tail bounds are tabulated for t <= t_max; beyond it a cruder coefficient
  /// bound is used.
  BivariateKernel(const ExpPolyFn& m, int n, int j_max, double t_max = 2.0);

  int order() const { return n_; }
  int truncation() const { return j_max_; }

  /// Partial sum with terms j = 1..j_max (j_max <= truncation()).
  double eval(double t, double s) const { return eval(t, s, j_max_); }
  double eval(double t, double s, int j_max) const;
  /// Contribution of the single series term j.
  double term(double t, double s, int j) const;

  /// Conservative estimate of |sum_{j>J} term_j(t, s)| (infinite when the
  /// per-term bounds stop decaying).
  double tail_bound(double t, double s) const { return tail_bound(t, s, j_max_); }
  double tail_bound(double t, double s, int j_max) const;
  /// eval(), after checking that tail_bound <= tol.
  double eval_checked(double t, double s, double tol) const;

 private:
  struct Piece {
    int rate;  // index into rates_
    std::vector<std::complex<double>> poly;
  };
  // Groups of (M^{*j})^{(d)}, indexed [j][d].
  std::vector<std::vector<std::vector<Piece>>> derivs_;
  std::vector<std::complex<double>> rates_;
  // Prefix maxima of |(M^{*j})^{(d)}| on a uniform grid over [0, t_max].
  std::vector<std::vector<std::vector<double>>> prefix_max_;
  std::vector<std::vector<double>> coeff_bound_;  // crude fallback, [j][d]
  std::vector<std::vector<double>> binom_;
  double t_max_;
  int n_;
  int j_max_;

  double derivative_max(int j, int d, double t) const;
  void fill_exponentials(double u, std::vector<std::complex<double>>& e) const;
  double sum_terms(double t, double s, int j_from, int j_to) const;
};

BivariateKernel km_partial(const ExpPolyFn& m, int n, int j_max, double t_max = 2.0);

}  // namespace memflow
