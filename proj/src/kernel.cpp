#include "memflow/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace memflow {

namespace {

double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return std::round(r);
}

double factorial(int n) {
  double r = 1.0;
  for (int i = 2; i <= n; ++i) r *= static_cast<double>(i);
  return r;
}

constexpr int kTailSamples = 2048;

}  // namespace

ExpPolyFn h_coeff(const ExpPolyFn& m, int l) {
  if (l < 0) throw std::invalid_argument("h_coeff: l must be nonnegative");
  ExpPolyFn acc;
  for (int j = 1; j <= l; ++j) acc = acc + conv_power(m, j).derivative(l - j) * binomial(l, l - j);
  return (l % 2 == 0) ? acc : -acc;
}

ExpPolyFn p_coeff(const ExpPolyFn& m, int l) {
  if (l < 0) throw std::invalid_argument("p_coeff: l must be nonnegative");
  double sum_const = -h_coeff(m, l).eval(0.0);
  std::vector<double> poly(static_cast<std::size_t>(l + 2), 0.0);
  const double outer = (l % 2 == 0) ? -1.0 : 1.0;  // (-1)^{l+1}
  for (int j = 1; j <= l + 1; ++j) {
    const ExpPolyFn power = conv_power(m, j);
    for (int k = std::max(1, 2 * j - l - 1); k <= j; ++k) {
      const int order = l - j + k;
      const double d0 = power.derivative(order).eval(0.0);
      const double sign = (k % 2 == 0) ? 1.0 : -1.0;  // (-t)^k
      poly[static_cast<std::size_t>(k)] += outer * binomial(l, order) * d0 * sign / factorial(k);
    }
  }
  std::vector<ExpPolyTerm> terms;
  terms.push_back({sum_const, 0});
  for (std::size_t k = 1; k < poly.size(); ++k) terms.push_back({poly[k], static_cast<int>(k)});
  return ExpPolyFn(terms);
}

double max_abs(const ExpPolyFn& f, double a, double b) {
  if (f.is_zero()) return 0.0;
  if (b <= a) return std::abs(f.eval(a));
  constexpr int kSamples = 1024;
  const double h = (b - a) / (kSamples - 1);
  int best = 0;
  double best_val = -1.0;
  for (int i = 0; i < kSamples; ++i) {
    const double v = std::abs(f.eval(a + h * i));
    if (v > best_val) {
      best_val = v;
      best = i;
    }
  }
  double lo = a + h * std::max(0, best - 1);
  double hi = a + h * std::min(kSamples - 1, best + 1);
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = hi - g * (hi - lo);
  double x2 = lo + g * (hi - lo);
  double f1 = std::abs(f.eval(x1));
  double f2 = std::abs(f.eval(x2));
  for (int it = 0; it < 60 && hi - lo > 1e-14 * (1.0 + std::abs(hi)); ++it) {
    if (f1 > f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - g * (hi - lo);
      f1 = std::abs(f.eval(x1));
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + g * (hi - lo);
      f2 = std::abs(f.eval(x2));
    }
  }
  return std::max({best_val, f1, f2});
}

double kernel_c_norm(const ExpPolyFn& m, int n, double t) {
  double acc = 0.0;
  ExpPolyFn d = m;
  for (int j = 0; j <= n; ++j) {
    acc += max_abs(d, 0.0, t);
    d = d.derivative(1);
  }
  return acc;
}

double remainder_bound(const ExpPolyFn& m, int n, double t) {
  return std::exp(t) * std::expm1(n * (1.0 + t) * kernel_c_norm(m, n, t));
}

int first_nonzero_h_index(const ExpPolyFn& m, double T, int l_max) {
  for (int l = 1; l <= l_max; ++l) {
    const double scale = kernel_c_norm(m, l, T);
    if (std::abs(h_coeff(m, l).eval(T)) > 1e-12 * scale) return l;
  }
  return -1;
}

// ---------------------------------------------------------------------------

BivariateKernel::BivariateKernel(const ExpPolyFn& m, int n, int j_max, double t_max)
    : t_max_(t_max), n_(n), j_max_(j_max) {
  if (n < 0) throw std::invalid_argument("km_partial: N must be nonnegative");
  if (j_max < 1) throw std::invalid_argument("km_partial: J_max must be at least 1");
  derivs_.resize(static_cast<std::size_t>(j_max + 1));
  prefix_max_.resize(static_cast<std::size_t>(j_max + 1));
  coeff_bound_.resize(static_cast<std::size_t>(j_max + 1));
  binom_.assign(static_cast<std::size_t>(n + 1), std::vector<double>(static_cast<std::size_t>(n + 1)));
  for (int a = 0; a <= n; ++a)
    for (int b = 0; b <= a; ++b) binom_[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = binomial(a, b);

  auto rate_index = [&](std::complex<double> r) {
    for (std::size_t i = 0; i < rates_.size(); ++i)
      if (std::abs(rates_[i] - r) <= 1e-12 * (1.0 + std::abs(r))) return static_cast<int>(i);
    rates_.push_back(r);
    return static_cast<int>(rates_.size() - 1);
  };

  const double h = t_max / (kTailSamples - 1);
  ExpPolyFn power = m;
  for (int j = 1; j <= j_max; ++j) {
    if (j > 1) power = convolve(power, m);
    auto& per_j = derivs_[static_cast<std::size_t>(j)];
    auto& pm_j = prefix_max_[static_cast<std::size_t>(j)];
    auto& cb_j = coeff_bound_[static_cast<std::size_t>(j)];
    ExpPolyFn d = power;
    for (int k = 0; k <= n; ++k) {
      std::vector<Piece> pieces;
      double crude = 0.0;
      for (const auto& g : d.groups()) {
        pieces.push_back({rate_index(g.rate), g.poly});
        double pm = 0.0;
        for (std::size_t p = 0; p < g.poly.size(); ++p)
          pm += std::abs(g.poly[p]) * std::pow(t_max, static_cast<double>(p));
        crude += pm;
      }
      per_j.push_back(std::move(pieces));
      cb_j.push_back(crude);
      std::vector<double> pm(kTailSamples);
      double running = 0.0;
      for (int i = 0; i < kTailSamples; ++i) {
        running = std::max(running, std::abs(d.eval(h * i)));
        pm[static_cast<std::size_t>(i)] = running;
      }
      pm_j.push_back(std::move(pm));
      d = d.derivative(1);
    }
  }
}

double BivariateKernel::derivative_max(int j, int d, double t) const {
  const auto ju = static_cast<std::size_t>(j);
  const auto du = static_cast<std::size_t>(d);
  if (t <= t_max_) {
    const double pos = t / t_max_ * (kTailSamples - 1);
    const auto idx = std::min<std::size_t>(kTailSamples - 1, static_cast<std::size_t>(std::ceil(pos)));
    // Sampling can miss a peak between nodes; pad the estimate.
    return 1.05 * prefix_max_[ju][du][idx];
  }
  double growth = 1.0;
  for (const auto& piece : derivs_[ju][du])
    growth = std::max(growth, std::exp(rates_[static_cast<std::size_t>(piece.rate)].real() * t));
  return coeff_bound_[ju][du] * std::pow(std::max(1.0, t / t_max_), 2.0 * j + d) * growth;
}

void BivariateKernel::fill_exponentials(double u, std::vector<std::complex<double>>& e) const {
  e.resize(rates_.size());
  for (std::size_t i = 0; i < rates_.size(); ++i) e[i] = std::exp(rates_[i] * u);
}

double BivariateKernel::sum_terms(double t, double s, int j_from, int j_to) const {
  if (j_to > j_max_) throw std::out_of_range("BivariateKernel: truncation exceeds table");
  const double u = t - s;
  std::vector<std::complex<double>> e;
  fill_exponentials(u, e);
  // s^i / i!
  std::vector<double> sp(static_cast<std::size_t>(j_to + 1));
  sp[0] = 1.0;
  for (int i = 1; i <= j_to; ++i) sp[static_cast<std::size_t>(i)] = sp[static_cast<std::size_t>(i - 1)] * s / i;
  double total = 0.0;
  for (int j = j_from; j <= j_to; ++j) {
    const auto& per_j = derivs_[static_cast<std::size_t>(j)];
    double term_j = 0.0;
    for (int k = 0; k <= std::min(n_, j); ++k) {
      const int d = n_ - k;
      double fd = 0.0;
      for (const auto& piece : per_j[static_cast<std::size_t>(d)]) {
        std::complex<double> acc{0.0, 0.0};
        for (auto it = piece.poly.rbegin(); it != piece.poly.rend(); ++it) acc = acc * u + *it;
        fd += (acc * e[static_cast<std::size_t>(piece.rate)]).real();
      }
      const double sign = ((j + d) % 2 == 0) ? 1.0 : -1.0;
      term_j += binom_[static_cast<std::size_t>(n_)][static_cast<std::size_t>(k)] * sign *
                sp[static_cast<std::size_t>(j - k)] * fd;
    }
    total += term_j;
  }
  return total;
}

double BivariateKernel::eval(double t, double s, int j_max) const {
  return sum_terms(t, s, 1, std::min(j_max, j_max_));
}

double BivariateKernel::term(double t, double s, int j) const { return sum_terms(t, s, j, j); }

double BivariateKernel::tail_bound(double t, double s, int j_max) const {
  j_max = std::min(j_max, j_max_);
  auto b = [&](int j) {
    double acc = 0.0;
    for (int k = 0; k <= std::min(n_, j); ++k)
      acc += binom_[static_cast<std::size_t>(n_)][static_cast<std::size_t>(k)] *
             std::pow(s, j - k) / factorial(j - k) * derivative_max(j, n_ - k, t);
    return acc;
  };
  if (j_max < 3) return std::numeric_limits<double>::infinity();
  const double b0 = b(j_max - 2);
  const double b1 = b(j_max - 1);
  const double b2 = b(j_max);
  if (b2 == 0.0) return 0.0;
  double r = 0.0;
  if (b1 > 0.0) r = std::max(r, b2 / b1);
  if (b0 > 0.0) r = std::max(r, b1 / b0);
  if (b1 == 0.0 || r >= 1.0) return std::numeric_limits<double>::infinity();
  return b2 * r / (1.0 - r);
}

double BivariateKernel::eval_checked(double t, double s, double tol) const {
  const double bound = tail_bound(t, s);
  if (!(bound <= tol))
    throw TruncationError("K_M series truncation at J=" + std::to_string(j_max_) +
                              " has tail bound " + std::to_string(bound) + " above tolerance",
                          bound);
  return eval(t, s);
}

BivariateKernel km_partial(const ExpPolyFn& m, int n, int j_max, double t_max) {
  return BivariateKernel(m, n, j_max, t_max);
}

}  // namespace memflow
