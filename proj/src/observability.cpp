#include "memflow/observability.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <random>

#include <Eigen/Eigenvalues>

#include "memflow/kernel.hpp"
#include "memflow/parallel.hpp"

namespace memflow {

double ObsSetup::weight_exponent() const {
  if (!alpha) return 0.0;
  return (S == 0.0 || force_weight) ? *alpha : 0.0;
}

namespace {

bool on_boundary(double t, double width) {
  const double r = t / width;
  return std::abs(r - std::round(r)) <= 1e-9 * std::max(1.0, r);
}

}  // namespace

ObsOperator::ObsOperator(const ObsSetup& setup) : ref_(setup.ref_exponent) {
  const auto& grid = setup.table.grid;
  const auto& mask = setup.mask;
  const auto& basis = setup.basis;
  if (mask.n_t() != grid.n_cells) throw std::invalid_argument("mask time cells differ from flow grid cells");
  if (mask.n_x() != basis.grid_size()) throw std::invalid_argument("mask columns differ from basis grid");
  if (setup.table.modes() != basis.size()) throw std::invalid_argument("flow table and basis differ in size");
  const double T = setup.horizon();
  const double S = setup.S;
  const double width = grid.cell_width();
  if (!(T > S) || S < 0.0 || T > grid.T * (1.0 + 1e-12))
    throw std::invalid_argument("observation window must satisfy 0 <= S < T <= horizon");
  if (!on_boundary(S, width) || !on_boundary(T, width))
    throw std::invalid_argument("observation window must start and end on time-cell boundaries");
  eta_ = basis.eta;
  phi_ = setup.table.phi;
  const double alpha = setup.weight_exponent();
  const int J = basis.size();

  std::map<std::vector<std::uint8_t>, int> pattern_ids;
  const int c_lo = static_cast<int>(std::lround(S / width));
  const int c_hi = static_cast<int>(std::lround(T / width));
  for (int c = c_lo; c < c_hi; ++c) {
    std::vector<std::uint8_t> key(static_cast<std::size_t>(mask.n_x()));
    bool any = false;
    for (int i = 0; i < mask.n_x(); ++i) {
      key[static_cast<std::size_t>(i)] = mask.at(c, i) ? 1 : 0;
      any = any || mask.at(c, i);
    }
    if (!any) continue;
    auto it = pattern_ids.find(key);
    if (it == pattern_ids.end()) {
      Eigen::VectorXd w(mask.n_x());
      for (int i = 0; i < mask.n_x(); ++i) w(i) = key[static_cast<std::size_t>(i)] ? basis.weights(i) : 0.0;
      patterns_.push_back(basis.values.transpose() * w.asDiagonal() * basis.values);
      it = pattern_ids.emplace(key, static_cast<int>(patterns_.size() - 1)).first;
    }
    Cell cell{it->second, {}};
    const int first = grid.cell_first[static_cast<std::size_t>(c)];
    const int last = grid.cell_last[static_cast<std::size_t>(c)];
    for (int i = first; i <= last; ++i) {
      const double lo = i > first ? grid.t[static_cast<std::size_t>(i)] - grid.t[static_cast<std::size_t>(i - 1)] : 0.0;
      const double hi = i < last ? grid.t[static_cast<std::size_t>(i + 1)] - grid.t[static_cast<std::size_t>(i)] : 0.0;
      const double t = grid.t[static_cast<std::size_t>(i)];
      const double w = 0.5 * (lo + hi) * (alpha == 0.0 ? 1.0 : std::pow(t, alpha));
      cell.nodes.push_back({i, w});
    }
    cells_.push_back(std::move(cell));
  }

  gram_ = Eigen::MatrixXd::Zero(J, J);
  for (const auto& cell : cells_) {
    const auto& B = patterns_[static_cast<std::size_t>(cell.pattern)];
    for (const auto& node : cell.nodes) {
      // weights t^alpha enter the surrogate squared
      const Eigen::VectorXd p = phi_.col(node.column);
      const double t = grid.t[static_cast<std::size_t>(node.column)];
      const double w = node.weight * (alpha == 0.0 ? 1.0 : std::pow(t, alpha));
      gram_.noalias() += w * (p.asDiagonal() * B * p.asDiagonal());
    }
  }
  gram_ = (0.5 * (gram_ + gram_.transpose())).eval();

  int t_node = -1;
  for (int i = 0; i < grid.size(); ++i)
    if (std::abs(grid.t[static_cast<std::size_t>(i)] - T) <= 1e-12 * std::max(1.0, T)) t_node = i;
  if (t_node < 0) throw std::invalid_argument("window end is not a grid node");
  final_ = phi_.col(t_node);
}

Eigen::VectorXd ObsOperator::ref_weights() const { return eta_.array().pow(ref_).matrix(); }

double ObsOperator::seminorm(const Eigen::VectorXd& a) const {
  double acc = 0.0;
  Eigen::VectorXd u(a.size());
  for (const auto& cell : cells_) {
    const auto& B = patterns_[static_cast<std::size_t>(cell.pattern)];
    for (const auto& node : cell.nodes) {
      if (node.weight == 0.0) continue;
      u = phi_.col(node.column).cwiseProduct(a);
      acc += node.weight * std::sqrt(std::max(0.0, u.dot(B * u)));
    }
  }
  return acc;
}

double ObsOperator::seminorm(const Eigen::VectorXd& a, Eigen::VectorXd& grad) const {
  double acc = 0.0;
  grad = Eigen::VectorXd::Zero(a.size());
  Eigen::VectorXd u(a.size()), bu(a.size());
  for (const auto& cell : cells_) {
    const auto& B = patterns_[static_cast<std::size_t>(cell.pattern)];
    for (const auto& node : cell.nodes) {
      if (node.weight == 0.0) continue;
      const auto p = phi_.col(node.column);
      u = p.cwiseProduct(a);
      bu.noalias() = B * u;
      const double q = std::sqrt(std::max(0.0, u.dot(bu)));
      acc += node.weight * q;
      if (q > 0.0) grad += (node.weight / q) * p.cwiseProduct(bu);
    }
  }
  return acc;
}

double obs_seminorm(const ObsSetup& setup, const SpectralVec& y0) {
  return ObsOperator(setup).seminorm(y0.coeffs);
}

Eigen::MatrixXd gram_matrix(const ObsSetup& setup) { return ObsOperator(setup).gram(); }

// ---------------------------------------------------------------------------
// Sphere optimization

namespace {

using Vec = Eigen::VectorXd;
using SphereFn = std::function<double(const Vec&, Vec&)>;

struct Descent {
  Vec x;
  double value;
  int iterations;
};

// Minimizes sign * f over the unit sphere by projected (sub)gradient steps
// with Armijo backtracking on the rotation angle.
Descent sphere_descent(const SphereFn& f, Vec b, double sign, int max_iter) {
  b.normalize();
  Vec g;
  double val = sign * f(b, g);
  g *= sign;
  double step = 0.2;
  int it = 0;
  for (; it < max_iter; ++it) {
    Vec gt = g - g.dot(b) * b;
    const double gn = gt.norm();
    if (!(gn > 1e-300)) break;
    const Vec dir = -gt / gn;
    double s = std::min(step, 1.0);
    bool moved = false;
    while (s > 1e-12) {
      Vec bn = (b + s * dir).normalized();
      Vec gn_new;
      const double vn = sign * f(bn, gn_new);
      if (vn <= val - 1e-4 * s * gn) {
        const double gain = val - vn;
        b = bn;
        g = sign * gn_new;
        val = vn;
        moved = true;
        if (gain <= 1e-14 * std::abs(val)) it = max_iter;  // stalled
        break;
      }
      s *= 0.5;
    }
    if (!moved) break;
    step = 2.0 * s;
  }
  return {b, sign * val, it};
}

std::vector<Vec> start_vectors(const Eigen::MatrixXd& eigvecs, int J, int wanted, std::uint64_t seed,
                               bool include_coordinates = true) {
  std::vector<Vec> out;
  for (int k = 0; k < eigvecs.cols(); ++k) out.push_back(eigvecs.col(k));
  if (include_coordinates)
    for (int k = 0; k < J; ++k) out.push_back(Vec::Unit(J, k));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  while (static_cast<int>(out.size()) < wanted) {
    Vec v(J);
    for (int k = 0; k < J; ++k) v(k) = normal(rng);
    out.push_back(v.normalized());
  }
  return out;
}

struct Scaled {
  Vec d;               // a = d ∘ b
  Eigen::MatrixXd gt;  // d G d
};

Scaled scaled_gram(const ObsOperator& op) {
  Scaled s;
  s.d = op.eta().array().pow(-0.5 * op.ref_exponent()).matrix();
  s.gt = s.d.asDiagonal() * op.gram() * s.d.asDiagonal();
  s.gt = (0.5 * (s.gt + s.gt.transpose())).eval();
  return s;
}

}  // namespace

ObsReport two_sided_constants(const ObsOperator& op, const OptimizerOptions& opt) {
  const int J = op.modes();
  const Scaled sc = scaled_gram(op);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sc.gt);
  const SphereFn f = [&](const Vec& b, Vec& g) {
    Vec ga;
    const double v = op.seminorm(sc.d.cwiseProduct(b), ga);
    g = sc.d.cwiseProduct(ga);
    return v;
  };
  ObsReport rep;
  rep.surrogate_lower = std::sqrt(std::max(0.0, es.eigenvalues()(0)));
  rep.surrogate_upper = std::sqrt(std::max(0.0, es.eigenvalues()(J - 1)));

  const auto starts = start_vectors(es.eigenvectors(), J, std::max(32, opt.starts), opt.seed);
  std::vector<Descent> lows(starts.size());
  parallel_for(starts.size(), [&](std::size_t k) { lows[k] = sphere_descent(f, starts[k], 1.0, opt.max_iter); });
  std::size_t best = 0;
  for (std::size_t k = 1; k < lows.size(); ++k)
    if (lows[k].value < lows[best].value) best = k;
  rep.c_lower = lows[best].value;
  rep.lower_witness = sc.d.cwiseProduct(lows[best].x);
  rep.starts = static_cast<int>(lows.size());
  for (const auto& d : lows) rep.restart_values.push_back(d.value);
  std::vector<double> sorted = rep.restart_values;
  std::sort(sorted.begin(), sorted.end());
  const double q25 = sorted[static_cast<std::size_t>(0.25 * static_cast<double>(sorted.size() - 1))];
  rep.restart_spread = rep.c_lower > 0.0 ? (q25 - rep.c_lower) / rep.c_lower : 0.0;

  // upper: ascend from the leading surrogate directions and a few random ones
  Eigen::MatrixXd top(J, std::min(J, 4));
  for (int k = 0; k < top.cols(); ++k) top.col(k) = es.eigenvectors().col(J - 1 - k);
  const auto up_starts = start_vectors(top, J, static_cast<int>(top.cols()) + 8, opt.seed + 1, false);
  std::vector<Descent> highs(up_starts.size());
  parallel_for(up_starts.size(), [&](std::size_t k) { highs[k] = sphere_descent(f, up_starts[k], -1.0, opt.max_iter); });
  std::size_t hb = 0;
  for (std::size_t k = 1; k < highs.size(); ++k)
    if (highs[k].value > highs[hb].value) hb = k;
  rep.c_upper = highs[hb].value;
  rep.upper_witness = sc.d.cwiseProduct(highs[hb].x);
  return rep;
}

ObsReport two_sided_constants(const ObsSetup& setup, const OptimizerOptions& opt) {
  return two_sided_constants(ObsOperator(setup), opt);
}

NullReport null_obs_constant(const ObsOperator& op, const OptimizerOptions& opt) {
  const int J = op.modes();
  const Scaled sc = scaled_gram(op);
  const Vec fdiag = op.final_flow().cwiseProduct(sc.d).array().square().matrix();
  NullReport rep;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sc.gt);
  const double lmax = std::max(es.eigenvalues()(J - 1), 0.0);
  const double lmin = es.eigenvalues()(0);
  Eigen::MatrixXd seeds;
  if (!(lmax > 0.0) || lmin <= 1e-14 * lmax) {
    // G is singular: some direction is invisible to the observation.
    Vec w = es.eigenvectors().col(0);
    rep.witness = sc.d.cwiseProduct(w);
    rep.witness_observation = op.seminorm(rep.witness);
    if (rep.witness_observation < 1e-12 && std::sqrt(w.dot(fdiag.asDiagonal() * w)) > 0.0) {
      rep.unbounded = true;
      rep.constant = std::numeric_limits<double>::infinity();
      rep.surrogate = std::numeric_limits<double>::infinity();
      return rep;
    }
    seeds = es.eigenvectors();
  } else {
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(Eigen::MatrixXd(fdiag.asDiagonal()), sc.gt);
    rep.surrogate = std::sqrt(std::max(0.0, ges.eigenvalues()(J - 1)));
    seeds.resize(J, J);
    for (int k = 0; k < J; ++k) seeds.col(k) = ges.eigenvectors().col(J - 1 - k).normalized();
  }
  const SphereFn q = [&](const Vec& b, Vec& g) {
    Vec ga;
    const double obs = op.seminorm(sc.d.cwiseProduct(b), ga);
    const Vec fb = fdiag.cwiseProduct(b);
    const double num = std::sqrt(std::max(0.0, b.dot(fb)));
    if (!(obs > 0.0)) {
      g = Vec::Zero(b.size());
      return num > 0.0 ? std::numeric_limits<double>::max() : 0.0;
    }
    const Vec gnum = num > 0.0 ? Vec(fb / num) : Vec::Zero(b.size());
    g = (gnum * obs - num * sc.d.cwiseProduct(ga)) / (obs * obs);
    return num / obs;
  };
  const auto starts = start_vectors(seeds, J, std::max(32, opt.starts), opt.seed + 2);
  std::vector<Descent> runs(starts.size());
  parallel_for(starts.size(), [&](std::size_t k) { runs[k] = sphere_descent(q, starts[k], -1.0, opt.max_iter); });
  std::size_t best = 0;
  for (std::size_t k = 1; k < runs.size(); ++k)
    if (runs[k].value > runs[best].value) best = k;
  rep.witness = sc.d.cwiseProduct(runs[best].x);
  rep.witness_observation = op.seminorm(rep.witness);
  rep.constant = runs[best].value;
  if (rep.witness_observation < 1e-12 * runs[best].x.norm()) {
    rep.unbounded = true;
    rep.constant = std::numeric_limits<double>::infinity();
  }
  return rep;
}

NullReport null_obs_constant(const ObsSetup& setup, const OptimizerOptions& opt) {
  return null_obs_constant(ObsOperator(setup), opt);
}

RelaxedFit relaxed_inequality_fit(const ObsOperator& op, const OptimizerOptions& opt) {
  const int J = op.modes();
  const Scaled sc = scaled_gram(op);
  const Vec lower = op.eta().array().pow(-1.0).matrix();  // H^{ref-2} weight in b coordinates
  const SphereFn g = [&](const Vec& b, Vec& grad) {
    Vec ga;
    const double obs = op.seminorm(sc.d.cwiseProduct(b), ga);
    const Vec lb = lower.cwiseProduct(b);
    const double weak = std::sqrt(b.dot(lb));
    grad = sc.d.cwiseProduct(ga) + (weak > 0.0 ? Vec(lb / weak) : Vec::Zero(J));
    return obs + weak;
  };
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sc.gt);
  Eigen::MatrixXd both(J, 2 * J);
  both << es.eigenvectors(), -es.eigenvectors();
  const auto samples = start_vectors(both, J, std::max(256, opt.starts), opt.seed + 3);
  std::vector<double> values(samples.size());
  parallel_for(samples.size(), [&](std::size_t k) {
    Vec dummy;
    values[k] = g(samples[k].normalized(), dummy);
  });
  std::vector<std::size_t> order(samples.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  RelaxedFit fit;
  fit.samples = static_cast<int>(samples.size());
  fit.sampled = values[order[0]];
  const std::size_t n_refine = std::min<std::size_t>(8, order.size());
  std::vector<double> refined(n_refine);
  parallel_for(n_refine, [&](std::size_t k) {
    refined[k] = sphere_descent(g, samples[order[k]], 1.0, opt.max_iter).value;
  });
  fit.C = std::min(fit.sampled, *std::min_element(refined.begin(), refined.end()));
  fit.residual = fit.sampled > 0.0 ? (fit.sampled - fit.C) / fit.sampled : 0.0;
  return fit;
}

RelaxedFit relaxed_inequality_fit(const ObsSetup& setup, const OptimizerOptions& opt) {
  return relaxed_inequality_fit(ObsOperator(setup), opt);
}

UniqueContinuation unique_continuation_rank(const ObsOperator& op) {
  const Scaled sc = scaled_gram(op);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sc.gt, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  const double top = ev(ev.size() - 1);
  UniqueContinuation out;
  if (!(top > 0.0)) return out;
  for (Eigen::Index k = 0; k < ev.size(); ++k)
    if (ev(k) > 1e-12 * top) ++out.rank;
  out.sigma_min = out.rank == ev.size() ? std::sqrt(ev(0)) : 0.0;
  return out;
}

UniqueContinuation unique_continuation_rank(const ObsSetup& setup) {
  return unique_continuation_rank(ObsOperator(setup));
}

// ---------------------------------------------------------------------------
// Probes

double ProbeTrajectory::spread() const {
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const auto& p : points) {
    lo = std::min(lo, p.quotient);
    hi = std::max(hi, p.quotient);
  }
  return points.empty() ? 0.0 : hi / lo;
}

std::string ProbeTrajectory::to_csv() const {
  std::string out = "k,quotient\n";
  char buf[64];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%d,%.12e\n", p.k, p.quotient);
    out += buf;
  }
  return out;
}

Eigen::VectorXd bump_profile(const Eigen::VectorXd& x, double center, double half_width) {
  Eigen::VectorXd out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double u = (x(i) - center) / half_width;
    out(i) = std::abs(u) < 1.0 ? std::pow(1.0 - u * u, 4) : 0.0;
  }
  return out;
}

namespace {

// Exact sine coefficients of the bump (1 - u^2)^4, normalized in L2(0,1).
Eigen::VectorXd bump_coefficients(int J, double center, double half_width, int power = 4) {
  const auto k = [&](int j) { return (j + 1) * 3.14159265358979323846; };
  // Gauss-Legendre on the support is exact up to the sine's resolution; use
  // many points so high modes are integrated accurately.
  const int n = std::max(256, 16 * J);
  Eigen::VectorXd coeffs = Eigen::VectorXd::Zero(J);
  double norm2 = 0.0;
  const double h = 2.0 * half_width / n;
  for (int q = 0; q < n; ++q) {
    // composite Simpson-free midpoint rule on a polynomial-times-sine integrand
    const double x = center - half_width + (q + 0.5) * h;
    const double u = (x - center) / half_width;
    const double b = std::pow(1.0 - u * u, power);
    norm2 += h * b * b;
    for (int j = 0; j < J; ++j) coeffs(j) += h * b * std::sqrt(2.0) * std::sin(k(j) * x);
  }
  return coeffs / std::sqrt(norm2);
}

}  // namespace

ProbeTrajectory alpha_probe(const ObsSetup& setup, const AlphaProbeOptions& opt) {
  const ObsOperator op(setup);
  const int J = op.modes();
  ProbeTrajectory traj;
  for (int k : opt.ks) {
    const int jk = std::min(J, opt.modes_per_k * k + opt.base_modes);
    if (4 * jk > setup.basis.grid_size())
      throw std::invalid_argument("alpha_probe: J(k) exceeds n_x/4 (aliasing guard)");
    Eigen::VectorXd w = Eigen::VectorXd::Zero(J);
    w.head(jk) = bump_coefficients(jk, opt.center, opt.half_width / k);
    // y_k = A^2 w_k, so that ||y_k||_{H^-4} = ||w_k||
    Eigen::VectorXd y = w.cwiseProduct(op.eta().array().square().matrix());
    ProbePoint p;
    p.k = k;
    p.modes = jk;
    p.numerator = op.seminorm(y);
    p.denominator = hs_norm(op.eta(), y, op.ref_exponent());
    p.quotient = p.numerator / p.denominator;
    traj.points.push_back(p);
  }
  return traj;
}

BallProbe missing_ball_probe(const ObsSetup& setup, const ExpPolyFn& m, const BallProbeOptions& opt) {
  const ObsOperator op(setup);
  const int J = op.modes();
  BallProbe out;
  const double T = setup.horizon();
  out.h_index = opt.power >= 0 ? opt.power : first_nonzero_h_index(m, T);
  if (out.h_index < 0) throw std::runtime_error("missing_ball_probe: no nonzero h_l(T) found");
  out.h_value = std::abs(h_coeff(m, out.h_index)(T));
  const double dx = 1.0 / setup.basis.grid_size();
  for (int k : opt.ks) {
    const double half = 0.5 * opt.radius / k;
    if (2.0 * half < 4.0 * dx) out.width_warning = true;
    const Eigen::VectorXd w = bump_coefficients(J, opt.center, half, opt.profile_power);
    Eigen::VectorXd z(J);
    for (int j = 0; j < J; ++j) z(j) = std::pow(-op.eta()(j), out.h_index + 1) * w(j);
    ProbePoint p;
    p.k = k;
    p.modes = J;
    p.numerator = op.final_flow().cwiseProduct(z).norm();
    p.denominator = op.seminorm(z);
    p.quotient = p.numerator / p.denominator;
    out.trajectory.points.push_back(p);
    out.final_norm_ratio.push_back(out.h_value > 0.0 ? p.numerator / out.h_value : 0.0);
  }
  return out;
}

HeatProbe heat_local_probe(const EigenBasis& basis, const HeatProbeOptions& opt) {
  std::vector<double> times = opt.times;
  if (times.empty()) {
    times.push_back(0.0);
    for (int i = 0; i <= 60; ++i) times.push_back(std::pow(10.0, -7.0 + 7.0 * i / 60.0));
  }
  const int J = basis.size();
  Eigen::VectorXd outside(basis.grid_size());
  for (int i = 0; i < basis.grid_size(); ++i)
    outside(i) = std::abs(basis.x(i) - opt.center) >= opt.radius ? basis.weights(i) : 0.0;
  HeatProbe out;
  out.s_values = opt.s_values;
  out.ratio.assign(opt.s_values.size(), std::vector<double>(opt.widths.size(), 0.0));
  for (std::size_t wi = 0; wi < opt.widths.size(); ++wi) {
    if (opt.widths[wi] > 0.5 * opt.radius + 1e-12)
      throw std::invalid_argument("heat_local_probe: bump must lie in B(x0, r/2)");
    const Eigen::VectorXd z = bump_coefficients(J, opt.center, opt.widths[wi]);
    double sup = 0.0;
    for (double t : times) {
      const Eigen::VectorXd c = z.cwiseProduct((-t * basis.eta.array()).exp().matrix());
      const Eigen::VectorXd f = basis.values * c;
      sup = std::max(sup, std::sqrt(f.cwiseProduct(f).dot(outside)));
    }
    for (std::size_t si = 0; si < opt.s_values.size(); ++si)
      out.ratio[si][wi] = sup / hs_norm(basis.eta, z, opt.s_values[si]);
  }
  return out;
}

}  // namespace memflow
