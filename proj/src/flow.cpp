#include "memflow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "memflow/parallel.hpp"
#include "memflow/quadrature.hpp"

namespace memflow {

namespace {

double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return std::round(r);
}

}  // namespace

// ---------------------------------------------------------------------------
// Volterra

VolterraScheme::VolterraScheme(const ExpPolyFn& m, double dt)
    : m_(m), dt_(dt), m0_(m.eval(0.0)), zero_(m.is_zero()) {
  if (!(dt > 0.0)) throw std::invalid_argument("VolterraScheme: step must be positive");
  int degree = 0;
  for (const auto& g : m.groups()) {
    if (g.rate.imag() < 0.0) continue;
    groups_.push_back({std::exp(g.rate * dt), g.poly, g.rate.imag() > 0.0 ? 2.0 : 1.0});
    degree = std::max(degree, static_cast<int>(g.poly.size()) - 1);
  }
  shift_.assign(static_cast<std::size_t>(degree + 1), std::vector<double>(static_cast<std::size_t>(degree + 1), 0.0));
  for (int p = 0; p <= degree; ++p)
    for (int q = 0; q <= p; ++q)
      shift_[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)] = binomial(p, q) * std::pow(dt, p - q);
}

std::vector<double> VolterraScheme::solve(double eta, long n_steps, double y0,
                                          const std::vector<double>& step_forcing) const {
  if (eta * dt_ > 2.0) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "step rejected: eta*dt = %.4g exceeds 2 (eta = %.6g, dt = %.3g)",
                  eta * dt_, eta, dt_);
    throw StepSizeError(buf);
  }
  if (!step_forcing.empty() && static_cast<long>(step_forcing.size()) < n_steps)
    throw std::invalid_argument("VolterraScheme: forcing shorter than the step count");
  const double dt = dt_;
  std::vector<double> y(static_cast<std::size_t>(n_steps + 1));
  y[0] = y0;
  const double denom = 1.0 + 0.5 * dt * eta + 0.25 * dt * dt * m0_;

  using cplx = std::complex<double>;
  std::vector<std::vector<cplx>> S(groups_.size());
  std::vector<std::vector<cplx>> pre(groups_.size());
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    S[g].assign(groups_[g].coeff.size(), cplx{});
    pre[g].assign(groups_[g].coeff.size(), cplx{});
    S[g][0] = y0;
  }
  double i_now = 0.0;
  for (long n = 0; n < n_steps; ++n) {
    const double yn = y[static_cast<std::size_t>(n)];
    double i_tilde = 0.0;
    if (!zero_) {
      double sum_pre = 0.0;
      for (std::size_t g = 0; g < groups_.size(); ++g) {
        const auto& grp = groups_[g];
        cplx acc{};
        for (std::size_t p = 0; p < grp.coeff.size(); ++p) {
          cplx v{};
          for (std::size_t q = 0; q <= p; ++q) v += shift_[p][q] * S[g][q];
          pre[g][p] = grp.rho * v;
          acc += grp.coeff[p] * pre[g][p];
        }
        sum_pre += grp.weight * acc.real();
      }
      i_tilde = dt * (sum_pre - 0.5 * m_.eval(static_cast<double>(n + 1) * dt) * y0);
    }
    const double g = step_forcing.empty() ? 0.0 : step_forcing[static_cast<std::size_t>(n)];
    const double rhs = yn + 0.5 * dt * (-eta * yn - i_now - i_tilde) + dt * g;
    const double next = rhs / denom;
    y[static_cast<std::size_t>(n + 1)] = next;
    if (!zero_) {
      for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
        S[gi].swap(pre[gi]);
        S[gi][0] += next;
      }
      i_now = i_tilde + 0.5 * dt * m0_ * next;
    }
  }
  return y;
}

std::vector<double> volterra_mode(const ExpPolyFn& m, double eta, double T, long n_steps, double y0,
                                  const std::vector<double>& step_forcing) {
  if (n_steps < 1) throw std::invalid_argument("volterra_mode: need at least one step");
  return VolterraScheme(m, T / static_cast<double>(n_steps)).solve(eta, n_steps, y0, step_forcing);
}

// ---------------------------------------------------------------------------
// Kernel representation

double kernel_rep_mode(const BivariateKernel& k0, double eta, double t, double series_tol) {
  if (k0.order() != 0) throw std::invalid_argument("kernel_rep_mode: kernel must have order 0");
  if (t < 0.0) throw std::invalid_argument("kernel_rep_mode: t must be nonnegative");
  if (t == 0.0) return 1.0;
  const double tail = k0.tail_bound(t, t) * t;
  if (!(tail <= series_tol))
    throw TruncationError("K_M truncation error bound " + std::to_string(tail) + " exceeds tolerance",
                          tail);
  const auto r = integrate([&](double tau) { return k0.eval(t, tau) * std::exp(-eta * tau); }, 0.0,
                           t, 1e-14, 1e-12);
  return std::exp(-eta * t) + r.value;
}

double kernel_rep_mode(const ExpPolyFn& m, double eta, double t, int j_max) {
  return kernel_rep_mode(km_partial(m, 0, j_max, std::max(2.0, t)), eta, t);
}

// ---------------------------------------------------------------------------
// Decomposition

DecompositionModel::DecompositionModel(const ExpPolyFn& m, int n, int j_max, double t_max)
    : n_(n), km_(m, n, j_max, t_max) {
  if (n < 2) throw std::invalid_argument("decomposition order must be at least 2");
  for (int l = 0; l < n; ++l) {
    h_.push_back(h_coeff(m, l));
    p_.push_back(p_coeff(m, l));
  }
}

double DecompositionModel::remainder_R(double eta, double t) const {
  if (t < 0.0) throw std::invalid_argument("remainder: t must be nonnegative");
  if (t == 0.0) return 0.0;
  const double tail = km_.tail_bound(t, t);
  if (!(tail <= 1e-10))
    throw TruncationError("K_M derivative series tail bound " + std::to_string(tail) +
                              " exceeds tolerance",
                          tail);
  const auto r = integrate([&](double s) { return eta * std::exp(-eta * s) * km_.eval(t, s); }, 0.0,
                           t, 1e-13, 1e-11);
  return r.value;
}

DecompositionParts DecompositionModel::eval(double eta, double t) const {
  if (!(t > 0.0)) throw std::invalid_argument("decomposition_mode requires t > 0");
  DecompositionParts out;
  out.order = n_;
  double heat = 1.0;
  double wave = 0.0;
  double inv = 1.0 / eta;
  for (int l = 0; l < n_; ++l) {
    heat += p_[static_cast<std::size_t>(l)](t) * inv;
    wave += h_[static_cast<std::size_t>(l)](t) * inv;
    inv /= eta;
  }
  out.P = std::exp(-eta * t) * heat;
  out.W = wave;
  out.R = remainder_R(eta, t);
  out.remainder = out.R * inv;  // inv = eta^{-N-1}
  out.sum = out.P + out.W + out.remainder;
  return out;
}

DecompositionParts decomposition_mode(const ExpPolyFn& m, double eta, double t, int n) {
  return DecompositionModel(m, n, 40, std::max(2.0, t)).eval(eta, t);
}

double remainder_RN_mode(const ExpPolyFn& m, double eta, double t, int n) {
  if (t == 0.0) return 0.0;
  return DecompositionModel(m, n, 40, std::max(2.0, t)).remainder_R(eta, t);
}

// ---------------------------------------------------------------------------
// Tables

TimeGrid make_time_grid(const GridSpec& spec, double eta_max) {
  if (!(spec.T > 0.0) || spec.n_cells < 1 || spec.refine < 1)
    throw std::invalid_argument("time grid: T, n_cells and refine must be positive");
  if (spec.nodes_per_level < 2 || spec.nodes_per_level % 2 != 0)
    throw std::invalid_argument("time grid: nodes_per_level must be even");
  TimeGrid g;
  g.T = spec.T;
  g.n_cells = spec.n_cells;
  const double dt_max = spec.dt_max > 0.0 ? spec.dt_max : 1e-3 * spec.T;
  const double target = std::min(dt_max, spec.eta_dt_max / std::max(eta_max, 1e-300));
  const double h_cell = spec.T / (static_cast<double>(spec.n_cells) * spec.refine);
  int levels = 0;
  while (h_cell / std::ldexp(1.0, levels) > target) ++levels;
  const long top = 1L << levels;
  g.fine_per_cell = static_cast<long>(spec.refine) * top;
  g.n_fine = g.fine_per_cell * spec.n_cells;
  g.h_fine = spec.T / static_cast<double>(g.n_fine);
  const long K = spec.nodes_per_level;
  long pos = 0;
  g.fine_index.push_back(0);
  while (pos < g.n_fine) {
    long sp = 1;
    while (sp < top && pos >= K * sp) sp *= 2;
    pos = std::min(pos + sp, g.n_fine);
    g.fine_index.push_back(pos);
  }
  g.t.resize(g.fine_index.size());
  for (std::size_t i = 0; i < g.t.size(); ++i)
    g.t[i] = static_cast<double>(g.fine_index[i]) * g.h_fine;
  g.t.back() = spec.T;
  g.cell_first.assign(static_cast<std::size_t>(spec.n_cells), -1);
  g.cell_last.assign(static_cast<std::size_t>(spec.n_cells), -1);
  for (std::size_t i = 0; i < g.fine_index.size(); ++i) {
    const long f = g.fine_index[i];
    if (f % g.fine_per_cell != 0) continue;
    const long c = f / g.fine_per_cell;
    if (c < spec.n_cells) g.cell_first[static_cast<std::size_t>(c)] = static_cast<int>(i);
    if (c > 0) g.cell_last[static_cast<std::size_t>(c - 1)] = static_cast<int>(i);
  }
  return g;
}

double FlowTable::value(int j, double t) const {
  const auto& ts = grid.t;
  if (t <= ts.front()) return phi(j, 0);
  if (t >= ts.back()) return phi(j, static_cast<Eigen::Index>(ts.size() - 1));
  const auto it = std::upper_bound(ts.begin(), ts.end(), t);
  const auto i = static_cast<Eigen::Index>(it - ts.begin());
  const double w = (t - ts[static_cast<std::size_t>(i - 1)]) /
                   (ts[static_cast<std::size_t>(i)] - ts[static_cast<std::size_t>(i - 1)]);
  return (1.0 - w) * phi(j, i - 1) + w * phi(j, i);
}

std::string FlowTable::to_csv() const {
  std::string out = "j,eta_j";
  char buf[48];
  for (double t : grid.t) {
    std::snprintf(buf, sizeof buf, ",%.12e", t);
    out += buf;
  }
  out += '\n';
  for (Eigen::Index j = 0; j < phi.rows(); ++j) {
    std::snprintf(buf, sizeof buf, "%ld,%.12e", static_cast<long>(j + 1), eta(j));
    out += buf;
    for (Eigen::Index i = 0; i < phi.cols(); ++i) {
      std::snprintf(buf, sizeof buf, ",%.12e", phi(j, i));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

FlowTable build_flow_table(const ExpPolyFn& m, const EigenBasis& basis, const GridSpec& spec,
                           FlowMethod method, int order, int j_max) {
  FlowTable table;
  table.eta = basis.eta;
  table.grid = make_time_grid(spec, basis.eta.maxCoeff());
  const int J = basis.size();
  const int nodes = table.grid.size();
  table.phi.resize(J, nodes);
  switch (method) {
    case FlowMethod::Volterra: {
      table.method = "volterra";
      const VolterraScheme scheme(m, table.grid.h_fine);
      parallel_for(static_cast<std::size_t>(J), [&](std::size_t j) {
        const auto y = scheme.solve(basis.eta(static_cast<Eigen::Index>(j)), table.grid.n_fine);
        for (int i = 0; i < nodes; ++i)
          table.phi(static_cast<Eigen::Index>(j), i) =
              y[static_cast<std::size_t>(table.grid.fine_index[static_cast<std::size_t>(i)])];
      });
      break;
    }
    case FlowMethod::KernelRep: {
      table.method = "kernel_rep";
      const auto k0 = km_partial(m, 0, j_max, std::max(2.0, spec.T));
      parallel_for(static_cast<std::size_t>(J), [&](std::size_t j) {
        for (int i = 0; i < nodes; ++i)
          table.phi(static_cast<Eigen::Index>(j), i) =
              kernel_rep_mode(k0, basis.eta(static_cast<Eigen::Index>(j)),
                              table.grid.t[static_cast<std::size_t>(i)]);
      });
      break;
    }
    case FlowMethod::Decomposition: {
      table.method = "decomposition(" + std::to_string(order) + ")";
      const DecompositionModel model(m, order, j_max, std::max(2.0, spec.T));
      parallel_for(static_cast<std::size_t>(J), [&](std::size_t j) {
        for (int i = 0; i < nodes; ++i) {
          const double t = table.grid.t[static_cast<std::size_t>(i)];
          table.phi(static_cast<Eigen::Index>(j), i) =
              t == 0.0 ? 1.0 : model.eval(basis.eta(static_cast<Eigen::Index>(j)), t).sum;
        }
      });
      break;
    }
  }
  return table;
}

SpectralVec flow_apply(const FlowTable& table, int t_index, const SpectralVec& y0) {
  if (y0.size() != table.modes()) throw std::invalid_argument("flow_apply: size mismatch");
  return {table.phi.col(t_index).cwiseProduct(y0.coeffs), y0.s};
}

// ---------------------------------------------------------------------------
// Forced problems

Eigen::MatrixXd project_control(const EigenBasis& basis, const Mask& mask, const Eigen::MatrixXd& u) {
  if (mask.n_x() != basis.grid_size() || u.rows() != mask.n_x() || u.cols() != mask.n_t())
    throw std::invalid_argument("control raster does not match mask and basis grid");
  Eigen::MatrixXd masked(u.rows(), u.cols());
  for (int c = 0; c < mask.n_t(); ++c)
    for (int i = 0; i < mask.n_x(); ++i)
      masked(i, c) = mask.at(c, i) ? basis.weights(i) * u(i, c) : 0.0;
  return basis.values.transpose() * masked;
}

ForcedTrajectory forced_solution(const ExpPolyFn& m, const EigenBasis& basis, const TimeGrid& grid,
                                 const Mask& mask, const Eigen::MatrixXd& u, const SpectralVec& y0,
                                 double tol) {
  if (mask.n_t() != grid.n_cells) throw std::invalid_argument("mask and time grid cell counts differ");
  if (y0.size() != basis.size()) throw std::invalid_argument("initial state size mismatch");
  const Eigen::MatrixXd f = project_control(basis, mask, u);
  const int J = basis.size();
  const int nodes = grid.size();
  ForcedTrajectory out;
  out.states.resize(J, nodes);
  out.duhamel.resize(J, nodes);
  out.tolerance = tol;
  const VolterraScheme scheme(m, grid.h_fine);
  const double h = grid.h_fine;
  parallel_for(static_cast<std::size_t>(J), [&](std::size_t ju) {
    const auto j = static_cast<Eigen::Index>(ju);
    std::vector<double> forcing(static_cast<std::size_t>(grid.n_fine));
    for (long n = 0; n < grid.n_fine; ++n) forcing[static_cast<std::size_t>(n)] = f(j, n / grid.fine_per_cell);
    const auto direct = scheme.solve(basis.eta(j), grid.n_fine, y0.coeffs(j), forcing);
    const auto prop = scheme.solve(basis.eta(j), grid.n_fine, 1.0);
    // cumulative trapezoid of the propagator on the fine grid
    std::vector<double> cum(prop.size(), 0.0);
    for (std::size_t k = 1; k < prop.size(); ++k) cum[k] = cum[k - 1] + 0.5 * h * (prop[k - 1] + prop[k]);
    for (int i = 0; i < nodes; ++i) {
      const long ni = grid.fine_index[static_cast<std::size_t>(i)];
      out.states(j, i) = direct[static_cast<std::size_t>(ni)];
      double acc = prop[static_cast<std::size_t>(ni)] * y0.coeffs(j);
      for (int c = 0; c < grid.n_cells; ++c) {
        const long a = c * grid.fine_per_cell;
        if (a >= ni) break;
        const long b = std::min(a + grid.fine_per_cell, ni);
        acc += f(j, c) * (cum[static_cast<std::size_t>(ni - a)] - cum[static_cast<std::size_t>(ni - b)]);
      }
      out.duhamel(j, i) = acc;
    }
  });
  out.discrepancy = (out.states - out.duhamel).cwiseAbs().maxCoeff();
  out.flagged = out.discrepancy > tol;
  return out;
}

// ---------------------------------------------------------------------------

std::vector<CrossValidation> cross_validate(const ExpPolyFn& m, const std::string& label, int mode,
                                            double eta, double t_end, double dt, int n_order,
                                            int samples) {
  const long base = samples * static_cast<long>(std::ceil(t_end / dt / samples - 1e-9));
  const auto k0 = km_partial(m, 0, 40, std::max(2.0, t_end));
  const DecompositionModel model(m, n_order, 40, std::max(2.0, t_end));
  std::vector<double> ts, kr, dc;
  for (int k = 1; k <= samples; ++k) {
    const double t = t_end * k / samples;
    ts.push_back(t);
    kr.push_back(kernel_rep_mode(k0, eta, t));
    dc.push_back(model.eval(eta, t).sum);
  }
  double err_k[3], err_d[3];
  for (int level = 0; level < 3; ++level) {
    const long n = base << level;
    const auto y = volterra_mode(m, eta, t_end, n, 1.0);
    err_k[level] = err_d[level] = 0.0;
    for (int k = 1; k <= samples; ++k) {
      const double v = y[static_cast<std::size_t>(n / samples * k)];
      err_k[level] = std::max(err_k[level], std::abs(v - kr[static_cast<std::size_t>(k - 1)]));
      err_d[level] = std::max(err_d[level], std::abs(v - dc[static_cast<std::size_t>(k - 1)]));
    }
  }
  auto order = [](const double* e) {
    return std::min(std::log2(e[0] / e[1]), std::log2(e[1] / e[2]));
  };
  double kd = 0.0;
  for (std::size_t k = 0; k < ts.size(); ++k) kd = std::max(kd, std::abs(kr[k] - dc[k]));
  const double h = t_end / static_cast<double>(base);
  return {{label, mode, "volterra-kernel_rep", err_k[0], h, order(err_k)},
          {label, mode, "volterra-decomposition(" + std::to_string(n_order) + ")", err_d[0], h,
           order(err_d)},
          {label, mode, "kernel_rep-decomposition(" + std::to_string(n_order) + ")", kd, h,
           std::numeric_limits<double>::quiet_NaN()}};
}

}  // namespace memflow
