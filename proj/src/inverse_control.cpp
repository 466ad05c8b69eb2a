#include "memflow/inverse_control.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

#include <Eigen/Eigenvalues>

#include "memflow/geometry.hpp"
#include "memflow/parallel.hpp"

namespace memflow {

namespace {

int node_at(const TimeGrid& grid, double t) {
  for (int i = 0; i < grid.size(); ++i)
    if (std::abs(grid.t[static_cast<std::size_t>(i)] - t) <= 1e-12 * std::max(1.0, t)) return i;
  throw std::invalid_argument("time " + std::to_string(t) + " is not a grid node");
}

int cell_count(const TimeGrid& grid, double t) {
  const double r = t / grid.cell_width();
  if (std::abs(r - std::round(r)) > 1e-9 * std::max(1.0, r) || r < 0.5 || r > grid.n_cells + 1e-9)
    throw std::invalid_argument("horizon must be a positive cell boundary within the grid");
  return static_cast<int>(std::lround(r));
}

Eigen::MatrixXd pattern_matrix(const EigenBasis& basis, const Mask& mask, int c) {
  Eigen::VectorXd w(mask.n_x());
  for (int i = 0; i < mask.n_x(); ++i) w(i) = mask.at(c, i) ? basis.weights(i) : 0.0;
  return basis.values.transpose() * w.asDiagonal() * basis.values;
}

}  // namespace

// ---------------------------------------------------------------------------
// Reconstruction

double Observation::norm(const EigenBasis& basis) const {
  double acc = 0.0;
  for (std::size_t k = 0; k < columns.size(); ++k)
    acc += weights[k] * values.col(static_cast<Eigen::Index>(k)).cwiseAbs2().dot(basis.weights);
  return std::sqrt(acc);
}

Observation observe(const ObsSetup& setup, const Eigen::VectorXd& y0) {
  const auto& grid = setup.table.grid;
  const auto& mask = setup.mask;
  if (y0.size() != setup.basis.size()) throw std::invalid_argument("observe: size mismatch");
  if (mask.n_t() != grid.n_cells || mask.n_x() != setup.basis.grid_size())
    throw std::invalid_argument("observe: mask does not match grid and basis");
  const int c_lo = cell_count(grid, std::max(setup.S, 0.0) + grid.cell_width()) - 1;
  const int c_hi = cell_count(grid, setup.horizon());
  Observation out;
  for (int c = c_lo; c < c_hi; ++c) {
    bool any = false;
    for (int i = 0; i < mask.n_x() && !any; ++i) any = mask.at(c, i);
    if (!any) continue;
    const int first = grid.cell_first[static_cast<std::size_t>(c)];
    const int last = grid.cell_last[static_cast<std::size_t>(c)];
    for (int i = first; i <= last; ++i) {
      const double lo = i > first ? grid.t[static_cast<std::size_t>(i)] - grid.t[static_cast<std::size_t>(i - 1)] : 0.0;
      const double hi = i < last ? grid.t[static_cast<std::size_t>(i + 1)] - grid.t[static_cast<std::size_t>(i)] : 0.0;
      out.columns.push_back(i);
      out.cells.push_back(c);
      out.weights.push_back(0.5 * (lo + hi));
    }
  }
  out.values.resize(mask.n_x(), static_cast<Eigen::Index>(out.columns.size()));
  for (std::size_t k = 0; k < out.columns.size(); ++k) {
    Eigen::VectorXd f = setup.basis.values * setup.table.phi.col(out.columns[k]).cwiseProduct(y0);
    for (int i = 0; i < mask.n_x(); ++i)
      if (!mask.at(out.cells[k], i)) f(i) = 0.0;
    out.values.col(static_cast<Eigen::Index>(k)) = f;
  }
  return out;
}

double add_noise(const ObsSetup& setup, Observation& data, double level, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Observation noise = data;
  for (std::size_t k = 0; k < data.columns.size(); ++k)
    for (int i = 0; i < setup.mask.n_x(); ++i)
      noise.values(i, static_cast<Eigen::Index>(k)) = setup.mask.at(data.cells[k], i) ? normal(rng) : 0.0;
  const double n0 = noise.norm(setup.basis);
  if (!(n0 > 0.0)) return 0.0;
  const double scale = level * data.norm(setup.basis) / n0;
  data.values += scale * noise.values;
  return scale * n0;
}

double relative_hs_error(const Eigen::VectorXd& eta, const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth,
                         double s) {
  return hs_norm(eta, estimate - truth, s) / hs_norm(eta, truth, s);
}

std::string Reconstruction::to_json() const {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "{\"lambda\": %.17g, \"residual\": %.17g, \"rel_error_if_truth_known\": %.17g, \"sigma_min\": %.17g}",
                lambda, residual, rel_error, sigma_min);
  return buf;
}

Reconstruction reconstruct_y0(const ReconstructionProblem& problem) {
  if (problem.setup == nullptr) throw std::invalid_argument("reconstruct_y0: missing setup");
  const ObsSetup& setup = *problem.setup;
  const auto& basis = setup.basis;
  const auto& data = problem.data;
  const int J = basis.size();
  if (problem.lambda < 0.0) throw std::invalid_argument("reconstruct_y0: lambda must be >= 0");
  for (std::size_t k = 0; k < data.columns.size(); ++k)
    for (int i = 0; i < setup.mask.n_x(); ++i)
      if (!setup.mask.at(data.cells[k], i) && data.values(i, static_cast<Eigen::Index>(k)) != 0.0)
        throw std::invalid_argument("reconstruct_y0: data must vanish outside the mask");

  // normal equations in b = eta^{-2} a, where ||a||_{H^-4} = |b|
  const Eigen::VectorXd d = basis.eta.array().square().matrix();
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(J, J);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(J);
  int cached_cell = -1;
  Eigen::MatrixXd B;
  for (std::size_t k = 0; k < data.columns.size(); ++k) {
    if (data.cells[k] != cached_cell) {
      cached_cell = data.cells[k];
      B = pattern_matrix(basis, setup.mask, cached_cell);
    }
    const Eigen::VectorXd p = setup.table.phi.col(data.columns[k]).cwiseProduct(d);
    G.noalias() += data.weights[k] * (p.asDiagonal() * B * p.asDiagonal());
    rhs += data.weights[k] *
           p.cwiseProduct(basis.values.transpose() * data.values.col(static_cast<Eigen::Index>(k)).cwiseProduct(basis.weights));
  }
  G = (0.5 * (G + G.transpose())).eval();
  const double d2 = std::pow(data.norm(basis), 2);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double top = std::max(ev(J - 1), 0.0);
  Reconstruction out;
  out.sigma_min = std::sqrt(std::max(ev(0), 0.0));
  const Eigen::VectorXd r = es.eigenvectors().transpose() * rhs;

  auto solve = [&](double lambda, Eigen::VectorXd& b) {
    b = es.eigenvectors() * (r.array() / (ev.array() + lambda)).matrix();
    const double misfit = d2 - 2.0 * b.dot(rhs) + b.dot(G * b);
    return std::sqrt(std::max(misfit, 0.0));
  };

  Eigen::VectorXd b;
  if (problem.noise >= 0.0) {
    double lambda = 1e-14 * std::max(top, 1e-300);
    for (int trial = 0; trial < 60; ++trial) {
      out.residual = solve(lambda, b);
      out.lambda = lambda;
      out.lambda_trials = trial + 1;
      if (out.residual >= 0.9 * problem.noise) break;
      lambda *= 10.0;
    }
  } else {
    if (problem.lambda == 0.0 && !(ev(0) > 1e-14 * top)) {
      const Eigen::VectorXd null_dir = d.cwiseProduct(es.eigenvectors().col(0));
      Eigen::Index worst = 0;
      null_dir.cwiseAbs().maxCoeff(&worst);
      throw SingularSystemError("reconstruct_y0: observation Gram is singular (null direction dominated by mode " +
                                    std::to_string(worst + 1) + "); use lambda > 0",
                                null_dir);
    }
    out.lambda = problem.lambda;
    out.residual = solve(problem.lambda, b);
    out.lambda_trials = 1;
  }
  out.y0 = SpectralVec{d.cwiseProduct(b), -4.0};
  return out;
}

// ---------------------------------------------------------------------------
// Control

ControlMap::ControlMap(const ExpPolyFn& m, const EigenBasis& basis, const TimeGrid& grid, const Mask& mask,
                       double horizon)
    : n_x_(mask.n_x()), n_t_(mask.n_t()) {
  if (mask.n_t() != grid.n_cells || mask.n_x() != basis.grid_size())
    throw std::invalid_argument("control map: mask does not match grid and basis");
  cells_ = cell_count(grid, horizon);
  for (int i = 0; i < mask.n_x(); ++i)
    for (int c = 0; c < cells_; ++c)
      if (mask.at(c, i)) entries_.emplace_back(i, c);
  const int J = basis.size();
  const long fpc = grid.fine_per_cell;
  const long N = fpc * cells_;
  const VolterraScheme scheme(m, grid.h_fine);
  // response at T̂ to unit forcing on cell c is Z(N - c fpc), by shift invariance
  Eigen::MatrixXd Z(J, cells_);
  final_.resize(J);
  const std::vector<double> unit(static_cast<std::size_t>(fpc), 1.0);
  parallel_for(static_cast<std::size_t>(J), [&](std::size_t ju) {
    const auto j = static_cast<Eigen::Index>(ju);
    std::vector<double> forcing(static_cast<std::size_t>(N), 0.0);
    std::fill(forcing.begin(), forcing.begin() + fpc, 1.0);
    const auto z = scheme.solve(basis.eta(j), N, 0.0, forcing);
    for (int c = 0; c < cells_; ++c) Z(j, c) = z[static_cast<std::size_t>(N - c * fpc)];
    final_(j) = scheme.solve(basis.eta(j), N, 1.0).back();
  });
  L_.resize(J, static_cast<Eigen::Index>(entries_.size()));
  w_.resize(static_cast<Eigen::Index>(entries_.size()));
  for (std::size_t k = 0; k < entries_.size(); ++k) {
    const auto [i, c] = entries_[k];
    const auto col = static_cast<Eigen::Index>(k);
    L_.col(col) = basis.weights(i) * Z.col(c).cwiseProduct(basis.values.row(i).transpose());
    w_(col) = basis.weights(i) * grid.cell_width();
  }
}

Eigen::MatrixXd ControlMap::raster(const Eigen::VectorXd& v) const {
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(n_x_, n_t_);
  for (std::size_t k = 0; k < entries_.size(); ++k) u(entries_[k].first, entries_[k].second) = v(static_cast<Eigen::Index>(k));
  return u;
}

double control_l2_norm(const Mask& mask, const Eigen::MatrixXd& u) {
  return std::sqrt(u.cwiseAbs2().sum() * mask.dx() * mask.dt());
}

namespace {

// min Σ s_k^2 v_k^2 subject to L v = r
Eigen::VectorXd weighted_least_norm(const Eigen::MatrixXd& L, const Eigen::VectorXd& s, const Eigen::VectorXd& r) {
  const Eigen::MatrixXd At = (L * s.cwiseInverse().asDiagonal()).transpose();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(At);
  // At = Q R P^T, so A z = r  <=>  P R^T Q^T z = r
  const Eigen::Index rank = qr.rank();
  const Eigen::VectorXd pr = qr.colsPermutation().transpose() * r;
  Eigen::VectorXd y = qr.matrixR().topLeftCorner(rank, rank).transpose().triangularView<Eigen::Lower>().solve(pr.head(rank));
  Eigen::VectorXd full = Eigen::VectorXd::Zero(At.rows());
  full.head(rank) = y;
  const Eigen::VectorXd z = qr.householderQ() * full;
  return z.cwiseQuotient(s);
}

}  // namespace

std::vector<Eigen::VectorXd> null_space_directions(const ControlMap& map, int count, std::uint64_t seed) {
  const Eigen::VectorXd s = map.norm_weights().cwiseSqrt();
  const Eigen::MatrixXd A = map.matrix() * s.cwiseInverse().asDiagonal();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A.transpose());
  const Eigen::Index rank = qr.rank();
  const Eigen::MatrixXd Q = qr.householderQ();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::VectorXd> out;
  const Eigen::Index n = A.cols();
  for (int k = 0; k < count; ++k) {
    Eigen::VectorXd g(n);
    for (Eigen::Index q = 0; q < n; ++q) g(q) = normal(rng);
    // remove the row-space component
    g -= Q.leftCols(rank) * (Q.leftCols(rank).transpose() * g);
    out.push_back((g / g.norm()).cwiseQuotient(s));
  }
  return out;
}

std::string ControlResult::to_csv(const Mask& mask) const {
  std::string out = "t_i,x_cell,u_value\n";
  char buf[96];
  for (int c = 0; c < mask.n_t(); ++c)
    for (int i = 0; i < mask.n_x(); ++i)
      if (mask.at(c, i)) {
        std::snprintf(buf, sizeof buf, "%.12e,%d,%.12e\n", mask.t_mid(c), i, u(i, c));
        out += buf;
      }
  return out;
}

ControlResult min_norm_control(const ControlProblem& p) {
  if (p.norm == ControlNorm::WeightedLinf && !(p.alpha > 1.0))
    throw std::invalid_argument("weighted control regime requires alpha > 1");
  if (p.y0.size() != p.basis.size() || p.target.size() != p.basis.size())
    throw std::invalid_argument("min_norm_control: state size mismatch");
  const ControlMap map(p.m, p.basis, p.grid, p.mask, p.horizon);
  const Eigen::VectorXd r = p.target.coeffs - map.free_response(p.y0.coeffs);
  ControlResult out;
  out.moc = moc_functional(p.mask, 0.0, p.horizon);
  out.target_h4 = hs_norm(p.basis.eta, p.target.coeffs, 4.0);
  const Eigen::VectorXd w = map.norm_weights();
  Eigen::VectorXd v;
  if (map.unknowns() == 0) {
    v = Eigen::VectorXd::Zero(0);
  } else if (p.norm == ControlNorm::L2) {
    v = weighted_least_norm(map.matrix(), w.cwiseSqrt(), r);
    out.iterations = 1;
  } else {
    // Lawson's iteration: weighted least squares with multiplicative updates of
    // simplex weights q_c; min_u Σ q_c f_c(u)^2 bounds the minimax value from below.
    const int cells = map.horizon_cells();
    const double dt = p.grid.cell_width();
    Eigen::VectorXd rho(cells);
    for (int c = 0; c < cells; ++c) rho(c) = std::pow(p.horizon - (c + 0.5) * dt, -p.alpha);
    auto weighted_norms = [&](const Eigen::VectorXd& x) {
      Eigen::VectorXd nrm = Eigen::VectorXd::Zero(cells);
      for (std::size_t k = 0; k < map.entries().size(); ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        nrm(map.entries()[k].second) += w(kk) / dt * x(kk) * x(kk);
      }
      return nrm.cwiseSqrt().cwiseProduct(rho).eval();
    };
    Eigen::VectorXd q = Eigen::VectorXd::Constant(cells, 1.0 / cells);
    double best_sup = std::numeric_limits<double>::infinity();
    double lower = 0.0;
    for (int it = 0; it < 2000; ++it) {
      Eigen::VectorXd s(map.unknowns());
      const double scale = (q.array() * rho.array().square()).maxCoeff();
      for (std::size_t k = 0; k < map.entries().size(); ++k) {
        const int c = map.entries()[k].second;
        const auto kk = static_cast<Eigen::Index>(k);
        s(kk) = std::sqrt(w(kk) / dt * std::max(q(c) * rho(c) * rho(c) / scale, 1e-30));
      }
      const Eigen::VectorXd x = weighted_least_norm(map.matrix(), s, r);
      ++out.iterations;
      const Eigen::VectorXd f = weighted_norms(x);
      const double sup = f.maxCoeff();
      lower = std::max(lower, std::sqrt(q.dot(f.cwiseAbs2())));
      if (sup < best_sup) {
        best_sup = sup;
        v = x;
      }
      if (!(sup > 0.0) || best_sup <= lower * (1.0 + 1e-4)) break;
      q = q.cwiseProduct(f);
      q /= q.sum();
    }
    out.weighted_sup = std::isfinite(best_sup) ? best_sup : 0.0;
    out.objective = lower;
  }
  out.values = v;
  out.u = map.raster(v);
  const Eigen::VectorXd predicted = map.matrix() * v + map.free_response(p.y0.coeffs);
  out.map_error = (predicted - p.target.coeffs).norm();

  const auto traj = forced_solution(p.m, p.basis, p.grid, p.mask, out.u, p.y0);
  const int node = node_at(p.grid, p.horizon);
  out.final_state = traj.states.col(node);
  out.final_error = (out.final_state - p.target.coeffs).norm();
  out.replay_discrepancy = (out.final_state - predicted).cwiseAbs().maxCoeff();
  out.duhamel_discrepancy = traj.discrepancy;
  out.norm = p.norm == ControlNorm::L2 ? std::sqrt(v.cwiseAbs2().dot(w)) : out.weighted_sup;
  if (p.norm == ControlNorm::L2) out.objective = out.norm;
  if (out.replay_discrepancy > p.replay_tol * std::max(1.0, p.target.coeffs.cwiseAbs().maxCoeff()))
    throw ReplayError("control replay disagrees with the control map", out.replay_discrepancy);
  return out;
}

ReachableReport reachable_difference_check(const ExpPolyFn& m, const EigenBasis& basis, const TimeGrid& grid,
                                           const Mask& mask, const SpectralVec& y0, const Eigen::MatrixXd& u,
                                           double horizon) {
  const int node = node_at(grid, horizon);
  const auto with = forced_solution(m, basis, grid, mask, u, y0);
  const auto without = forced_solution(ExpPolyFn::zero(), basis, grid, mask, u, y0);
  ReachableReport rep;
  rep.f = with.states.col(node) - without.states.col(node);
  double acc = 0.0;
  for (int j = 0; j < basis.size(); ++j) {
    acc += rep.f(j) * rep.f(j) * std::pow(basis.eta(j), 4);
    rep.partial.push_back(acc);
  }
  const std::size_t J = rep.partial.size();
  const std::size_t q = (3 * J) / 4;
  if (q >= 1 && rep.partial[q - 1] > 0.0)
    rep.last_quartile_growth = (rep.partial[J - 1] - rep.partial[q - 1]) / rep.partial[q - 1];
  return rep;
}

// ---------------------------------------------------------------------------
// Duality

DualityReport duality_range_test(const Eigen::MatrixXd& R, const Eigen::MatrixXd& O, const Eigen::MatrixXd& xs,
                                 double tol) {
  if (R.cols() != O.cols()) throw std::invalid_argument("duality: R and O must act on the same space");
  DualityReport rep;
  const Eigen::MatrixXd Ot = O.transpose();
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Ot);
  const Eigen::MatrixXd S = cod.pseudoInverse() * R.transpose();  // x* -> least-norm y*
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(S, Eigen::ComputeThinV);
  rep.c2_exact = svd.singularValues().size() ? svd.singularValues()(0) : 0.0;

  // forward constant: sup ||Rz|| / ||Oz||, infinite if ker O is not inside ker R
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod_o(O);
  const Eigen::MatrixXd ker_leak = R - R * cod_o.pseudoInverse() * O;
  if (ker_leak.norm() > 1e-10 * std::max(1.0, R.norm())) {
    rep.c1 = std::numeric_limits<double>::infinity();
  } else {
    Eigen::JacobiSVD<Eigen::MatrixXd> f(R * cod_o.pseudoInverse());
    rep.c1 = f.singularValues().size() ? f.singularValues()(0) : 0.0;
  }

  Eigen::MatrixXd samples = xs;
  if (samples.size() == 0) {
    samples = Eigen::MatrixXd::Identity(R.rows(), R.rows());
    if (svd.matrixV().cols() > 0) {
      samples.conservativeResize(Eigen::NoChange, samples.cols() + 1);
      samples.col(samples.cols() - 1) = svd.matrixV().col(0);
    }
  }
  for (Eigen::Index k = 0; k < samples.cols(); ++k) {
    const Eigen::VectorXd x = samples.col(k);
    const Eigen::VectorXd rhs = R.transpose() * x;
    const Eigen::VectorXd y = cod.solve(rhs);
    const double res = (Ot * y - rhs).norm() / std::max(rhs.norm(), 1e-300);
    rep.residuals.push_back(res);
    rep.max_residual = std::max(rep.max_residual, res);
    const double ratio = y.norm() / x.norm();
    rep.ratios.push_back(ratio);
    rep.c2 = std::max(rep.c2, ratio);
  }
  if (rep.max_residual > tol)
    throw std::runtime_error("duality: adjoint range equation is inconsistent (residual " +
                             std::to_string(rep.max_residual) + "); the forward inequality fails");
  return rep;
}

Eigen::MatrixXd observation_map(const ObsOperator& op) {
  const Eigen::VectorXd d = op.eta().array().pow(-0.5 * op.ref_exponent()).matrix();
  Eigen::MatrixXd G = d.asDiagonal() * op.gram() * d.asDiagonal();
  G = (0.5 * (G + G.transpose())).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace memflow
