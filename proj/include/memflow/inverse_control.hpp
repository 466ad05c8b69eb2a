#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "memflow/observability.hpp"

namespace memflow {

class SingularSystemError : public std::runtime_error {
 public:
  SingularSystemError(const std::string& msg, Eigen::VectorXd null_direction)
      : std::runtime_error(msg), null_direction_(std::move(null_direction)) {}
  const Eigen::VectorXd& null_direction() const { return null_direction_; }

 private:
  Eigen::VectorXd null_direction_;
};

class ReplayError : public std::runtime_error {
 public:
  ReplayError(const std::string& msg, double mismatch) : std::runtime_error(msg), mismatch_(mismatch) {}
  double mismatch() const { return mismatch_; }

 private:
  double mismatch_;
};

// ---------------------------------------------------------------------------
// Reconstruction

/// Masked observation samples: values(:, k) is the spatial profile at node
/// columns[k] of the flow table, zero outside the mask.
struct Observation {
  std::vector<int> columns;
  std::vector<int> cells;
  std::vector<double> weights;  // trapezoid weights in time
  Eigen::MatrixXd values;       // n_x x samples

  /// sqrt(Σ_k w_k Σ_x dx |values|^2)
  double norm(const EigenBasis& basis) const;
};

/// χ_Q Φ(t_k) y0 sampled on the setup window.
Observation observe(const ObsSetup& setup, const Eigen::VectorXd& y0);
/// Adds Gaussian noise on the in-mask entries, scaled to relative size `level`.
/// Returns the absolute noise norm.
double add_noise(const ObsSetup& setup, Observation& data, double level, std::uint64_t seed);

struct ReconstructionProblem {
  const ObsSetup* setup = nullptr;
  Observation data;
  double lambda = 0.0;
  double noise = -1.0;  // >= 0: pick lambda by the discrepancy principle
};

struct Reconstruction {
  SpectralVec y0;
  double lambda = 0.0;
  double residual = 0.0;
  double sigma_min = 0.0;
  double rel_error = -1.0;  // filled by callers that know the truth
  int lambda_trials = 0;

  std::string to_json() const;
};

Reconstruction reconstruct_y0(const ReconstructionProblem& problem);
double relative_hs_error(const Eigen::VectorXd& eta, const Eigen::VectorXd& estimate,
                         const Eigen::VectorXd& truth, double s = -4.0);

// ---------------------------------------------------------------------------
// Control

enum class ControlNorm { L2, WeightedLinf };

struct ControlProblem {
  ExpPolyFn m;
  EigenBasis basis;
  TimeGrid grid;
  Mask mask;
  double horizon = 1.0;  // T̂, a cell boundary
  SpectralVec y0;
  SpectralVec target;    // tagged s = 4
  ControlNorm norm = ControlNorm::L2;
  double alpha = 2.0;    // weight (T̂ - t)^{-alpha}
  double replay_tol = 1e-6;
};

/// Linear map from in-mask control values to the final state at T̂.
class ControlMap {
 public:
  ControlMap(const ExpPolyFn& m, const EigenBasis& basis, const TimeGrid& grid, const Mask& mask,
             double horizon);

  int unknowns() const { return static_cast<int>(entries_.size()); }
  /// (x index, time cell) of each unknown
  const std::vector<std::pair<int, int>>& entries() const { return entries_; }
  const Eigen::MatrixXd& matrix() const { return L_; }
  /// Φ(T̂) y0
  Eigen::VectorXd free_response(const Eigen::VectorXd& y0) const { return final_.cwiseProduct(y0); }
  /// Quadrature weights dx * dt of the unknowns (the L2 control norm).
  const Eigen::VectorXd& norm_weights() const { return w_; }
  /// Scatter unknowns to an n_x x n_t raster (zero outside the mask).
  Eigen::MatrixXd raster(const Eigen::VectorXd& v) const;
  int horizon_cells() const { return cells_; }

 private:
  std::vector<std::pair<int, int>> entries_;
  Eigen::MatrixXd L_;
  Eigen::VectorXd final_;
  Eigen::VectorXd w_;
  int n_x_ = 0, n_t_ = 0, cells_ = 0;
};

struct ControlResult {
  Eigen::MatrixXd u;             // n_x x n_t raster
  Eigen::VectorXd values;        // unknowns
  Eigen::VectorXd final_state;   // replayed y(T̂)
  double final_error = 0.0;      // ||y(T̂) - target||_{L2}
  double map_error = 0.0;        // ||L u + Φ y0 - target||
  double replay_discrepancy = 0.0;
  double duhamel_discrepancy = 0.0;
  double norm = 0.0;             // L2 norm, or the weighted sup
  double objective = 0.0;        // final IRLS L^p objective (weighted regime)
  double weighted_sup = 0.0;     // max_c (T̂ - t_c)^{-alpha} ||u(t_c)||
  int iterations = 0;
  double moc = 0.0;
  double target_h4 = 0.0;

  /// "t_i,x_cell,u_value" rows for in-mask cells.
  std::string to_csv(const Mask& mask) const;
};

ControlResult min_norm_control(const ControlProblem& problem);

/// L2-norm of u with the raster quadrature.
double control_l2_norm(const Mask& mask, const Eigen::MatrixXd& u);
/// Orthonormal (in the control norm) basis of the null space of the reachability map,
/// restricted to `count` random directions.
std::vector<Eigen::VectorXd> null_space_directions(const ControlMap& map, int count, std::uint64_t seed);

struct ReachableReport {
  Eigen::VectorXd f;             // y(T̂; M) - y(T̂; 0)
  std::vector<double> partial;   // Σ_{j<=k} f_j^2 η_j^4
  double last_quartile_growth = 0.0;
};

ReachableReport reachable_difference_check(const ExpPolyFn& m, const EigenBasis& basis, const TimeGrid& grid,
                                           const Mask& mask, const SpectralVec& y0, const Eigen::MatrixXd& u,
                                           double horizon);

// ---------------------------------------------------------------------------
// Duality

struct DualityReport {
  double c1 = 0.0;       // sup ||Rz|| / ||Oz||
  double c2 = 0.0;       // max ||y*|| / ||x*|| over the samples
  double c2_exact = 0.0; // ||(O^T)^+ R^T||
  std::vector<double> ratios;
  std::vector<double> residuals;
  double max_residual = 0.0;
};

/// Solves O^T y* = R^T x* in the least-norm sense for every x* (columns of xs;
/// empty: a canonical sample). Throws if a system is inconsistent beyond tol.
DualityReport duality_range_test(const Eigen::MatrixXd& R, const Eigen::MatrixXd& O,
                                 const Eigen::MatrixXd& xs = {}, double tol = 1e-8);

/// Symmetric square root of the H^{-ref}-scaled L2 observation Gram: the
/// observation map in coordinates where the reference norm is Euclidean.
Eigen::MatrixXd observation_map(const ObsOperator& op);

}  // namespace memflow
