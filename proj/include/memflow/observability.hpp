#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "memflow/flow.hpp"
#include "memflow/geometry.hpp"
#include "memflow/spectral.hpp"

namespace memflow {

struct ObsSetup {
  EigenBasis basis;
  FlowTable table;
  Mask mask;
  std::optional<double> alpha;  // weight exponent of t^alpha
  double S = 0.0;
  double T = -1.0;              // < 0: the table horizon
  double ref_exponent = -4.0;   // reference norm H^{ref}
  bool force_weight = false;    // keep t^alpha on windows with S > 0

  double horizon() const { return T < 0.0 ? table.grid.T : T; }
  /// Exponent actually applied: alpha on [0,T] windows, 0 on (S,T) unless forced.
  double weight_exponent() const;
};

/// Discretized observation y0 -> χ_Q Φ(t) y0 with its quadrature. Built once
/// per setup; evaluation cost is O(nodes J^2).
class ObsOperator {
 public:
  explicit ObsOperator(const ObsSetup& setup);

  int modes() const { return static_cast<int>(eta_.size()); }
  const Eigen::VectorXd& eta() const { return eta_; }
  /// ∫_S^T ||χ_Q(t) Φ(t) a||_{L2} t^alpha dt.
  double seminorm(const Eigen::VectorXd& a) const;
  /// Value and a (sub)gradient with respect to a.
  double seminorm(const Eigen::VectorXd& a, Eigen::VectorXd& grad) const;
  /// ∫ t^{2 alpha} φ_j φ_k <χ_Q e_j, χ_Q e_k> dt.
  const Eigen::MatrixXd& gram() const { return gram_; }
  /// diag(eta_j^{ref})
  Eigen::VectorXd ref_weights() const;
  double ref_exponent() const { return ref_; }
  /// φ_j(T) at the window end.
  const Eigen::VectorXd& final_flow() const { return final_; }

 private:
  struct Node {
    int column;     // index into table columns
    double weight;  // trapezoid weight times t^alpha
  };
  struct Cell {
    int pattern;
    std::vector<Node> nodes;
  };
  Eigen::VectorXd eta_;
  Eigen::MatrixXd phi_;
  std::vector<Eigen::MatrixXd> patterns_;  // distinct spatial mass matrices <χ e_j, χ e_k>
  std::vector<Cell> cells_;
  Eigen::MatrixXd gram_;
  Eigen::VectorXd final_;
  double ref_;
};

double obs_seminorm(const ObsSetup& setup, const SpectralVec& y0);
Eigen::MatrixXd gram_matrix(const ObsSetup& setup);

struct OptimizerOptions {
  int starts = 32;
  int max_iter = 400;
  std::uint64_t seed = 12345;
};

struct ObsReport {
  double c_lower = 0.0;
  double c_upper = 0.0;
  Eigen::VectorXd lower_witness;  // unit in the reference norm
  Eigen::VectorXd upper_witness;
  double surrogate_lower = 0.0;  // sqrt of extreme generalized Gram eigenvalues
  double surrogate_upper = 0.0;
  double restart_spread = 0.0;   // relative gap between best and 25th-percentile restart
  int starts = 0;
  std::vector<double> restart_values;
};

/// min / max of obs_seminorm on the unit sphere of the reference norm.
ObsReport two_sided_constants(const ObsSetup& setup, const OptimizerOptions& opt = {});
ObsReport two_sided_constants(const ObsOperator& op, const OptimizerOptions& opt = {});

struct NullReport {
  double constant = 0.0;
  bool unbounded = false;
  Eigen::VectorXd witness;  // unit in the reference norm
  double surrogate = 0.0;
  double witness_observation = 0.0;
};

/// max of ||Φ(T) y0||_{L2} / obs_seminorm(y0).
NullReport null_obs_constant(const ObsSetup& setup, const OptimizerOptions& opt = {});
NullReport null_obs_constant(const ObsOperator& op, const OptimizerOptions& opt = {});

struct RelaxedFit {
  double C = 0.0;
  double residual = 0.0;  // (sampled - refined) / sampled
  double sampled = 0.0;
  int samples = 0;
};

/// Largest C with C ||y0||_{H^ref} <= obs(y0) + ||y0||_{H^{ref-2}} on a sampled sphere.
RelaxedFit relaxed_inequality_fit(const ObsSetup& setup, const OptimizerOptions& opt = {});
RelaxedFit relaxed_inequality_fit(const ObsOperator& op, const OptimizerOptions& opt = {});

struct UniqueContinuation {
  int rank = 0;
  double sigma_min = 0.0;
};
UniqueContinuation unique_continuation_rank(const ObsSetup& setup);
UniqueContinuation unique_continuation_rank(const ObsOperator& op);

// ---------------------------------------------------------------------------
// Probes

struct ProbePoint {
  int k = 0;
  int modes = 0;
  double quotient = 0.0;
  double numerator = 0.0;
  double denominator = 0.0;
};

struct ProbeTrajectory {
  std::vector<ProbePoint> points;
  double spread() const;  // max / min quotient
  std::string to_csv() const;
};

/// Polynomial bump (1 - u^2)^4, u = (x - center) / half_width, on the grid.
Eigen::VectorXd bump_profile(const Eigen::VectorXd& x, double center, double half_width);

struct AlphaProbeOptions {
  std::vector<int> ks{1, 2, 4, 8, 16, 32};
  double center = 0.5;      // bump center inside omega
  double half_width = 0.25; // width at k = 1; shrinks like 1/k
  int modes_per_k = 4;      // J(k) = min(J, modes_per_k * k + base)
  int base_modes = 4;
};

/// k -> obs_seminorm(y_k) / ||y_k||_{H^ref} for bumps concentrating as k grows.
ProbeTrajectory alpha_probe(const ObsSetup& setup, const AlphaProbeOptions& opt = {});

struct BallProbeOptions {
  std::vector<int> ks{2, 4, 8, 16, 32};
  double center = 0.5;
  double radius = 0.2;
  int power = -1;  // J in z_k = A^{J+1} w_k; < 0: first_nonzero_h_index
  int profile_power = 4;  // w_k profile (1 - u^2)^profile_power
};

struct BallProbe {
  ProbeTrajectory trajectory;
  int h_index = 0;
  double h_value = 0.0;                  // |h_J(T)|
  std::vector<double> final_norm_ratio;  // ||Φ(T) z_k|| / |h_J(T)|
  bool width_warning = false;
};

/// k -> ||Φ(T) z_k|| / obs_seminorm(z_k) with z_k = A^{J+1} w_k, w_k a bump in B(x*, r/2).
BallProbe missing_ball_probe(const ObsSetup& setup, const ExpPolyFn& m, const BallProbeOptions& opt = {});

struct HeatProbeOptions {
  double center = 0.5;
  double radius = 0.2;
  std::vector<double> s_values{0.0, -2.0, -4.0};
  std::vector<double> widths{0.1, 0.05, 0.025, 0.0125};  // bump half widths (<= r/2)
  std::vector<double> times;  // empty: 0 and a log-spaced set up to 1
};

struct HeatProbe {
  std::vector<double> s_values;
  std::vector<std::vector<double>> ratio;  // [s][width] sup over t
};

/// sup_t ||e^{tA} z||_{L2(Ω \ B(x0,r))} / ||z||_{H^s} for bumps in B(x0, r/2).
HeatProbe heat_local_probe(const EigenBasis& basis, const HeatProbeOptions& opt = {});

}  // namespace memflow
