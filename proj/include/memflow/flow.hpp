#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "memflow/exp_poly.hpp"
#include "memflow/geometry.hpp"
#include "memflow/kernel.hpp"
#include "memflow/spectral.hpp"

namespace memflow {

class StepSizeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Trapezoidal convolution quadrature for y' = -eta y - (M*y) + g with a
/// constant step. The memory sum is carried by exponential moment recurrences,
/// so a run of n steps costs O(n).
class VolterraScheme {
 public:
  VolterraScheme(const ExpPolyFn& m, double dt);

  double dt() const { return dt_; }

  /// Values at steps 0..n_steps. step_forcing[n], if given, is the mean of g
  /// over step n (piecewise-constant forcing enters exactly as dt * g).
  std::vector<double> solve(double eta, long n_steps, double y0 = 1.0,
                            const std::vector<double>& step_forcing = {}) const;

 private:
  struct Group {
    std::complex<double> rho;                 // e^{lambda dt}
    std::vector<std::complex<double>> coeff;  // multiplies (k dt)^p
    double weight;                            // 2 for a conjugate pair, 1 for a real rate
  };
  std::vector<Group> groups_;
  std::vector<std::vector<double>> shift_;  // C(p,q) dt^{p-q}
  ExpPolyFn m_;
  double dt_;
  double m0_;
  bool zero_;
};

/// Propagator (or forced solution) of one mode on the uniform grid t_n = n T / n_steps.
std::vector<double> volterra_mode(const ExpPolyFn& m, double eta, double T, long n_steps,
                                  double y0 = 1.0, const std::vector<double>& step_forcing = {});

/// e^{-eta t} + ∫_0^t K_M(t,tau) e^{-eta tau} dtau. The kernel must have order 0.
double kernel_rep_mode(const BivariateKernel& k0, double eta, double t, double series_tol = 1e-10);
double kernel_rep_mode(const ExpPolyFn& m, double eta, double t, int j_max = 40);

struct DecompositionParts {
  int order = 0;
  double P = 0.0;
  double W = 0.0;
  double R = 0.0;          // R_N(t, eta)
  double remainder = 0.0;  // R_N(t, eta) eta^{-N-1}
  double sum = 0.0;
};

/// Heat-like, wave-like and remainder parts of the flow for one memory kernel
/// and a fixed order N; h_l, p_l and the kernel series are built once.
class DecompositionModel {
 public:
  DecompositionModel(const ExpPolyFn& m, int n, int j_max = 40, double t_max = 2.0);

  int order() const { return n_; }
  const std::vector<ExpPolyFn>& h() const { return h_; }
  const std::vector<ExpPolyFn>& p() const { return p_; }

  DecompositionParts eval(double eta, double t) const;
  double remainder_R(double eta, double t) const;

 private:
  int n_;
  std::vector<ExpPolyFn> h_;
  std::vector<ExpPolyFn> p_;
  BivariateKernel km_;
};

DecompositionParts decomposition_mode(const ExpPolyFn& m, double eta, double t, int n);
double remainder_RN_mode(const ExpPolyFn& m, double eta, double t, int n);

/// Output grid for flow tables. Nodes lie on a fine uniform grid of step
/// h_fine and include every cell boundary; spacing is `refine` nodes per cell
/// away from 0 and is halved level by level towards t = 0, where fast modes decay.
struct GridSpec {
  double T = 1.0;
  int n_cells = 64;
  int refine = 8;
  double dt_max = -1.0;       // fine step cap; < 0 means 1e-3 T
  double eta_dt_max = 0.25;   // fine step also keeps eta_J h_fine below this
  int nodes_per_level = 64;
};

struct TimeGrid {
  double T = 0.0;
  int n_cells = 0;
  double h_fine = 0.0;
  long n_fine = 0;              // fine steps over [0, T]
  long fine_per_cell = 0;
  std::vector<double> t;        // node times
  std::vector<long> fine_index; // node -> fine step index
  std::vector<int> cell_first;  // first node of each cell
  std::vector<int> cell_last;   // last node of each cell (shared with the next cell)

  int size() const { return static_cast<int>(t.size()); }
  double cell_width() const { return T / n_cells; }
};

TimeGrid make_time_grid(const GridSpec& spec, double eta_max);

enum class FlowMethod { Volterra, KernelRep, Decomposition };

struct FlowTable {
  Eigen::VectorXd eta;
  TimeGrid grid;
  Eigen::MatrixXd phi;  // phi(j, i) = mode j at node i
  std::string method;

  int modes() const { return static_cast<int>(phi.rows()); }
  /// Linear interpolation between nodes.
  double value(int j, double t) const;
  std::string to_csv() const;
};

FlowTable build_flow_table(const ExpPolyFn& m, const EigenBasis& basis, const GridSpec& spec,
                           FlowMethod method = FlowMethod::Volterra, int order = 4,
                           int j_max = 40);

SpectralVec flow_apply(const FlowTable& table, int t_index, const SpectralVec& y0);

/// Projection of χ_Q u onto the modes, per time cell: f(j, c).
Eigen::MatrixXd project_control(const EigenBasis& basis, const Mask& mask, const Eigen::MatrixXd& u);

struct ForcedTrajectory {
  Eigen::MatrixXd states;   // direct forced Volterra, J x nodes
  Eigen::MatrixXd duhamel;  // Φ(t)y0 + ∫Φ(t-s)χ_Q u(s) ds
  double discrepancy = 0.0;
  double tolerance = 0.0;
  bool flagged = false;
};

/// Controlled trajectory computed by direct forcing and by the Duhamel sum.
/// u(i, c) is the control on spatial point i during time cell c.
ForcedTrajectory forced_solution(const ExpPolyFn& m, const EigenBasis& basis, const TimeGrid& grid,
                                 const Mask& mask, const Eigen::MatrixXd& u, const SpectralVec& y0,
                                 double tol = 1e-5);

struct CrossValidation {
  std::string kernel;
  int mode = 0;
  std::string method_pair;
  double max_abs_diff = 0.0;
  double dt = 0.0;
  double order_estimate = 0.0;
};

/// Three-way comparison on t in (0, t_end] for one mode: Volterra at dt, dt/2,
/// dt/4 against the kernel representation (which also yields the observed
/// order), and Volterra against the order-N decomposition.
std::vector<CrossValidation> cross_validate(const ExpPolyFn& m, const std::string& label, int mode,
                                            double eta, double t_end, double dt, int n_order = 4,
                                            int samples = 20);

}  // namespace memflow
