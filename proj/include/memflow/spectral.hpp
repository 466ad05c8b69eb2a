#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace memflow {

/// Dirichlet eigenpairs sampled on a spatial grid.
struct EigenBasis {
  std::string domain_id;
  Eigen::VectorXd eta;      // eigenvalues, strictly increasing, positive
  Eigen::VectorXd x;        // grid points
  Eigen::VectorXd weights;  // quadrature weights
  Eigen::MatrixXd values;   // values(i, j) = e_j(x_i)

  int size() const { return static_cast<int>(eta.size()); }
  int grid_size() const { return static_cast<int>(x.size()); }
  /// Throws std::invalid_argument when the eigenvalues are not positive and
  /// increasing or the dimensions disagree.
  void validate() const;
};

/// (j pi)^2 and sqrt(2) sin(j pi x) on n_x cell midpoints of (0,1).
EigenBasis interval_basis(int J, int n_x);

struct SpectralVec {
  Eigen::VectorXd coeffs;
  double s = 0.0;  // declared Sobolev exponent

  int size() const { return static_cast<int>(coeffs.size()); }
};

/// (sum a_j^2 eta_j^s)^{1/2}
double hs_norm(const EigenBasis& basis, const SpectralVec& v, double s);
double hs_norm(const Eigen::VectorXd& eta, const Eigen::VectorXd& a, double s);

/// A^k with eigenvalues (-eta_j)^k; k must be an integer.
SpectralVec apply_A_power(const EigenBasis& basis, const SpectralVec& v, int k);
/// (-A)^k with eigenvalues eta_j^k; k may be fractional.
SpectralVec apply_minus_A_power(const EigenBasis& basis, const SpectralVec& v, double k);

SpectralVec project_function(const Eigen::VectorXd& samples, const EigenBasis& basis);
Eigen::VectorXd evaluate_on_grid(const SpectralVec& v, const EigenBasis& basis);
/// Discrete L2 inner product on the basis grid.
double grid_inner(const EigenBasis& basis, const Eigen::VectorXd& f, const Eigen::VectorXd& g);

/// "s, a_1, ..., a_J"
std::string to_csv_line(const SpectralVec& v);
SpectralVec from_csv_line(const std::string& line);

}  // namespace memflow
