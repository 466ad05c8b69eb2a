#include "memflow/spectral.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace memflow {

void EigenBasis::validate() const {
  if (eta.size() == 0) throw std::invalid_argument("basis has no modes");
  if (values.rows() != x.size() || values.cols() != eta.size() || weights.size() != x.size())
    throw std::invalid_argument("basis dimensions disagree");
  if (eta(0) <= 0.0) throw std::invalid_argument("first eigenvalue must be positive");
  for (Eigen::Index j = 1; j < eta.size(); ++j)
    if (!(eta(j) > eta(j - 1))) throw std::invalid_argument("eigenvalues must increase strictly");
}

EigenBasis interval_basis(int J, int n_x) {
  if (J < 1) throw std::invalid_argument("interval_basis: J must be at least 1");
  if (n_x < 4 * J) throw std::invalid_argument("interval_basis: n_x must be at least 4J");
  EigenBasis b;
  b.domain_id = "interval(0,1)";
  b.eta.resize(J);
  b.x.resize(n_x);
  b.weights = Eigen::VectorXd::Constant(n_x, 1.0 / n_x);
  b.values.resize(n_x, J);
  const double pi = std::numbers::pi;
  for (int i = 0; i < n_x; ++i) b.x(i) = (i + 0.5) / n_x;
  for (int j = 0; j < J; ++j) {
    const double k = (j + 1) * pi;
    b.eta(j) = k * k;
    for (int i = 0; i < n_x; ++i) b.values(i, j) = std::sqrt(2.0) * std::sin(k * b.x(i));
  }
  return b;
}

double hs_norm(const Eigen::VectorXd& eta, const Eigen::VectorXd& a, double s) {
  if (eta.size() != a.size()) throw std::invalid_argument("hs_norm: size mismatch");
  double acc = 0.0;
  for (Eigen::Index j = 0; j < a.size(); ++j) acc += a(j) * a(j) * std::pow(eta(j), s);
  return std::sqrt(acc);
}

double hs_norm(const EigenBasis& basis, const SpectralVec& v, double s) {
  return hs_norm(basis.eta, v.coeffs, s);
}

SpectralVec apply_A_power(const EigenBasis& basis, const SpectralVec& v, int k) {
  SpectralVec out{v.coeffs, v.s - 2.0 * k};
  for (Eigen::Index j = 0; j < out.coeffs.size(); ++j) out.coeffs(j) *= std::pow(-basis.eta(j), k);
  return out;
}

SpectralVec apply_minus_A_power(const EigenBasis& basis, const SpectralVec& v, double k) {
  SpectralVec out{v.coeffs, v.s - 2.0 * k};
  for (Eigen::Index j = 0; j < out.coeffs.size(); ++j) out.coeffs(j) *= std::pow(basis.eta(j), k);
  return out;
}

SpectralVec project_function(const Eigen::VectorXd& samples, const EigenBasis& basis) {
  if (samples.size() != basis.grid_size())
    throw std::invalid_argument("project_function: samples not on the basis grid");
  return {basis.values.transpose() * basis.weights.cwiseProduct(samples), 0.0};
}

Eigen::VectorXd evaluate_on_grid(const SpectralVec& v, const EigenBasis& basis) {
  if (v.size() != basis.size()) throw std::invalid_argument("evaluate_on_grid: size mismatch");
  return basis.values * v.coeffs;
}

double grid_inner(const EigenBasis& basis, const Eigen::VectorXd& f, const Eigen::VectorXd& g) {
  return (basis.weights.array() * f.array() * g.array()).sum();
}

std::string to_csv_line(const SpectralVec& v) {
  std::string out;
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v.s);
  out += buf;
  for (Eigen::Index j = 0; j < v.coeffs.size(); ++j) {
    std::snprintf(buf, sizeof buf, ", %.17g", v.coeffs(j));
    out += buf;
  }
  return out;
}

SpectralVec from_csv_line(const std::string& line) {
  std::vector<double> vals;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) {
    std::size_t used = 0;
    try {
      vals.push_back(std::stod(field, &used));
    } catch (const std::exception&) {
      throw std::invalid_argument("malformed spectral vector field '" + field + "'");
    }
  }
  if (vals.empty()) throw std::invalid_argument("empty spectral vector line");
  SpectralVec v;
  v.s = vals[0];
  v.coeffs = Eigen::Map<Eigen::VectorXd>(vals.data() + 1, static_cast<Eigen::Index>(vals.size() - 1));
  return v;
}

}  // namespace memflow
