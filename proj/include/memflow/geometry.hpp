#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "memflow/exp_poly.hpp"

namespace memflow {

/// Boolean raster over [0,T] x [0,1]. Cell (c, i) covers
/// [c T/n_t, (c+1) T/n_t] x [i/n_x, (i+1)/n_x] and belongs to the set iff its
/// midpoint does.
class Mask {
 public:
  Mask() = default;
  Mask(double T, int n_t, int n_x, std::string provenance = "manual");

  double T() const { return T_; }
  int n_t() const { return n_t_; }
  int n_x() const { return n_x_; }
  double dt() const { return T_ / n_t_; }
  double dx() const { return 1.0 / n_x_; }
  const std::string& provenance() const { return provenance_; }

  bool at(int t_cell, int x_cell) const {
    return cells_[static_cast<std::size_t>(x_cell) * static_cast<std::size_t>(n_t_) +
                  static_cast<std::size_t>(t_cell)] != 0;
  }
  void set(int t_cell, int x_cell, bool v) {
    cells_[static_cast<std::size_t>(x_cell) * static_cast<std::size_t>(n_t_) +
           static_cast<std::size_t>(t_cell)] = v ? 1 : 0;
  }
  double t_mid(int c) const { return (c + 0.5) * dt(); }
  double x_mid(int i) const { return (i + 0.5) * dx(); }
  std::size_t count() const;
  bool empty() const { return count() == 0; }
  /// Cellwise union / containment.
  Mask united(const Mask& other) const;
  bool contains(const Mask& other) const;

  std::string serialize() const;
  static Mask deserialize(const std::string& text, std::string provenance = "file");
  static Mask load(const std::string& path);
  void save(const std::string& path) const;

  bool operator==(const Mask& o) const {
    return T_ == o.T_ && n_t_ == o.n_t_ && n_x_ == o.n_x_ && cells_ == o.cells_;
  }

 private:
  double T_ = 0.0;
  int n_t_ = 0;
  int n_x_ = 0;
  std::vector<std::uint8_t> cells_;
  std::string provenance_;
};

struct MaskParams {
  double T = 1.0;
  int n_t = 64;
  int n_x = 64;
  // cylinder: (S, T_end) x (omega_lo, omega_hi)
  double S = 0.0;
  double T_end = -1.0;  // < 0: the horizon T
  double omega_lo = 0.0;
  double omega_hi = 1.0;
  double eps = 0.1;      // zigzag strip width
  double x0 = 0.5;       // cusp vertex / ball center
  double radius = 0.1;   // ball_complement radius
  std::uint64_t seed = 1;
  int count = 8;         // random_rects
  std::string path;      // file
};

/// kind in {cylinder, zigzag, cusp, random_rects, ball_complement, file, empty, full}.
Mask mask_generate(const std::string& kind, const MaskParams& p);

/// |Q_x ∩ [S,T]| for column x_cell, boundary cells counted fractionally.
double slice_measure(const Mask& q, int x_cell, double S, double T);
/// Column minimum of slice_measure.
double moc_functional(const Mask& q, double S, double T);
/// inf over centers of the average of slice_measure(., 0, T) over B(x0, r) ∩ [0,1].
double ball_average(const Mask& q, double r, double T);
/// ∫_S^T χ_Q(t, x) |M(t)| dt.
double weighted_slice(const Mask& q, const ExpPolyFn& m, double S, double T, int x_cell);
/// weighted_slice for every column, sharing the per-cell integrals.
std::vector<double> weighted_slices(const Mask& q, const ExpPolyFn& m, double S, double T);

struct Root {
  double t;
  int order;
};

struct LowerBoundCheck {
  double C = 0.0;
  int beta = 0;
  bool verified = false;
  std::vector<Root> roots;
  int violations = 0;
  double worst_ratio = 0.0;  // min over columns of lhs / (C rhs), columns with rhs > 0
};

/// Zeros of f on [a, b] with their orders.
std::vector<Root> find_roots(const ExpPolyFn& f, double a, double b);

/// Checks ∫χ_Q|f| >= C (∫χ_Q)^{beta+1} column by column, with C and beta built
/// from the zeros of f.
LowerBoundCheck analytic_lower_bound_check(const Mask& q, const ExpPolyFn& f, double S, double T);

}  // namespace memflow
