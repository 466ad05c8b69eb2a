#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "memflow/inverse_control.hpp"

using namespace memflow;

namespace {

struct Fixture {
  ExpPolyFn m;
  EigenBasis basis;
  GridSpec spec;
  FlowTable table;
  Mask mask;

  Fixture(const std::string& kernel, int J, int n_x, const std::string& kind, int n_t = 32)
      : m(ExpPolyFn::parse(kernel)), basis(interval_basis(J, n_x)) {
    spec.n_cells = n_t;
    table = build_flow_table(m, basis, spec);
    MaskParams p;
    p.n_t = n_t;
    p.n_x = n_x;
    p.eps = 0.1;
    mask = mask_generate(kind, p);
  }
  ObsSetup setup() const { return ObsSetup{basis, table, mask, std::nullopt}; }
};

Eigen::VectorXd normal_vec(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (int k = 0; k < n; ++k) v(k) = d(rng);
  return v;
}

Eigen::MatrixXd block_control(int n_x, int n_t, int blocks, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  Eigen::MatrixXd u(n_x, n_t);
  for (int c = 0; c < n_t; ++c)
    for (int b = 0; b < blocks; ++b) {
      const double v = d(rng);
      for (int i = b * n_x / blocks; i < (b + 1) * n_x / blocks; ++i) u(i, c) = v;
    }
  return u;
}

}  // namespace

TEST_CASE("observations vanish outside the mask") {
  Fixture f("exp(-t)", 6, 32, "zigzag");
  const auto s = f.setup();
  const auto d = observe(s, normal_vec(6, 1));
  REQUIRE(d.columns.size() == d.cells.size());
  for (std::size_t k = 0; k < d.columns.size(); ++k)
    for (int i = 0; i < 32; ++i)
      if (!f.mask.at(d.cells[k], i)) CHECK(d.values(i, static_cast<Eigen::Index>(k)) == 0.0);
  double wsum = 0.0;
  for (double w : d.weights) wsum += w;
  CHECK(wsum > 0.0);
}

TEST_CASE("noiseless reconstruction round trip") {
  Fixture f("exp(-t)", 12, 64, "zigzag", 64);
  const auto s = f.setup();
  const Eigen::VectorXd truth = normal_vec(12, 7);
  ReconstructionProblem p{&s, observe(s, truth), 0.0};
  const auto r = reconstruct_y0(p);
  CHECK(r.sigma_min > 1e-6);
  CHECK(relative_hs_error(f.basis.eta, r.y0.coeffs, truth) <= 1e-6);
  CHECK(r.y0.s == -4.0);
  CHECK(r.residual <= 1e-8);
}

TEST_CASE("zero data gives zero reconstruction") {
  Fixture f("sin(t)", 6, 32, "zigzag");
  const auto s = f.setup();
  ReconstructionProblem p{&s, observe(s, Eigen::VectorXd::Zero(6)), 1e-3};
  CHECK(reconstruct_y0(p).y0.coeffs.isZero(0.0));
}

TEST_CASE("rank deficiency without regularization") {
  Fixture f("exp(-t)", 4, 16, "empty");
  const auto s = f.setup();
  ReconstructionProblem p{&s, observe(s, Eigen::VectorXd::Ones(4)), 0.0};
  CHECK_THROWS_AS(reconstruct_y0(p), SingularSystemError);
  p.lambda = 1e-6;
  CHECK(reconstruct_y0(p).y0.coeffs.isZero(0.0));
}

TEST_CASE("data must vanish outside the mask") {
  Fixture f("exp(-t)", 4, 16, "zigzag");
  const auto s = f.setup();
  auto d = observe(s, Eigen::VectorXd::Ones(4));
  for (std::size_t k = 0; k < d.columns.size(); ++k)
    for (int i = 0; i < 16; ++i)
      if (!f.mask.at(d.cells[k], i)) {
        d.values(i, static_cast<Eigen::Index>(k)) = 1.0;
        ReconstructionProblem p{&s, d, 0.0};
        CHECK_THROWS_AS(reconstruct_y0(p), std::invalid_argument);
        return;
      }
}

TEST_CASE("noisy reconstruction with the discrepancy principle") {
  Fixture f("exp(-t)", 12, 64, "zigzag", 64);
  const auto s = f.setup();
  const Eigen::VectorXd truth = normal_vec(12, 11);
  auto d = observe(s, truth);
  const double clean = d.norm(f.basis);
  const double noise = add_noise(s, d, 0.01, 5);
  CHECK(noise == doctest::Approx(0.01 * clean));
  ReconstructionProblem p{&s, d, 0.0, noise};
  const auto r = reconstruct_y0(p);
  CHECK(r.residual >= 0.9 * noise);
  CHECK(r.lambda > 0.0);
  CHECK(relative_hs_error(f.basis.eta, r.y0.coeffs, truth) <= 0.1);
  CHECK(r.to_json().find("\"sigma_min\"") != std::string::npos);
}

TEST_CASE("zero problem gives the zero control") {
  Fixture f("exp(-t)", 6, 32, "full");
  const auto grid = f.table.grid;
  ControlProblem p{f.m, f.basis, grid, f.mask, 1.0, {Eigen::VectorXd::Zero(6), 0.0}, {Eigen::VectorXd::Zero(6), 4.0}};
  const auto r = min_norm_control(p);
  CHECK(r.u.isZero(0.0));
  CHECK(r.final_error == 0.0);
}

TEST_CASE("L2 control round trip, support and optimality") {
  for (const char* kind : {"full", "zigzag"}) {
    Fixture f("exp(-t)", 12, 64, kind, 64);
    const auto grid = f.table.grid;
    ControlProblem p{f.m, f.basis, grid, f.mask, 1.0, {normal_vec(12, 3), 0.0},
                     {f.basis.eta.array().pow(-3.0).matrix(), 4.0}};
    const auto r = min_norm_control(p);
    CAPTURE(kind);
    CHECK(r.final_error <= 1e-6);
    CHECK(r.replay_discrepancy <= 1e-10);
    CHECK(r.duhamel_discrepancy <= 1e-5);
    for (int c = 0; c < 64; ++c)
      for (int i = 0; i < 64; ++i)
        if (!f.mask.at(c, i)) CHECK(r.u(i, c) == 0.0);
    const ControlMap map(f.m, f.basis, grid, f.mask, 1.0);
    CHECK(r.norm == doctest::Approx(control_l2_norm(f.mask, r.u)));
    for (const auto& d : null_space_directions(map, 10, 17)) {
      CHECK((map.matrix() * d).norm() <= 1e-10 * map.matrix().norm() * d.norm());
      for (double e : {1e-3, -1e-3, 1.0}) {
        const Eigen::VectorXd v = r.values + e * d;
        CHECK(std::sqrt(v.cwiseAbs2().dot(map.norm_weights())) >= r.norm - 1e-8);
      }
    }
    const std::string csv = r.to_csv(f.mask);
    CHECK(csv.rfind("t_i,x_cell,u_value\n", 0) == 0);
    CHECK(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) == f.mask.count() + 1);
  }
}

TEST_CASE("control map reproduces the forced replay") {
  Fixture f("t*exp(-0.5*t)", 5, 32, "zigzag", 16);
  const ControlMap map(f.m, f.basis, f.table.grid, f.mask, 0.5);
  const Eigen::VectorXd v = normal_vec(map.unknowns(), 2);
  const Eigen::VectorXd y0 = normal_vec(5, 4);
  const auto tr = forced_solution(f.m, f.basis, f.table.grid, f.mask, map.raster(v), SpectralVec{y0, 0.0});
  int node = -1;
  for (int i = 0; i < f.table.grid.size(); ++i)
    if (std::abs(f.table.grid.t[static_cast<std::size_t>(i)] - 0.5) < 1e-12) node = i;
  REQUIRE(node >= 0);
  CHECK((tr.states.col(node) - (map.matrix() * v + map.free_response(y0))).cwiseAbs().maxCoeff() <= 1e-12);
  // horizon must be a cell boundary
  CHECK_THROWS_AS(ControlMap(f.m, f.basis, f.table.grid, f.mask, 0.51), std::invalid_argument);
}

TEST_CASE("weighted L-infinity regime") {
  Fixture f("exp(-t)", 8, 32, "full", 32);
  ControlProblem p{f.m, f.basis, f.table.grid, f.mask, 1.0, {normal_vec(8, 3), 0.0},
                   {f.basis.eta.array().pow(-3.0).matrix(), 4.0}};
  p.norm = ControlNorm::WeightedLinf;
  p.alpha = 1.0;
  CHECK_THROWS_AS(min_norm_control(p), std::invalid_argument);
  p.alpha = 2.0;
  const auto r = min_norm_control(p);
  CHECK(r.final_error <= 1e-6);
  CHECK(std::isfinite(r.weighted_sup));
  CHECK(r.weighted_sup <= 10.0 * r.objective);
  CHECK(r.objective <= 10.0 * r.weighted_sup);
  // the weighted sup is smaller than that of the plain L2 control
  p.norm = ControlNorm::L2;
  const auto l2 = min_norm_control(p);
  double sup_l2 = 0.0;
  const double dt = f.table.grid.cell_width();
  for (int c = 0; c < 32; ++c) {
    const double t = (c + 0.5) * dt;
    sup_l2 = std::max(sup_l2, std::pow(1.0 - t, -2.0) * std::sqrt(l2.u.col(c).squaredNorm() * f.mask.dx()));
  }
  CHECK(r.weighted_sup <= sup_l2 * (1 + 1e-9));
}

TEST_CASE("reachable difference") {
  Fixture f("exp(-t)", 6, 32, "full", 16);
  const auto& g = f.table.grid;
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(32, 16);
  const auto e1 = reachable_difference_check(f.m, f.basis, g, f.mask, {Eigen::VectorXd::Unit(6, 0), 0.0}, zero, 1.0);
  CHECK(e1.f(0) != 0.0);
  CHECK(e1.f.tail(5).isZero(0.0));
  const Eigen::MatrixXd u = block_control(32, 16, 8, 1);
  const auto none = reachable_difference_check(ExpPolyFn::zero(), f.basis, g, f.mask, {normal_vec(6, 1), 0.0}, u, 1.0);
  CHECK(none.f.isZero(0.0));
}

TEST_CASE("reachable difference flattens in H4 for L2 controls") {
  const auto basis = interval_basis(32, 128);
  GridSpec spec;
  spec.n_cells = 64;
  const auto grid = make_time_grid(spec, basis.eta.maxCoeff());
  MaskParams p;
  p.n_t = 64;
  p.n_x = 128;
  const auto mask = mask_generate("full", p);
  const auto m = ExpPolyFn::parse("exp(-t)");
  const auto rep = reachable_difference_check(m, basis, grid, mask, {Eigen::VectorXd::Zero(32), 0.0},
                                              block_control(128, 64, 8, 3), 1.0);
  CHECK(rep.last_quartile_growth < 0.05);
  // sandwich: the memory system reaches (heat target) + f_u with the same control
  const Eigen::MatrixXd u = block_control(128, 64, 8, 4);
  const SpectralVec y0{normal_vec(32, 5), 0.0};
  const auto heat = forced_solution(ExpPolyFn::zero(), basis, grid, mask, u, y0);
  const auto mem = forced_solution(m, basis, grid, mask, u, y0);
  const auto diff = reachable_difference_check(m, basis, grid, mask, y0, u, 1.0);
  const int last = grid.size() - 1;
  CHECK((mem.states.col(last) - (heat.states.col(last) + diff.f)).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("duality range test") {
  const auto id = duality_range_test(Eigen::MatrixXd::Identity(3, 3), Eigen::MatrixXd::Identity(3, 3));
  CHECK(id.c2 == 1.0);
  CHECK(id.c1 == 1.0);
  Eigen::MatrixXd O(2, 2);
  O << 1.0, 0.0, 0.0, 0.5;
  const auto r = duality_range_test(Eigen::MatrixXd::Identity(2, 2), O);
  CHECK(r.c1 == 2.0);
  CHECK(r.c2 == 2.0);
  CHECK(r.c2_exact == 2.0);
  CHECK(r.max_residual == 0.0);
  // a forward inequality that fails: O misses a direction R sees
  Eigen::MatrixXd bad(2, 2);
  bad << 1.0, 0.0, 0.0, 0.0;
  CHECK_THROWS(duality_range_test(Eigen::MatrixXd::Identity(2, 2), bad));
  CHECK(std::isinf(duality_range_test(Eigen::MatrixXd::Identity(2, 2), bad, Eigen::Vector2d(1.0, 0.0)).c1));
}

TEST_CASE("observability duality is consistent with the lower constant") {
  Fixture f("exp(-t)", 8, 32, "zigzag");
  auto s = f.setup();
  s.alpha = 2.0;
  const ObsOperator op(s);
  const auto rep = two_sided_constants(op);
  const auto d = duality_range_test(Eigen::MatrixXd::Identity(8, 8), observation_map(op));
  CHECK(d.c2 == doctest::Approx(1.0 / rep.surrogate_lower).epsilon(1e-6));
  CHECK(d.c2 * rep.c_lower >= 0.5);
  CHECK(d.c2 * rep.c_lower <= 2.0);
}
