#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>

#include "memflow/observability.hpp"

using namespace memflow;

namespace {

ObsSetup setup(const std::string& kernel, int J, int n_x, const std::string& kind, std::optional<double> alpha,
               int n_t = 32, double eps = 0.3) {
  auto basis = interval_basis(J, n_x);
  GridSpec spec;
  spec.n_cells = n_t;
  auto table = build_flow_table(ExpPolyFn::parse(kernel), basis, spec);
  MaskParams p;
  p.n_t = n_t;
  p.n_x = n_x;
  p.eps = eps;
  return ObsSetup{basis, std::move(table), mask_generate(kind, p), alpha};
}

// min / max of the seminorm over the unit H^{-4} circle, 1 degree steps
std::pair<double, double> sweep(const ObsOperator& op) {
  double lo = 1e300, hi = 0.0;
  const Eigen::VectorXd d = op.eta().array().square().matrix();
  for (int k = 0; k < 180; ++k) {
    const double th = k * std::numbers::pi / 180.0;
    const Eigen::Vector2d b(std::cos(th), std::sin(th));
    const double v = op.seminorm(d.cwiseProduct(b));
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return {lo, hi};
}

}  // namespace

TEST_CASE("full mask seminorm is the weighted time integral of the coefficient norm") {
  const auto s = setup("exp(-t)", 4, 32, "full", 2.0);
  const ObsOperator op(s);
  const Eigen::Vector4d a(1.0, -0.5, 0.25, 2.0);
  const auto& g = s.table.grid;
  double ref = 0.0;
  for (int c = 0; c < g.n_cells; ++c)
    for (int i = g.cell_first[static_cast<std::size_t>(c)]; i < g.cell_last[static_cast<std::size_t>(c)]; ++i) {
      auto f = [&](int n) { return std::pow(g.t[static_cast<std::size_t>(n)], 2) * s.table.phi.col(n).cwiseProduct(a).norm(); };
      ref += 0.5 * (g.t[static_cast<std::size_t>(i + 1)] - g.t[static_cast<std::size_t>(i)]) * (f(i) + f(i + 1));
    }
  CHECK(op.seminorm(a) == doctest::Approx(ref).epsilon(1e-12));
  CHECK(obs_seminorm(s, SpectralVec{a, 0.0}) == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("seminorm gradient and Gram identity") {
  const auto s = setup("sin(t)", 5, 40, "zigzag", 2.0);
  const ObsOperator op(s);
  Eigen::VectorXd a(5);
  a << 0.3, -1.0, 0.7, 0.2, -0.4;
  Eigen::VectorXd grad;
  const double v = op.seminorm(a, grad);
  CHECK(v == doctest::Approx(op.seminorm(a)));
  for (int k = 0; k < 5; ++k) {
    Eigen::VectorXd e = Eigen::VectorXd::Unit(5, k) * 1e-6;
    const double fd = (op.seminorm(a + e) - op.seminorm(a - e)) / 2e-6;
    CHECK(grad(k) == doctest::Approx(fd).epsilon(1e-5));
  }
  // homogeneity
  CHECK(op.seminorm(-3.0 * a) == doctest::Approx(3.0 * v));
  CHECK(gram_matrix(s).isApprox(op.gram()));
  CHECK((op.gram() - op.gram().transpose()).norm() == 0.0);
}

TEST_CASE("window must sit on cell boundaries") {
  auto s = setup("exp(-t)", 3, 16, "full", std::nullopt, 8);
  s.S = 0.3;
  CHECK_THROWS_AS(ObsOperator{s}, std::invalid_argument);
  s.S = 0.25;
  s.T = 0.75;
  CHECK_NOTHROW(ObsOperator{s});
  s.T = 1.5;
  CHECK_THROWS_AS(ObsOperator{s}, std::invalid_argument);
}

TEST_CASE("weight only on windows starting at zero") {
  auto s = setup("exp(-t)", 3, 16, "full", 2.0, 8);
  CHECK(s.weight_exponent() == 2.0);
  s.S = 0.25;
  CHECK(s.weight_exponent() == 0.0);
  s.force_weight = true;
  CHECK(s.weight_exponent() == 2.0);
}

TEST_CASE("J = 2 optimizer matches a 1 degree sphere sweep") {
  for (const char* kind : {"full", "zigzag"}) {
    const ObsOperator op(setup("exp(-t)", 2, 16, kind, 2.0));
    const auto rep = two_sided_constants(op);
    const auto [lo, hi] = sweep(op);
    CAPTURE(kind);
    CHECK(rep.c_lower == doctest::Approx(lo).epsilon(5e-4));
    CHECK(rep.c_upper == doctest::Approx(hi).epsilon(5e-4));
    CHECK(rep.c_lower <= lo * (1 + 1e-12));
    CHECK(rep.c_upper >= hi * (1 - 1e-12));
    CHECK(rep.starts >= 32);
    CHECK(rep.restart_spread >= 0.0);
  }
}

TEST_CASE("L1 constants are bounded by the L2 surrogate") {
  for (const char* kind : {"full", "zigzag", "cusp"}) {
    const auto s = setup("t*exp(-0.5*t)", 6, 32, kind, 2.0);
    const ObsOperator op(s);
    const auto rep = two_sided_constants(op);
    const double root_t = std::sqrt(s.horizon() - s.S);
    CAPTURE(kind);
    CHECK(rep.c_lower <= root_t * rep.surrogate_lower * (1 + 1e-9));
    CHECK(rep.c_upper <= root_t * rep.surrogate_upper * (1 + 1e-9));
    CHECK(rep.c_lower <= rep.c_upper);
    CHECK(op.seminorm(rep.lower_witness) == doctest::Approx(rep.c_lower));
  }
}

TEST_CASE("optimizer is deterministic for a fixed seed") {
  const ObsOperator op(setup("sin(t)", 6, 32, "zigzag", 2.0));
  const auto a = two_sided_constants(op);
  const auto b = two_sided_constants(op);
  CHECK(a.c_lower == b.c_lower);
  CHECK(a.restart_values == b.restart_values);
}

TEST_CASE("unique continuation rank") {
  CHECK(unique_continuation_rank(setup("exp(-t)", 6, 32, "empty", std::nullopt)).rank == 0);
  const auto full = unique_continuation_rank(setup("exp(-t)", 6, 32, "full", std::nullopt));
  CHECK(full.rank == 6);
  CHECK(full.sigma_min > 0.0);
}

TEST_CASE("null observability") {
  const auto empty = null_obs_constant(setup("exp(-t)", 4, 16, "empty", std::nullopt));
  CHECK(empty.unbounded);
  const ObsOperator op(setup("exp(-t)", 4, 16, "full", std::nullopt));
  const auto full = null_obs_constant(op);
  CHECK_FALSE(full.unbounded);
  CHECK(std::isfinite(full.constant));
  // the constant dominates every sampled quotient
  for (int k = 0; k < 4; ++k) {
    const Eigen::VectorXd e = Eigen::VectorXd::Unit(4, k);
    CHECK(op.final_flow().cwiseProduct(e).norm() / op.seminorm(e) <= full.constant * (1 + 1e-9));
  }
}

TEST_CASE("relaxed inequality fit") {
  const auto fit = relaxed_inequality_fit(setup("exp(-t)", 5, 32, "zigzag", 2.0));
  CHECK(fit.samples >= 256);
  CHECK(fit.C > 0.0);
  CHECK(fit.C <= fit.sampled);
  CHECK(fit.residual >= 0.0);
}

TEST_CASE("bump profile") {
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(5, 0.0, 1.0);
  const auto b = bump_profile(x, 0.5, 0.5);
  CHECK(b(2) == 1.0);
  CHECK(b(0) == 0.0);
  CHECK(b(1) == doctest::Approx(std::pow(0.75, 4)));
}

TEST_CASE("alpha probe") {
  auto s = setup("exp(-t)", 20, 80, "full", 2.0);
  AlphaProbeOptions o;
  o.ks = {1, 2, 4};
  const auto tr = alpha_probe(s, o);
  REQUIRE(tr.points.size() == 3);
  CHECK(tr.points[2].modes == 20);
  CHECK(tr.spread() >= 1.0);
  CHECK(tr.to_csv().rfind("k,quotient\n", 0) == 0);
  CHECK(tr.points[0].modes == 8);
}

TEST_CASE("missing ball probe tracks |h_J(T)|") {
  GridSpec spec;
  spec.n_cells = 16;
  auto basis = interval_basis(96, 384);
  auto table = build_flow_table(ExpPolyFn::parse("exp(-t)"), basis, spec);
  MaskParams p;
  p.n_t = 16;
  p.n_x = 384;
  p.radius = 0.4;
  ObsSetup s{basis, table, mask_generate("ball_complement", p), std::nullopt};
  BallProbeOptions o;
  o.ks = {1, 2};
  o.radius = 0.4;
  const auto b = missing_ball_probe(s, ExpPolyFn::parse("exp(-t)"), o);
  CHECK(b.h_index == 1);
  CHECK(b.h_value == doctest::Approx(std::exp(-1.0)));
  for (double r : b.final_norm_ratio) CHECK(r == doctest::Approx(1.0).epsilon(0.1));
  CHECK_FALSE(b.width_warning);
}

TEST_CASE("heat localization is stable under concentration") {
  HeatProbeOptions o;
  o.center = 0.5;
  o.radius = 0.2;
  const auto h = heat_local_probe(interval_basis(64, 512), o);
  for (std::size_t si = 0; si < h.s_values.size(); ++si) {
    // widths shrink 8x along the row; the ratio may fall but must not grow 2x
    const auto& row = h.ratio[si];
    CAPTURE(h.s_values[si]);
    CHECK(std::isfinite(row.front()));
    CHECK(*std::max_element(row.begin(), row.end()) < 2.0 * row.front());
  }
  o.widths = {0.2};
  CHECK_THROWS(heat_local_probe(interval_basis(8, 64), o));
}
