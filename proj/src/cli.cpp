#include "memflow/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "memflow/inverse_control.hpp"
#include "memflow/kernel.hpp"
#include "memflow/parallel.hpp"

namespace memflow::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string fnv1a_hex(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

constexpr double kPi = 3.14159265358979323846;

// ---------------------------------------------------------------------------
// Configuration

struct Config {
  std::uint64_t seed = 1;
  std::string kernel = "exp(-t)";
  int J = 12;
  int n_x = 64;
  double T = 1.0;
  int n_t = 64;
  int refine = 8;
  std::string mask_kind = "zigzag";
  MaskParams mask;
  double S = 0.0;
  double T_window = -1.0;
  std::optional<double> alpha = 2.0;

  struct {
    std::vector<std::string> kernels;
    std::vector<int> modes{1, 2, 3, 8};
    double dt = 1e-3;
    int order = 4;
    double C = 100.0;
    std::vector<int> bound_orders{2, 3, 4};
    int bound_modes = 32;
    int bound_samples = 20;
  } flow;
  struct {
    int l_max = 6;
  } coeffs;
  struct {
    double radius = 0.1;
  } moc;
  struct {
    std::vector<int> J_list{4, 8, 16};
    int starts = 32;
    int max_iter = 400;
  } obs;
  struct {
    std::vector<double> alphas{0.5, 1.0, 2.0};
    AlphaProbeOptions o;
  } probe_alpha;
  struct {
    int J = 160;
    BallProbeOptions o;
  } probe_ball;
  struct {
    int J = 64;
    int n_x = 512;
    HeatProbeOptions o;
  } probe_heat;
  struct {
    double noise = 0.01;
    double lambda = 0.0;
  } reconstruct;
  struct {
    double horizon = 1.0;
    double target_exponent = -3.0;
    std::string norm = "L2";
    double alpha = 2.0;
  } control;
};

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }
  ~Reader() = default;

  std::string sub(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& at(const std::string& key) { return j_.at(key); }

  template <class T>
  void get(const std::string& key, T& v) {
    if (!has(key)) return;
    try {
      v = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(sub(key), "wrong type");
    }
  }
  void get(const std::string& key, int& v) {
    if (!has(key)) return;
    const auto& x = j_.at(key);
    if (!x.is_number_integer()) throw ConfigError(sub(key), "expected an integer");
    v = x.get<int>();
  }
  void get(const std::string& key, double& v) {
    if (!has(key)) return;
    const auto& x = j_.at(key);
    if (!x.is_number()) throw ConfigError(sub(key), "expected a number");
    v = x.get<double>();
  }
  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw ConfigError(sub(item.key()), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& path, const std::string& msg) {
  if (!ok) throw ConfigError(path, msg);
}

Config parse_config(const json& root) {
  Config c;
  Reader r(root, "");
  if (r.has("seed")) {
    const auto& s = r.at("seed");
    require(s.is_number_unsigned() || (s.is_number_integer() && s.get<long long>() >= 0), "seed",
            "expected a non-negative integer");
    c.seed = s.get<std::uint64_t>();
  }
  r.get("kernel", c.kernel);
  try {
    (void)ExpPolyFn::parse(c.kernel);
  } catch (const ParseError& e) {
    throw ConfigError("kernel", e.what());
  }
  if (r.has("basis")) {
    Reader b(r.at("basis"), "basis");
    b.get("J", c.J);
    b.get("n_x", c.n_x);
    b.finish();
  }
  require(c.J >= 1 && c.J <= 1024, "basis.J", "must lie in [1, 1024]");
  require(c.n_x >= 4 * c.J, "basis.n_x", "must be at least 4 J");
  if (r.has("grid")) {
    Reader g(r.at("grid"), "grid");
    g.get("T", c.T);
    g.get("n_t", c.n_t);
    g.get("refine", c.refine);
    g.finish();
  }
  require(c.T > 0.0 && c.T <= 100.0, "grid.T", "must lie in (0, 100]");
  require(c.n_t >= 1 && c.n_t <= 4096, "grid.n_t", "must lie in [1, 4096]");
  require(c.refine >= 1 && c.refine <= 1024, "grid.refine", "must lie in [1, 1024]");
  if (r.has("mask")) {
    Reader m(r.at("mask"), "mask");
    m.get("kind", c.mask_kind);
    m.get("S", c.mask.S);
    m.get("T_end", c.mask.T_end);
    if (m.has("omega")) {
      const auto& o = m.at("omega");
      require(o.is_array() && o.size() == 2 && o[0].is_number() && o[1].is_number(), "mask.omega",
              "expected [lo, hi]");
      c.mask.omega_lo = o[0].get<double>();
      c.mask.omega_hi = o[1].get<double>();
    }
    m.get("eps", c.mask.eps);
    m.get("x0", c.mask.x0);
    m.get("radius", c.mask.radius);
    m.get("count", c.mask.count);
    if (m.has("seed")) c.mask.seed = m.at("seed").get<std::uint64_t>();
    m.get("path", c.mask.path);
    m.finish();
  }
  static const std::set<std::string> kinds{"cylinder", "zigzag", "cusp", "random_rects", "ball_complement",
                                           "file", "empty", "full"};
  require(kinds.count(c.mask_kind) == 1, "mask.kind", "unknown mask kind '" + c.mask_kind + "'");
  if (c.mask_kind == "file") require(fs::exists(c.mask.path), "mask.path", "file does not exist");
  if (r.has("window")) {
    Reader w(r.at("window"), "window");
    w.get("S", c.S);
    w.get("T", c.T_window);
    w.finish();
  }
  require(c.S >= 0.0, "window.S", "must be >= 0");
  require(c.T_window < 0.0 || (c.T_window > c.S && c.T_window <= c.T), "window.T", "must lie in (S, grid.T]");
  if (r.has("alpha")) {
    const auto& a = r.at("alpha");
    if (a.is_null()) c.alpha.reset();
    else {
      require(a.is_number() && a.get<double>() >= 0.0, "alpha", "expected a number >= 0 or null");
      c.alpha = a.get<double>();
    }
  }
  if (r.has("flow_check")) {
    Reader f(r.at("flow_check"), "flow_check");
    f.get("kernels", c.flow.kernels);
    f.get("modes", c.flow.modes);
    f.get("dt", c.flow.dt);
    f.get("order", c.flow.order);
    f.get("C", c.flow.C);
    f.get("bound_orders", c.flow.bound_orders);
    f.get("bound_modes", c.flow.bound_modes);
    f.get("bound_samples", c.flow.bound_samples);
    f.finish();
    for (std::size_t k = 0; k < c.flow.kernels.size(); ++k) try {
        (void)ExpPolyFn::parse(c.flow.kernels[k]);
      } catch (const ParseError& e) {
        throw ConfigError("flow_check.kernels[" + std::to_string(k) + "]", e.what());
      }
    require(c.flow.dt > 0.0 && c.flow.dt <= 0.1, "flow_check.dt", "must lie in (0, 0.1]");
    require(c.flow.order >= 1 && c.flow.order <= 8, "flow_check.order", "must lie in [1, 8]");
    for (int m : c.flow.modes) require(m >= 1 && m <= 64, "flow_check.modes", "modes must lie in [1, 64]");
    for (int n : c.flow.bound_orders) require(n >= 1 && n <= 8, "flow_check.bound_orders", "orders must lie in [1, 8]");
  }
  if (r.has("kernel_table")) {
    Reader k(r.at("kernel_table"), "kernel_table");
    k.get("l_max", c.coeffs.l_max);
    k.finish();
    require(c.coeffs.l_max >= 1 && c.coeffs.l_max <= 12, "kernel_table.l_max", "must lie in [1, 12]");
  }
  if (r.has("moc")) {
    Reader m(r.at("moc"), "moc");
    m.get("radius", c.moc.radius);
    m.finish();
    require(c.moc.radius > 0.0 && c.moc.radius <= 0.5, "moc.radius", "must lie in (0, 0.5]");
  }
  if (r.has("obsconst")) {
    Reader o(r.at("obsconst"), "obsconst");
    o.get("J_list", c.obs.J_list);
    o.get("starts", c.obs.starts);
    o.get("max_iter", c.obs.max_iter);
    o.finish();
    for (int J : c.obs.J_list) require(J >= 1 && J <= 64, "obsconst.J_list", "entries must lie in [1, 64]");
    require(c.obs.starts >= 1, "obsconst.starts", "must be positive");
  }
  if (r.has("probe_alpha")) {
    Reader p(r.at("probe_alpha"), "probe_alpha");
    p.get("alphas", c.probe_alpha.alphas);
    p.get("ks", c.probe_alpha.o.ks);
    p.get("center", c.probe_alpha.o.center);
    p.get("half_width", c.probe_alpha.o.half_width);
    p.get("modes_per_k", c.probe_alpha.o.modes_per_k);
    p.get("base_modes", c.probe_alpha.o.base_modes);
    p.finish();
    require(!c.probe_alpha.o.ks.empty(), "probe_alpha.ks", "must not be empty");
    for (int k : c.probe_alpha.o.ks) require(k >= 1 && k <= 64, "probe_alpha.ks", "entries must lie in [1, 64]");
  }
  if (r.has("probe_ball")) {
    Reader p(r.at("probe_ball"), "probe_ball");
    p.get("J", c.probe_ball.J);
    p.get("ks", c.probe_ball.o.ks);
    p.get("center", c.probe_ball.o.center);
    p.get("radius", c.probe_ball.o.radius);
    p.get("power", c.probe_ball.o.power);
    p.get("profile_power", c.probe_ball.o.profile_power);
    p.finish();
    require(c.probe_ball.J >= 1 && c.probe_ball.J <= 512, "probe_ball.J", "must lie in [1, 512]");
    require(c.probe_ball.o.radius > 0.0 && c.probe_ball.o.radius < 0.5, "probe_ball.radius", "must lie in (0, 0.5)");
  }
  if (r.has("probe_heat")) {
    Reader p(r.at("probe_heat"), "probe_heat");
    p.get("J", c.probe_heat.J);
    p.get("n_x", c.probe_heat.n_x);
    p.get("center", c.probe_heat.o.center);
    p.get("radius", c.probe_heat.o.radius);
    p.get("s_values", c.probe_heat.o.s_values);
    p.get("widths", c.probe_heat.o.widths);
    p.finish();
    require(c.probe_heat.n_x >= 4 * c.probe_heat.J, "probe_heat.n_x", "must be at least 4 J");
  }
  if (r.has("reconstruct")) {
    Reader p(r.at("reconstruct"), "reconstruct");
    p.get("noise", c.reconstruct.noise);
    p.get("lambda", c.reconstruct.lambda);
    p.finish();
    require(c.reconstruct.noise >= 0.0 && c.reconstruct.noise < 1.0, "reconstruct.noise", "must lie in [0, 1)");
    require(c.reconstruct.lambda >= 0.0, "reconstruct.lambda", "must be >= 0");
  }
  if (r.has("control")) {
    Reader p(r.at("control"), "control");
    p.get("horizon", c.control.horizon);
    p.get("target_exponent", c.control.target_exponent);
    p.get("norm", c.control.norm);
    p.get("alpha", c.control.alpha);
    p.finish();
    require(c.control.norm == "L2" || c.control.norm == "weighted_linf", "control.norm",
            "expected \"L2\" or \"weighted_linf\"");
    require(c.control.horizon > 0.0 && c.control.horizon <= c.T, "control.horizon", "must lie in (0, grid.T]");
    require(c.control.norm == "L2" || c.control.alpha > 1.0, "control.alpha", "weighted regime requires alpha > 1");
  }
  r.finish();
  if (c.flow.kernels.empty()) c.flow.kernels = {c.kernel};
  return c;
}

json to_json(const Config& c) {
  json j;
  j["seed"] = c.seed;
  j["kernel"] = c.kernel;
  j["basis"] = {{"J", c.J}, {"n_x", c.n_x}};
  j["grid"] = {{"T", c.T}, {"n_t", c.n_t}, {"refine", c.refine}};
  j["mask"] = {{"kind", c.mask_kind}, {"S", c.mask.S},       {"T_end", c.mask.T_end},
               {"omega", {c.mask.omega_lo, c.mask.omega_hi}}, {"eps", c.mask.eps},
               {"x0", c.mask.x0},       {"radius", c.mask.radius}, {"count", c.mask.count},
               {"seed", c.mask.seed},   {"path", c.mask.path}};
  j["window"] = {{"S", c.S}, {"T", c.T_window}};
  j["alpha"] = c.alpha ? json(*c.alpha) : json(nullptr);
  j["flow_check"] = {{"kernels", c.flow.kernels}, {"modes", c.flow.modes}, {"dt", c.flow.dt},
                     {"order", c.flow.order}, {"C", c.flow.C}, {"bound_orders", c.flow.bound_orders},
                     {"bound_modes", c.flow.bound_modes}, {"bound_samples", c.flow.bound_samples}};
  j["kernel_table"] = {{"l_max", c.coeffs.l_max}};
  j["moc"] = {{"radius", c.moc.radius}};
  j["obsconst"] = {{"J_list", c.obs.J_list}, {"starts", c.obs.starts}, {"max_iter", c.obs.max_iter}};
  const auto& pa = c.probe_alpha.o;
  j["probe_alpha"] = {{"alphas", c.probe_alpha.alphas}, {"ks", pa.ks}, {"center", pa.center},
                      {"half_width", pa.half_width}, {"modes_per_k", pa.modes_per_k}, {"base_modes", pa.base_modes}};
  const auto& pb = c.probe_ball.o;
  j["probe_ball"] = {{"J", c.probe_ball.J}, {"ks", pb.ks}, {"center", pb.center}, {"radius", pb.radius},
                     {"power", pb.power}, {"profile_power", pb.profile_power}};
  const auto& ph = c.probe_heat.o;
  j["probe_heat"] = {{"J", c.probe_heat.J}, {"n_x", c.probe_heat.n_x}, {"center", ph.center},
                     {"radius", ph.radius}, {"s_values", ph.s_values}, {"widths", ph.widths}};
  j["reconstruct"] = {{"noise", c.reconstruct.noise}, {"lambda", c.reconstruct.lambda}};
  j["control"] = {{"horizon", c.control.horizon}, {"target_exponent", c.control.target_exponent},
                  {"norm", c.control.norm}, {"alpha", c.control.alpha}};
  return j;
}

// ---------------------------------------------------------------------------
// Run context

struct Context {
  Config cfg;
  std::string hash;
  fs::path dir;
  double tol = 1.0;
  std::ostream& out;
  std::vector<std::string> files;
  std::vector<std::string> failures;
  std::string prefix;

  void write(const std::string& name, const std::string& body) {
    const std::string file = prefix + name;
    std::ofstream f(dir / file, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + (dir / file).string());
    f << body;
    files.push_back(file);
  }
  void csv(const std::string& name, const std::string& body) { write(name, "# config_hash=" + hash + "\n" + body); }
  void json_file(const std::string& name, json j) {
    j["config_hash"] = hash;
    write(name, j.dump(2) + "\n");
  }
  void check(bool ok, const std::string& what) {
    if (!ok) failures.push_back(prefix + what);
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string e12(double v) { return fmt("%.12e", v); }

ExpPolyFn kernel_of(const Config& c) { return ExpPolyFn::parse(c.kernel); }

Mask make_mask(const Config& c, int n_x) {
  MaskParams p = c.mask;
  p.T = c.T;
  p.n_t = c.n_t;
  p.n_x = n_x;
  if (c.mask_kind == "file") {
    Mask m = Mask::load(p.path);
    if (m.n_t() != c.n_t || m.n_x() != n_x) throw ConfigError("mask.path", "mask raster does not match grid.n_t / n_x");
    return m;
  }
  return mask_generate(c.mask_kind, p);
}

GridSpec grid_spec(const Config& c) {
  GridSpec g;
  g.T = c.T;
  g.n_cells = c.n_t;
  g.refine = c.refine;
  return g;
}

ObsSetup make_setup(const Config& c, int J, int n_x, std::optional<double> alpha, const Mask* mask = nullptr) {
  EigenBasis basis = interval_basis(J, n_x);
  FlowTable table = build_flow_table(kernel_of(c), basis, grid_spec(c));
  ObsSetup s{basis, std::move(table), mask ? *mask : make_mask(c, n_x), alpha};
  s.S = c.S;
  s.T = c.T_window;
  return s;
}

Eigen::VectorXd random_coeffs(int J, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(J);
  for (int j = 0; j < J; ++j) v(j) = normal(rng);
  return v;
}

double grid_max_diff(const ExpPolyFn& a, const ExpPolyFn& b, double T) {
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const double t = T * k / 99.0;
    worst = std::max(worst, std::abs(a(t) - b(t)));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Commands

json cmd_flow_check(Context& ctx) {
  const auto& f = ctx.cfg.flow;
  std::string table = "kernel,mode,pair,max_abs_diff,dt,order,tolerance,pass\n";
  json summary;
  int failures = 0;
  for (const auto& ks : f.kernels) {
    const auto m = ExpPolyFn::parse(ks);
    for (int j : f.modes) {
      const double eta = std::pow(j * kPi, 2);
      for (const auto& cv : cross_validate(m, ks, j, eta, 1.0, f.dt, f.order)) {
        const double tol = std::max(1e-6, f.C * cv.dt * cv.dt) * ctx.tol;
        bool ok = cv.max_abs_diff <= tol;
        // the observed order is meaningful only above the roundoff floor
        if (!std::isnan(cv.order_estimate) && cv.max_abs_diff > 1e-10) ok = ok && cv.order_estimate >= 1.9;
        failures += ok ? 0 : 1;
        table += ks + "," + std::to_string(j) + "," + cv.method_pair + "," + e12(cv.max_abs_diff) + "," + e12(cv.dt) +
                 "," + (std::isnan(cv.order_estimate) ? std::string("nan") : e12(cv.order_estimate)) + "," + e12(tol) +
                 "," + (ok ? "1" : "0") + "\n";
      }
    }
  }
  ctx.csv("flow_check.csv", table);
  ctx.check(failures == 0, "flow agreement");

  std::string bounds = "kernel,N,j,t,abs_R,bound,pass\n";
  int violations = 0;
  for (const auto& ks : f.kernels) {
    const auto m = ExpPolyFn::parse(ks);
    for (int n : f.bound_orders) {
      const DecompositionModel model(m, n, 40, 2.0);
      for (int j = 1; j <= f.bound_modes; ++j)
        for (int k = 1; k <= f.bound_samples; ++k) {
          const double t = 2.0 * k / f.bound_samples;
          const double r = std::abs(model.remainder_R(std::pow(j * kPi, 2), t));
          const double b = remainder_bound(m, n, t);
          const bool ok = r <= b;
          violations += ok ? 0 : 1;
          bounds += ks + "," + std::to_string(n) + "," + std::to_string(j) + "," + e12(t) + "," + e12(r) + "," +
                    e12(b) + "," + (ok ? "1" : "0") + "\n";
        }
    }
  }
  ctx.csv("remainder_bound.csv", bounds);
  ctx.check(violations == 0, "remainder bound");
  summary["agreement_failures"] = failures;
  summary["bound_violations"] = violations;
  ctx.out << "flow-check: " << failures << " agreement failures, " << violations << " bound violations\n";
  return summary;
}

json cmd_kernel(Context& ctx) {
  const auto m = kernel_of(ctx.cfg);
  const double T = ctx.cfg.T;
  std::string table = "l,h_l,p_l,h_l(0)+p_l(0)\n";
  json summary;
  double worst = 0.0;
  for (int l = 0; l <= ctx.cfg.coeffs.l_max; ++l) {
    const auto h = h_coeff(m, l);
    const auto p = p_coeff(m, l);
    const double s = h(0.0) + p(0.0);
    worst = std::max(worst, std::abs(s));
    table += std::to_string(l) + ",\"" + h.to_string() + "\",\"" + p.to_string() + "\"," + e12(s) + "\n";
  }
  ctx.csv("coefficients.csv", table);
  const double m0 = m(0.0), dm0 = m.derivative(1)(0.0);
  const auto t = ExpPolyFn::monomial(1.0, 1);
  const auto p1 = ExpPolyFn::constant(m0) - dm0 * t + (0.5 * m0 * m0) * ExpPolyFn::monomial(1.0, 2);
  const double e_h0 = grid_max_diff(h_coeff(m, 0), ExpPolyFn::zero(), T);
  const double e_h1 = grid_max_diff(h_coeff(m, 1), -m, T);
  const double e_p0 = grid_max_diff(p_coeff(m, 0), m0 * t, T);
  const double e_p1 = grid_max_diff(p_coeff(m, 1), p1, T);
  const double tol = 1e-12 * ctx.tol;
  ctx.check(h_coeff(m, 0).is_zero() && e_h1 <= tol && e_p0 <= tol && e_p1 <= tol && worst <= tol,
            "coefficient identities");
  summary = {{"h0_error", e_h0}, {"h1_error", e_h1}, {"p0_error", e_p0}, {"p1_error", e_p1},
             {"max_sum_at_zero", worst}, {"first_nonzero_h", first_nonzero_h_index(m, T)}};
  ctx.json_file("kernel.json", summary);
  ctx.out << "kernel: identities max error " << std::max({e_h1, e_p0, e_p1, worst}) << "\n";
  return summary;
}

json cmd_moc(Context& ctx) {
  const auto& c = ctx.cfg;
  const Mask mask = make_mask(c, c.n_x);
  const double T = c.T_window < 0.0 ? c.T : c.T_window;
  const auto m = kernel_of(c);
  const double moc = moc_functional(mask, c.S, T);
  const double ball = ball_average(mask, c.moc.radius, T);
  const auto weighted = weighted_slices(mask, m, c.S, T);
  const auto lb = analytic_lower_bound_check(mask, m, c.S, T);
  std::string slices = "x_cell,slice_measure,weighted_slice\n";
  for (int i = 0; i < mask.n_x(); ++i)
    slices += std::to_string(i) + "," + e12(slice_measure(mask, i, c.S, T)) + "," +
              e12(weighted[static_cast<std::size_t>(i)]) + "\n";
  ctx.csv("slices.csv", slices);
  json summary = {{"moc", moc},
                  {"ball_average", ball},
                  {"weighted_min", *std::min_element(weighted.begin(), weighted.end())},
                  {"lower_bound_C", lb.C},
                  {"lower_bound_beta", lb.beta},
                  {"lower_bound_verified", lb.verified},
                  {"lower_bound_violations", lb.violations}};
  ctx.json_file("moc.json", summary);
  ctx.check(lb.violations == 0, "lower bound check");
  ctx.out << fmt("%.6g", moc) << "\n";
  return summary;
}

json cmd_obsconst(Context& ctx) {
  const auto& c = ctx.cfg;
  OptimizerOptions opt;
  opt.starts = c.obs.starts;
  opt.max_iter = c.obs.max_iter;
  opt.seed = c.seed;
  std::string table = "J,c_lower,c_upper,surrogate_lower,surrogate_upper,null_constant,null_unbounded,restart_spread,uc_rank\n";
  std::string restarts = "J,start,value\n";
  json rows = json::array();
  for (int J : c.obs.J_list) {
    const int n_x = std::max(c.n_x, 4 * J);
    const ObsOperator op(make_setup(c, J, n_x, c.alpha));
    const auto rep = two_sided_constants(op, opt);
    const auto null = null_obs_constant(op, opt);
    const auto uc = unique_continuation_rank(op);
    table += std::to_string(J) + "," + e12(rep.c_lower) + "," + e12(rep.c_upper) + "," + e12(rep.surrogate_lower) +
             "," + e12(rep.surrogate_upper) + "," + e12(null.constant) + "," + (null.unbounded ? "1" : "0") + "," +
             e12(rep.restart_spread) + "," + std::to_string(uc.rank) + "\n";
    for (std::size_t k = 0; k < rep.restart_values.size(); ++k)
      restarts += std::to_string(J) + "," + std::to_string(k) + "," + e12(rep.restart_values[k]) + "\n";
    rows.push_back({{"J", J}, {"c_lower", rep.c_lower}, {"c_upper", rep.c_upper},
                    {"null_constant", null.unbounded ? json("unbounded") : json(null.constant)},
                    {"restart_spread", rep.restart_spread}});
    ctx.out << "obsconst J=" << J << ": c_lower=" << rep.c_lower << " c_upper=" << rep.c_upper << "\n";
  }
  ctx.csv("obsconst.csv", table);
  ctx.csv("restarts.csv", restarts);
  json summary = {{"rows", rows}};
  ctx.json_file("obsconst.json", summary);
  return summary;
}

json cmd_probe_alpha(Context& ctx) {
  const auto& c = ctx.cfg;
  const auto& o = c.probe_alpha.o;
  const int kmax = *std::max_element(o.ks.begin(), o.ks.end());
  const int J = o.modes_per_k * kmax + o.base_modes;
  const int n_x = std::max(c.n_x, 4 * J);
  const Mask mask = make_mask(c, n_x);
  EigenBasis basis = interval_basis(J, n_x);
  FlowTable table = build_flow_table(kernel_of(c), basis, grid_spec(c));
  json spreads = json::object();
  for (double a : c.probe_alpha.alphas) {
    ObsSetup s{basis, table, mask, a};
    s.S = c.S;
    s.T = c.T_window;
    const auto tr = alpha_probe(s, o);
    const std::string tag = fmt("%g", a);
    ctx.csv("probe_alpha_" + tag + ".csv", tr.to_csv());
    spreads[tag] = tr.spread();
    ctx.out << "probe-alpha alpha=" << tag << ": spread " << tr.spread() << "\n";
  }
  json summary = {{"spread", spreads}, {"modes", J}};
  ctx.json_file("probe_alpha.json", summary);
  return summary;
}

json cmd_probe_ball(Context& ctx) {
  const auto& c = ctx.cfg;
  const auto& o = c.probe_ball.o;
  const int J = c.probe_ball.J;
  const int n_x = std::max(c.n_x, 4 * J);
  MaskParams p;
  p.T = c.T;
  p.n_t = c.n_t;
  p.n_x = n_x;
  p.x0 = o.center;
  p.radius = o.radius;
  const Mask mask = mask_generate("ball_complement", p);
  const ObsSetup s = make_setup(c, J, n_x, std::nullopt, &mask);
  const auto b = missing_ball_probe(s, kernel_of(c), o);
  std::string table = "k,quotient,final_norm,final_norm_ratio,observation\n";
  for (std::size_t k = 0; k < b.trajectory.points.size(); ++k) {
    const auto& pt = b.trajectory.points[k];
    table += std::to_string(pt.k) + "," + e12(pt.quotient) + "," + e12(pt.numerator) + "," +
             e12(b.final_norm_ratio[k]) + "," + e12(pt.denominator) + "\n";
  }
  ctx.csv("probe_ball.csv", table);
  const auto& pts = b.trajectory.points;
  const double growth = pts.empty() ? 0.0 : pts.back().quotient / pts.front().quotient;
  json summary = {{"h_index", b.h_index}, {"h_value", b.h_value}, {"growth", growth},
                  {"width_warning", b.width_warning}};
  ctx.json_file("probe_ball.json", summary);
  ctx.out << "probe-ball: h_" << b.h_index << "(T)=" << b.h_value << ", quotient growth " << growth
          << (b.width_warning ? " (warning: bump below 4 grid cells)" : "") << "\n";
  return summary;
}

json cmd_probe_heat(Context& ctx) {
  const auto& c = ctx.cfg;
  const auto basis = interval_basis(c.probe_heat.J, c.probe_heat.n_x);
  const auto h = heat_local_probe(basis, c.probe_heat.o);
  std::string table = "s,width,ratio\n";
  json growth = json::object();
  for (std::size_t si = 0; si < h.s_values.size(); ++si) {
    double lo = 1e300, hi = 0.0;
    for (std::size_t wi = 0; wi < c.probe_heat.o.widths.size(); ++wi) {
      const double r = h.ratio[si][wi];
      lo = std::min(lo, r);
      hi = std::max(hi, r);
      table += fmt("%g", h.s_values[si]) + "," + e12(c.probe_heat.o.widths[wi]) + "," + e12(r) + "\n";
    }
    growth[fmt("%g", h.s_values[si])] = hi / lo;
  }
  ctx.csv("probe_heat.csv", table);
  json summary = {{"spread", growth}};
  ctx.json_file("probe_heat.json", summary);
  ctx.out << "probe-heat: " << growth.dump() << "\n";
  return summary;
}

json cmd_reconstruct(Context& ctx) {
  const auto& c = ctx.cfg;
  const ObsSetup s = make_setup(c, c.J, c.n_x, std::nullopt);
  const Eigen::VectorXd truth = random_coeffs(c.J, c.seed);
  const Observation data = observe(s, truth);
  const auto uc = unique_continuation_rank(s);
  json summary;
  std::string table = "j,truth,noiseless";
  Eigen::VectorXd clean_est = Eigen::VectorXd::Zero(c.J), noisy_est = Eigen::VectorXd::Zero(c.J);
  try {
    ReconstructionProblem p{&s, data, c.reconstruct.lambda};
    auto r = reconstruct_y0(p);
    r.rel_error = relative_hs_error(s.basis.eta, r.y0.coeffs, truth);
    clean_est = r.y0.coeffs;
    summary["noiseless"] = json::parse(r.to_json());
    if (c.reconstruct.lambda == 0.0 && c.J <= 16 && uc.sigma_min > 1e-6)
      ctx.check(r.rel_error <= 1e-6 * ctx.tol, "noiseless reconstruction");
  } catch (const SingularSystemError& e) {
    summary["noiseless"] = {{"error", e.what()}};
    ctx.check(false, "noiseless reconstruction");
  }
  if (c.reconstruct.noise > 0.0) {
    Observation noisy = data;
    const double level = add_noise(s, noisy, c.reconstruct.noise, c.seed + 1);
    ReconstructionProblem p{&s, noisy, 0.0, level};
    auto r = reconstruct_y0(p);
    r.rel_error = relative_hs_error(s.basis.eta, r.y0.coeffs, truth);
    noisy_est = r.y0.coeffs;
    summary["noisy"] = json::parse(r.to_json());
    summary["noisy"]["noise"] = level;
    ctx.check(r.rel_error <= 0.1 * ctx.tol, "noisy reconstruction");
    table += ",noisy";
  }
  table += "\n";
  for (int j = 0; j < c.J; ++j) {
    table += std::to_string(j + 1) + "," + e12(truth(j)) + "," + e12(clean_est(j));
    if (c.reconstruct.noise > 0.0) table += "," + e12(noisy_est(j));
    table += "\n";
  }
  summary["uc_rank"] = uc.rank;
  ctx.csv("reconstruction.csv", table);
  ctx.json_file("reconstruction.json", summary);
  ctx.out << "reconstruct: " << summary.dump() << "\n";
  return summary;
}

json cmd_control(Context& ctx) {
  const auto& c = ctx.cfg;
  const auto basis = interval_basis(c.J, c.n_x);
  const Mask mask = make_mask(c, c.n_x);
  const TimeGrid grid = make_time_grid(grid_spec(c), basis.eta.maxCoeff());
  ControlProblem p{kernel_of(c), basis, grid, mask, c.control.horizon,
                   SpectralVec{random_coeffs(c.J, c.seed), 0.0},
                   SpectralVec{basis.eta.array().pow(c.control.target_exponent).matrix(), 4.0}};
  p.norm = c.control.norm == "L2" ? ControlNorm::L2 : ControlNorm::WeightedLinf;
  p.alpha = c.control.alpha;
  const auto r = min_norm_control(p);
  bool outside_zero = true;
  for (int cell = 0; cell < mask.n_t(); ++cell)
    for (int i = 0; i < mask.n_x(); ++i)
      if (!mask.at(cell, i) && r.u(i, cell) != 0.0) outside_zero = false;
  ctx.check(r.final_error <= 1e-6 * ctx.tol, "control final error");
  ctx.check(outside_zero, "control support");
  double min_gain = 0.0;
  if (p.norm == ControlNorm::L2) {
    const ControlMap map(p.m, basis, grid, mask, p.horizon);
    min_gain = std::numeric_limits<double>::infinity();
    for (const auto& d : null_space_directions(map, 10, c.seed + 2))
      for (double e : {1e-3, -1e-3, 1.0, -1.0}) {
        const Eigen::VectorXd v = r.values + e * d;
        min_gain = std::min(min_gain, std::sqrt(v.cwiseAbs2().dot(map.norm_weights())) - r.norm);
      }
    ctx.check(min_gain >= -1e-8 * ctx.tol, "control optimality");
  }
  ctx.csv("control.csv", r.to_csv(mask));
  json summary = {{"final_error", r.final_error},       {"map_error", r.map_error},
                  {"replay_discrepancy", r.replay_discrepancy}, {"duhamel_discrepancy", r.duhamel_discrepancy},
                  {"norm", r.norm},                     {"objective", r.objective},
                  {"weighted_sup", r.weighted_sup},     {"moc", r.moc},
                  {"target_h4", r.target_h4},           {"outside_zero", outside_zero},
                  {"null_space_min_gain", min_gain},    {"regime", c.control.norm}};
  ctx.json_file("control.json", summary);
  ctx.out << "control: final error " << r.final_error << ", norm " << r.norm << "\n";
  return summary;
}

json cmd_duality(Context& ctx) {
  const auto& c = ctx.cfg;
  Eigen::MatrixXd O(2, 2);
  O << 1.0, 0.0, 0.0, 0.5;
  const auto closed = duality_range_test(Eigen::MatrixXd::Identity(2, 2), O);
  ctx.check(closed.c1 == 2.0 && closed.c2 == 2.0, "2x2 duality");
  const ObsOperator op(make_setup(c, c.J, c.n_x, c.alpha));
  OptimizerOptions opt;
  opt.seed = c.seed;
  const auto rep = two_sided_constants(op, opt);
  const auto d = duality_range_test(Eigen::MatrixXd::Identity(c.J, c.J), observation_map(op));
  const double ratio = d.c2 * rep.c_lower;
  ctx.check(ratio >= 0.5 / ctx.tol && ratio <= 2.0 * ctx.tol, "observability duality");
  json summary = {{"closed_form", {{"C1", closed.c1}, {"C2", closed.c2}}},
                  {"observability", {{"C2", d.c2}, {"C1", d.c1}, {"inverse_c_lower", 1.0 / rep.c_lower},
                                     {"ratio", ratio}, {"max_residual", d.max_residual}}}};
  ctx.json_file("duality.json", summary);
  ctx.out << "duality: 2x2 C1=" << closed.c1 << " C2=" << closed.c2 << "; observability C2*c_lower=" << ratio << "\n";
  return summary;
}

using Command = json (*)(Context&);

const std::map<std::string, Command>& commands() {
  static const std::map<std::string, Command> table{
      {"flow-check", cmd_flow_check}, {"kernel", cmd_kernel},           {"moc", cmd_moc},
      {"obsconst", cmd_obsconst},     {"probe-alpha", cmd_probe_alpha}, {"probe-ball", cmd_probe_ball},
      {"probe-heat", cmd_probe_heat}, {"reconstruct", cmd_reconstruct}, {"control", cmd_control},
      {"duality", cmd_duality}};
  return table;
}

}  // namespace

int run(const Options& opt, std::ostream& out, std::ostream& err) {
  try {
    const bool report = opt.command == "report";
    if (!report && !commands().count(opt.command)) {
      err << "unknown command '" << opt.command << "'\n";
      return 2;
    }
    if (!(opt.tolerance_scale > 0.0)) throw ConfigError("--tolerance-scale", "must be positive");
    json root = json::object();
    if (!opt.config_path.empty()) {
      std::ifstream f(opt.config_path);
      if (!f) throw ConfigError("--config", "cannot open '" + opt.config_path + "'");
      try {
        root = json::parse(f);
      } catch (const json::parse_error& e) {
        throw ConfigError("--config", std::string("invalid JSON: ") + e.what());
      }
    }
    Config cfg = parse_config(root);
    if (opt.seed) cfg.seed = *opt.seed;
    if (opt.threads) {
      if (*opt.threads < 1) throw ConfigError("--threads", "must be positive");
      set_thread_count(*opt.threads);
    }
    json effective = to_json(cfg);
    effective["tolerance_scale"] = opt.tolerance_scale;
    const std::string hash = fnv1a_hex(effective.dump());
    const fs::path dir = fs::path(opt.out_dir) / opt.command / hash;
    fs::create_directories(dir);

    Context ctx{cfg, hash, dir, opt.tolerance_scale, out, {}, {}, ""};
    json results;
    if (report) {
      for (const char* name : {"kernel", "moc", "obsconst", "reconstruct", "control", "duality"}) {
        ctx.prefix = std::string(name) + "_";
        results[name] = commands().at(name)(ctx);
      }
      ctx.prefix.clear();
      ctx.json_file("report.json", results);
    } else {
      results = commands().at(opt.command)(ctx);
    }
    json manifest = {{"command", opt.command},
                     {"config_hash", hash},
                     {"config", effective},
                     {"files", ctx.files},
                     {"failures", ctx.failures},
                     {"status", ctx.failures.empty() ? "pass" : "fail"}};
    std::ofstream(dir / "manifest.json", std::ios::binary) << manifest.dump(2) << "\n";
    out << "artifacts: " << dir.string() << "\n";
    for (const auto& f : ctx.failures) err << "FAILED: " << f << "\n";
    return ctx.failures.empty() ? 0 : 1;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace memflow::cli
