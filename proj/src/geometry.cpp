#include "memflow/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

#include "memflow/kernel.hpp"
#include "memflow/quadrature.hpp"

namespace memflow {

Mask::Mask(double T, int n_t, int n_x, std::string provenance)
    : T_(T), n_t_(n_t), n_x_(n_x), provenance_(std::move(provenance)) {
  if (!(T > 0.0) || n_t < 1 || n_x < 1) throw std::invalid_argument("mask needs T > 0 and positive dimensions");
  cells_.assign(static_cast<std::size_t>(n_t) * static_cast<std::size_t>(n_x), 0);
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
}

Mask Mask::united(const Mask& other) const {
  if (n_t_ != other.n_t_ || n_x_ != other.n_x_) throw std::invalid_argument("mask shapes differ");
  Mask out = *this;
  for (std::size_t k = 0; k < cells_.size(); ++k) out.cells_[k] = cells_[k] | other.cells_[k];
  return out;
}

bool Mask::contains(const Mask& other) const {
  if (n_t_ != other.n_t_ || n_x_ != other.n_x_) return false;
  for (std::size_t k = 0; k < cells_.size(); ++k)
    if (other.cells_[k] && !cells_[k]) return false;
  return true;
}

std::string Mask::serialize() const {
  char head[128];
  std::snprintf(head, sizeof head, "MEMFLOW-MASK v1 %d %d %.17g\n", n_t_, n_x_, T_);
  std::string out = head;
  out.reserve(out.size() + cells_.size() + static_cast<std::size_t>(n_x_));
  for (int i = 0; i < n_x_; ++i) {
    for (int c = 0; c < n_t_; ++c) out += at(c, i) ? '1' : '0';
    out += '\n';
  }
  return out;
}

Mask Mask::deserialize(const std::string& text, std::string provenance) {
  std::istringstream in(text);
  std::string magic, version;
  int n_t = 0, n_x = 0;
  double T = 0.0;
  if (!(in >> magic >> version >> n_t >> n_x >> T) || magic != "MEMFLOW-MASK")
    throw std::invalid_argument("mask file: malformed header");
  if (version != "v1") throw std::invalid_argument("mask file: unsupported version " + version);
  Mask m(T, n_t, n_x, std::move(provenance));
  std::string row;
  std::getline(in, row);
  for (int i = 0; i < n_x; ++i) {
    if (!std::getline(in, row)) throw std::invalid_argument("mask file: missing row " + std::to_string(i));
    if (static_cast<int>(row.size()) != n_t)
      throw std::invalid_argument("mask file: row " + std::to_string(i) + " has wrong length");
    for (int c = 0; c < n_t; ++c) {
      if (row[static_cast<std::size_t>(c)] != '0' && row[static_cast<std::size_t>(c)] != '1')
        throw std::invalid_argument("mask file: invalid character in row " + std::to_string(i));
      m.set(c, i, row[static_cast<std::size_t>(c)] == '1');
    }
  }
  return m;
}

Mask Mask::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open mask file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str(), "file:" + path);
}

void Mask::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write mask file " + path);
  out << serialize();
}

namespace {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double zigzag_profile(double x) { return x < 0.5 ? 2.0 * x : 2.0 - 2.0 * x; }

}  // namespace

Mask mask_generate(const std::string& kind, const MaskParams& p) {
  const double t_end = p.T_end < 0.0 ? p.T : p.T_end;
  if (kind == "file") {
    Mask m = Mask::load(p.path);
    return m;
  }
  Mask m(p.T, p.n_t, p.n_x, kind);
  if (kind == "empty") return m;
  if (kind == "full") {
    for (int i = 0; i < p.n_x; ++i)
      for (int c = 0; c < p.n_t; ++c) m.set(c, i, true);
    return m;
  }
  if (kind == "cylinder") {
    if (!(p.omega_hi > p.omega_lo)) throw std::invalid_argument("cylinder: omega is empty");
    if (!(t_end > p.S)) throw std::invalid_argument("cylinder: empty time window");
    for (int i = 0; i < p.n_x; ++i)
      for (int c = 0; c < p.n_t; ++c) {
        const double t = m.t_mid(c), x = m.x_mid(i);
        m.set(c, i, t > p.S && t < t_end && x > p.omega_lo && x < p.omega_hi);
      }
    return m;
  }
  if (kind == "zigzag") {
    if (!(p.eps > 0.0)) throw std::invalid_argument("zigzag: eps must be positive");
    for (int i = 0; i < p.n_x; ++i) {
      const double f = zigzag_profile(m.x_mid(i));
      for (int c = 0; c < p.n_t; ++c) {
        const double t = m.t_mid(c);
        m.set(c, i, t > f && t < f + p.eps);
      }
    }
    return m;
  }
  if (kind == "cusp") {
    if (!(t_end > p.S)) throw std::invalid_argument("cusp: empty time window");
    // The vertex sits on a cell midpoint so the raster sees the degenerate column.
    const int i0 = std::clamp(static_cast<int>(std::lround(p.x0 * p.n_x - 0.5)), 0, p.n_x - 1);
    const double x0 = m.x_mid(i0);
    for (int i = 0; i < p.n_x; ++i) {
      const double edge = t_end - std::cbrt(std::abs(m.x_mid(i) - x0));
      for (int c = 0; c < p.n_t; ++c) {
        const double t = m.t_mid(c);
        m.set(c, i, t >= edge && t > p.S && t < t_end);
      }
    }
    return m;
  }
  if (kind == "ball_complement") {
    if (!(p.radius > 0.0)) throw std::invalid_argument("ball_complement: radius must be positive");
    for (int i = 0; i < p.n_x; ++i)
      for (int c = 0; c < p.n_t; ++c) m.set(c, i, std::abs(m.x_mid(i) - p.x0) >= p.radius);
    return m;
  }
  if (kind == "random_rects") {
    if (p.count < 1) throw std::invalid_argument("random_rects: count must be positive");
    std::mt19937_64 rng(p.seed);
    for (int r = 0; r < p.count; ++r) {
      const double t0 = uniform01(rng) * p.T;
      const double len = (0.1 + 0.4 * uniform01(rng)) * p.T;
      const double x0 = uniform01(rng);
      const double w = 0.05 + 0.3 * uniform01(rng);
      for (int i = 0; i < p.n_x; ++i)
        for (int c = 0; c < p.n_t; ++c) {
          const double t = m.t_mid(c), x = m.x_mid(i);
          if (t > t0 && t < t0 + len && x > x0 && x < x0 + w) m.set(c, i, true);
        }
    }
    return m;
  }
  throw std::invalid_argument("unknown mask kind '" + kind + "'");
}

double slice_measure(const Mask& q, int x_cell, double S, double T) {
  double acc = 0.0;
  const double h = q.dt();
  for (int c = 0; c < q.n_t(); ++c) {
    if (!q.at(c, x_cell)) continue;
    const double lo = std::max(S, c * h);
    const double hi = std::min(T, (c + 1) * h);
    if (hi > lo) acc += hi - lo;
  }
  return acc;
}

double moc_functional(const Mask& q, double S, double T) {
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < q.n_x(); ++i) best = std::min(best, slice_measure(q, i, S, T));
  return best;
}

double ball_average(const Mask& q, double r, double T) {
  if (!(r > 0.0)) throw std::invalid_argument("ball_average: r must be positive");
  std::vector<double> col(static_cast<std::size_t>(q.n_x()));
  for (int i = 0; i < q.n_x(); ++i) col[static_cast<std::size_t>(i)] = slice_measure(q, i, 0.0, T);
  double best = std::numeric_limits<double>::infinity();
  const double dx = q.dx();
  for (int k = 0; k < q.n_x(); ++k) {
    const double lo = std::max(0.0, q.x_mid(k) - r);
    const double hi = std::min(1.0, q.x_mid(k) + r);
    double num = 0.0, den = 0.0;
    for (int i = 0; i < q.n_x(); ++i) {
      const double w = std::min(hi, (i + 1) * dx) - std::max(lo, i * dx);
      if (w <= 0.0) continue;
      num += w * col[static_cast<std::size_t>(i)];
      den += w;
    }
    best = std::min(best, num / den);
  }
  return best;
}

std::vector<double> weighted_slices(const Mask& q, const ExpPolyFn& m, double S, double T) {
  const double h = q.dt();
  std::vector<double> cell(static_cast<std::size_t>(q.n_t()), 0.0);
  for (int c = 0; c < q.n_t(); ++c) {
    const double lo = std::max(S, c * h);
    const double hi = std::min(T, (c + 1) * h);
    if (hi > lo)
      cell[static_cast<std::size_t>(c)] =
          integrate([&](double t) { return std::abs(m.eval(t)); }, lo, hi, 1e-15, 1e-12).value;
  }
  std::vector<double> out(static_cast<std::size_t>(q.n_x()), 0.0);
  for (int i = 0; i < q.n_x(); ++i)
    for (int c = 0; c < q.n_t(); ++c)
      if (q.at(c, i)) out[static_cast<std::size_t>(i)] += cell[static_cast<std::size_t>(c)];
  return out;
}

double weighted_slice(const Mask& q, const ExpPolyFn& m, double S, double T, int x_cell) {
  return weighted_slices(q, m, S, T)[static_cast<std::size_t>(x_cell)];
}

namespace {

template <class F>
double bisect(const F& f, double lo, double hi) {
  double flo = f(lo);
  for (int it = 0; it < 200 && hi - lo > 1e-15 * (1.0 + std::abs(lo)); ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if (fm == 0.0) return mid;
    if ((fm > 0.0) == (flo > 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace

std::vector<Root> find_roots(const ExpPolyFn& f, double a, double b) {
  if (f.is_zero()) throw std::invalid_argument("find_roots: f vanishes identically");
  constexpr int kSamples = 4096;
  const double h = (b - a) / kSamples;
  const double scale = max_abs(f, a, b);
  const ExpPolyFn df = f.derivative(1);
  std::vector<double> ts(kSamples + 1), fs(kSamples + 1);
  for (int i = 0; i <= kSamples; ++i) {
    ts[static_cast<std::size_t>(i)] = a + h * i;
    fs[static_cast<std::size_t>(i)] = f(ts[static_cast<std::size_t>(i)]);
  }
  std::vector<double> cand;
  for (int i = 0; i <= kSamples; ++i) {
    const auto u = static_cast<std::size_t>(i);
    if (std::abs(fs[u]) <= 1e-13 * scale) cand.push_back(ts[u]);
    if (i < kSamples && fs[u] * fs[u + 1] < 0.0) cand.push_back(bisect(f, ts[u], ts[u + 1]));
    // touching zeros: local minima of |f| refined on the zero of f'
    if (i > 0 && i < kSamples && std::abs(fs[u]) <= std::abs(fs[u - 1]) &&
        std::abs(fs[u]) <= std::abs(fs[u + 1]) && fs[u - 1] * fs[u + 1] > 0.0) {
      const double lo = ts[u - 1], hi = ts[u + 1];
      if (df(lo) * df(hi) < 0.0) {
        const double t = bisect(df, lo, hi);
        if (std::abs(f(t)) <= 1e-9 * scale) cand.push_back(t);
      }
    }
  }
  std::sort(cand.begin(), cand.end());
  std::vector<Root> roots;
  for (double t : cand) {
    if (!roots.empty() && std::abs(t - roots.back().t) <= 1e-8 * (1.0 + std::abs(b - a))) continue;
    int order = 0;
    ExpPolyFn d = f;
    while (order <= 64 && !(std::abs(d(t)) > 1e-9 * kernel_c_norm(f, order, b))) {
      ++order;
      d = d.derivative(1);
    }
    if (order > 64) throw std::runtime_error("root isolation failed near t = " + std::to_string(t));
    if (order == 0) continue;
    roots.push_back({t, order});
  }
  return roots;
}

LowerBoundCheck analytic_lower_bound_check(const Mask& q, const ExpPolyFn& f, double S, double T) {
  LowerBoundCheck out;
  out.roots = find_roots(f, S, T);
  for (const auto& r : out.roots) out.beta = std::max(out.beta, r.order);
  const int m = std::max<int>(1, static_cast<int>(out.roots.size()));
  // |f(t)| >= C2 min_j |t - t_j|^beta, sampled.
  constexpr int kSamples = 8192;
  double c2 = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= kSamples; ++i) {
    const double t = S + (T - S) * i / kSamples;
    double dist = std::numeric_limits<double>::infinity();
    for (const auto& r : out.roots) dist = std::min(dist, std::abs(t - r.t));
    const double denom = out.roots.empty() ? 1.0 : std::pow(dist, out.beta);
    if (denom <= 0.0) continue;
    c2 = std::min(c2, std::abs(f(t)) / denom);
  }
  c2 *= 0.5;
  out.C = 2.0 * c2 / (out.beta + 1) * std::pow(1.0 / (2.0 * m), out.beta + 1);
  const auto lhs = weighted_slices(q, f, S, T);
  out.worst_ratio = std::numeric_limits<double>::infinity();
  for (int i = 0; i < q.n_x(); ++i) {
    const double rhs = out.C * std::pow(slice_measure(q, i, S, T), out.beta + 1);
    const double l = lhs[static_cast<std::size_t>(i)];
    if (l < rhs * (1.0 - 1e-12)) ++out.violations;
    if (rhs > 0.0) out.worst_ratio = std::min(out.worst_ratio, l / rhs);
  }
  out.verified = out.violations == 0;
  return out;
}

}  // namespace memflow
