#include "memflow/exp_poly.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>

namespace memflow {

namespace {

using cplx = std::complex<double>;

constexpr double kDropTol = 1e-15;
constexpr double kRateTol = 1e-12;

const std::array<double, 171>& factorials() {
  static const std::array<double, 171> table = [] {
    std::array<double, 171> f{};
    f[0] = 1.0;
    for (std::size_t i = 1; i < f.size(); ++i) f[i] = f[i - 1] * static_cast<double>(i);
    return f;
  }();
  return table;
}

double fact(int n) {
  if (n < 0 || n > 170) throw std::out_of_range("factorial argument out of range");
  return factorials()[static_cast<std::size_t>(n)];
}

double binom(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  return std::round(fact(n) / (fact(k) * fact(n - k)));
}

bool same_rate(cplx a, cplx b) {
  return std::abs(a - b) <= kRateTol * (1.0 + std::abs(a) + std::abs(b));
}

void add_to(std::vector<cplx>& poly, std::size_t m, cplx c) {
  if (poly.size() <= m) poly.resize(m + 1, cplx{0.0, 0.0});
  poly[m] += c;
}

// Horner evaluation of sum_m poly[m] t^m.
cplx horner(const std::vector<cplx>& poly, double t) {
  cplx acc{0.0, 0.0};
  for (auto it = poly.rbegin(); it != poly.rend(); ++it) acc = acc * t + *it;
  return acc;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

ExpPolyFn::ExpPolyFn(std::vector<Group> groups) : groups_(std::move(groups)) { canonicalize(); }

ExpPolyFn::ExpPolyFn(const std::vector<ExpPolyTerm>& terms) {
  for (const auto& term : terms) {
    if (term.power < 0) throw std::invalid_argument("negative power in exp-poly term");
    double b = term.freq;
    double c = term.coeff;
    if (b < 0.0) {
      b = -b;
      if (term.phase == Phase::Sin) c = -c;
    }
    const auto m = static_cast<std::size_t>(term.power);
    if (b == 0.0) {
      if (term.phase == Phase::Sin) continue;
      Group g{cplx{term.rate, 0.0}, {}};
      add_to(g.poly, m, cplx{c, 0.0});
      groups_.push_back(std::move(g));
      continue;
    }
    // cos(bt) = (e^{ibt}+e^{-ibt})/2 ; sin(bt) = (e^{ibt}-e^{-ibt})/(2i)
    const cplx upper = term.phase == Phase::Cos ? cplx{c / 2.0, 0.0} : cplx{0.0, -c / 2.0};
    Group gu{cplx{term.rate, b}, {}};
    Group gl{cplx{term.rate, -b}, {}};
    add_to(gu.poly, m, upper);
    add_to(gl.poly, m, std::conj(upper));
    groups_.push_back(std::move(gu));
    groups_.push_back(std::move(gl));
  }
  canonicalize();
}

ExpPolyFn ExpPolyFn::constant(double c) { return monomial(c, 0); }

ExpPolyFn ExpPolyFn::monomial(double coeff, int power, double rate, double freq, Phase phase) {
  return ExpPolyFn(std::vector<ExpPolyTerm>{{coeff, power, rate, freq, phase}});
}

void ExpPolyFn::canonicalize() {
  // Merge equal rates.
  std::vector<Group> merged;
  for (auto& g : groups_) {
    auto it = std::find_if(merged.begin(), merged.end(),
                           [&](const Group& h) { return same_rate(h.rate, g.rate); });
    if (it == merged.end()) {
      merged.push_back(std::move(g));
    } else {
      for (std::size_t m = 0; m < g.poly.size(); ++m) add_to(it->poly, m, g.poly[m]);
    }
  }
  // Project onto the conjugate-symmetric (real-valued) part.
  std::vector<Group> sym;
  sym.reserve(merged.size());
  for (const auto& g : merged) {
    Group out{g.rate, {}};
    if (g.rate.imag() == 0.0) {
      out.poly.resize(g.poly.size());
      for (std::size_t m = 0; m < g.poly.size(); ++m) out.poly[m] = cplx{g.poly[m].real(), 0.0};
    } else {
      const cplx conj_rate = std::conj(g.rate);
      auto partner = std::find_if(merged.begin(), merged.end(),
                                  [&](const Group& h) { return same_rate(h.rate, conj_rate); });
      const std::size_t n = std::max(g.poly.size(), partner == merged.end() ? std::size_t{0}
                                                                           : partner->poly.size());
      out.poly.assign(n, cplx{0.0, 0.0});
      for (std::size_t m = 0; m < g.poly.size(); ++m) out.poly[m] += 0.5 * g.poly[m];
      if (partner != merged.end()) {
        for (std::size_t m = 0; m < partner->poly.size(); ++m)
          out.poly[m] += 0.5 * std::conj(partner->poly[m]);
      }
      bool has_partner = partner != merged.end();
      if (!has_partner) {
        // The missing conjugate group is created with the mirrored coefficients.
        Group mirror{conj_rate, {}};
        mirror.poly.resize(n);
        for (std::size_t m = 0; m < n; ++m) mirror.poly[m] = std::conj(out.poly[m]);
        sym.push_back(std::move(mirror));
      }
    }
    sym.push_back(std::move(out));
  }
  // Drop negligible coefficients.
  double largest = 0.0;
  for (const auto& g : sym)
    for (const auto& c : g.poly) largest = std::max(largest, std::abs(c));
  const double cut = kDropTol * largest;
  std::vector<Group> kept;
  for (auto& g : sym) {
    for (auto& c : g.poly) {
      if (std::abs(c.real()) <= cut) c.real(0.0);
      if (std::abs(c.imag()) <= cut) c.imag(0.0);
    }
    while (!g.poly.empty() && g.poly.back() == cplx{0.0, 0.0}) g.poly.pop_back();
    if (!g.poly.empty()) kept.push_back(std::move(g));
  }
  std::sort(kept.begin(), kept.end(), [](const Group& a, const Group& b) {
    if (a.rate.real() != b.rate.real()) return a.rate.real() < b.rate.real();
    return a.rate.imag() < b.rate.imag();
  });
  // A conjugate pair merged from both sides appears twice; keep one copy each.
  std::vector<Group> unique;
  for (auto& g : kept) {
    if (!unique.empty() && same_rate(unique.back().rate, g.rate)) continue;
    unique.push_back(std::move(g));
  }
  groups_ = std::move(unique);
}

double ExpPolyFn::eval(double t) const {
  double acc = 0.0;
  for (const auto& g : groups_) {
    if (g.rate.imag() == 0.0) {
      double p = 0.0;
      for (auto it = g.poly.rbegin(); it != g.poly.rend(); ++it) p = p * t + it->real();
      acc += p * std::exp(g.rate.real() * t);
    } else {
      acc += (horner(g.poly, t) * std::exp(g.rate * t)).real();
    }
  }
  return acc;
}

std::vector<ExpPolyTerm> ExpPolyFn::terms() const {
  std::vector<ExpPolyTerm> out;
  for (const auto& g : groups_) {
    const double a = g.rate.real();
    const double b = g.rate.imag();
    if (b < 0.0) continue;
    for (std::size_t m = 0; m < g.poly.size(); ++m) {
      const cplx c = g.poly[m];
      const int power = static_cast<int>(m);
      if (b == 0.0) {
        if (c.real() != 0.0) out.push_back({c.real(), power, a, 0.0, Phase::Cos});
      } else {
        if (c.real() != 0.0) out.push_back({2.0 * c.real(), power, a, b, Phase::Cos});
        if (c.imag() != 0.0) out.push_back({-2.0 * c.imag(), power, a, b, Phase::Sin});
      }
    }
  }
  return out;
}

std::vector<std::complex<double>> ExpPolyFn::rates() const {
  std::vector<cplx> r;
  r.reserve(groups_.size());
  for (const auto& g : groups_) r.push_back(g.rate);
  return r;
}

int ExpPolyFn::max_power() const {
  int p = -1;
  for (const auto& g : groups_) p = std::max(p, static_cast<int>(g.poly.size()) - 1);
  return p;
}

ExpPolyFn ExpPolyFn::derivative(int k) const {
  if (k < 0) throw std::invalid_argument("derivative order must be nonnegative");
  std::vector<Group> cur = groups_;
  for (int step = 0; step < k; ++step) {
    for (auto& g : cur) {
      std::vector<cplx> next(g.poly.size(), cplx{0.0, 0.0});
      for (std::size_t m = 0; m < g.poly.size(); ++m) {
        next[m] += g.rate * g.poly[m];
        if (m > 0) next[m - 1] += static_cast<double>(m) * g.poly[m];
      }
      g.poly = std::move(next);
    }
  }
  return ExpPolyFn(std::move(cur));
}

ExpPolyFn ExpPolyFn::operator+(const ExpPolyFn& other) const {
  std::vector<Group> all = groups_;
  all.insert(all.end(), other.groups_.begin(), other.groups_.end());
  return ExpPolyFn(std::move(all));
}

ExpPolyFn ExpPolyFn::operator-(const ExpPolyFn& other) const { return *this + other * -1.0; }

ExpPolyFn ExpPolyFn::operator*(double s) const {
  std::vector<Group> all = groups_;
  for (auto& g : all)
    for (auto& c : g.poly) c *= s;
  return ExpPolyFn(std::move(all));
}

ExpPolyFn ExpPolyFn::operator*(const ExpPolyFn& other) const {
  std::vector<Group> all;
  for (const auto& f : groups_) {
    for (const auto& g : other.groups_) {
      Group h{f.rate + g.rate, std::vector<cplx>(f.poly.size() + g.poly.size() - 1, cplx{})};
      for (std::size_t i = 0; i < f.poly.size(); ++i)
        for (std::size_t j = 0; j < g.poly.size(); ++j) h.poly[i + j] += f.poly[i] * g.poly[j];
      all.push_back(std::move(h));
    }
  }
  return ExpPolyFn(std::move(all));
}

std::string ExpPolyFn::to_string() const {
  const auto ts = terms();
  if (ts.empty()) return "0";
  std::string out;
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const auto& term = ts[k];
    if (k > 0) out += " + ";
    out += format_double(term.coeff);
    if (term.power == 1) out += "*t";
    if (term.power > 1) out += "*t^" + std::to_string(term.power);
    if (term.rate != 0.0) out += "*exp(" + format_double(term.rate) + "*t)";
    if (term.freq != 0.0)
      out += std::string(term.phase == Phase::Cos ? "*cos(" : "*sin(") + format_double(term.freq) +
             "*t)";
  }
  return out;
}

double eval(const ExpPolyFn& f, double t) { return f.eval(t); }

ExpPolyFn derivative(const ExpPolyFn& f, int k) { return f.derivative(k); }

ExpPolyFn convolve(const ExpPolyFn& f, const ExpPolyFn& g) {
  using Group = ExpPolyFn::Group;
  std::vector<Group> out;
  for (const auto& fg : f.groups_) {
    for (const auto& gg : g.groups_) {
      const cplx lam = fg.rate;
      const cplx mu = gg.rate;
      for (std::size_t mi = 0; mi < fg.poly.size(); ++mi) {
        if (fg.poly[mi] == cplx{}) continue;
        for (std::size_t ni = 0; ni < gg.poly.size(); ++ni) {
          if (gg.poly[ni] == cplx{}) continue;
          const int m = static_cast<int>(mi);
          const int n = static_cast<int>(ni);
          const cplx c = fg.poly[mi] * gg.poly[ni];
          const double mn = fact(m) * fact(n);
          if (same_rate(lam, mu)) {
            // t^m e^{lt} * t^n e^{lt} = m! n! / (m+n+1)! t^{m+n+1} e^{lt}
            Group h{lam, {}};
            add_to(h.poly, static_cast<std::size_t>(m + n + 1), c * (mn / fact(m + n + 1)));
            out.push_back(std::move(h));
            continue;
          }
          // Partial fractions of m! n! / ((s-l)^a (s-mu)^b), a = m+1, b = n+1.
          const int a = m + 1;
          const int b = n + 1;
          const cplx d = lam - mu;
          Group hl{lam, {}};
          for (int i = 1; i <= a; ++i) {
            const double sign = ((a - i) % 2 == 0) ? 1.0 : -1.0;
            const cplx coef = sign * binom(a + b - i - 1, a - i) * std::pow(d, -(a + b - i));
            add_to(hl.poly, static_cast<std::size_t>(i - 1), c * mn * coef / fact(i - 1));
          }
          Group hm{mu, {}};
          for (int k = 1; k <= b; ++k) {
            const double sign = ((b - k) % 2 == 0) ? 1.0 : -1.0;
            const cplx coef = sign * binom(a + b - k - 1, b - k) * std::pow(-d, -(a + b - k));
            add_to(hm.poly, static_cast<std::size_t>(k - 1), c * mn * coef / fact(k - 1));
          }
          out.push_back(std::move(hl));
          out.push_back(std::move(hm));
        }
      }
    }
  }
  return ExpPolyFn(std::move(out));
}

ExpPolyFn conv_power(const ExpPolyFn& m, int j) {
  if (j < 0) throw std::invalid_argument("convolution power must be nonnegative");
  if (j == 0) return ExpPolyFn::zero();
  ExpPolyFn acc = m;
  for (int k = 1; k < j; ++k) acc = convolve(acc, m);
  return acc;
}

// ---------------------------------------------------------------------------
// Parser

namespace {

class Parser {
 public:
  explicit Parser(std::string_view text) : s_(text) {}

  ExpPolyFn parse() {
    skip_ws();
    if (pos_ >= s_.size()) fail("empty kernel expression");
    ExpPolyFn f = expr();
    skip_ws();
    if (pos_ != s_.size()) fail("unexpected character '" + std::string(1, s_[pos_]) + "'");
    return f;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, pos_); }

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  ExpPolyFn expr() {
    skip_ws();
    double sign = 1.0;
    if (accept('-')) sign = -1.0;
    else accept('+');
    ExpPolyFn acc = term() * sign;
    while (true) {
      if (accept('+')) acc = acc + term();
      else if (accept('-')) acc = acc - term();
      else break;
    }
    return acc;
  }

  ExpPolyFn term() {
    ExpPolyFn acc = power();
    while (true) {
      if (accept('*')) {
        acc = acc * power();
      } else if (accept('/')) {
        skip_ws();
        const std::size_t at = pos_;
        ExpPolyFn den = power();
        const auto& g = den.groups();
        if (g.size() != 1 || g[0].rate != std::complex<double>{} || g[0].poly.size() != 1) {
          pos_ = at;
          fail("division is only allowed by a number");
        }
        acc = acc * (1.0 / g[0].poly[0].real());
      } else {
        break;
      }
    }
    return acc;
  }

  ExpPolyFn power() {
    ExpPolyFn base = unary();
    if (accept('^')) {
      skip_ws();
      const std::size_t at = pos_;
      std::size_t end = pos_;
      while (end < s_.size() && std::isdigit(static_cast<unsigned char>(s_[end]))) ++end;
      if (end == pos_) fail("expected nonnegative integer exponent");
      const int n = std::atoi(std::string(s_.substr(pos_, end - pos_)).c_str());
      pos_ = end;
      if (n > 64) {
        pos_ = at;
        fail("exponent too large");
      }
      ExpPolyFn acc = ExpPolyFn::constant(1.0);
      for (int k = 0; k < n; ++k) acc = acc * base;
      return acc;
    }
    return base;
  }

  ExpPolyFn unary() {
    if (accept('-')) return unary() * -1.0;
    if (accept('+')) return unary();
    return primary();
  }

  ExpPolyFn primary() {
    skip_ws();
    if (pos_ >= s_.size()) fail("unexpected end of expression");
    const char c = s_[pos_];
    if (c == '(') {
      ++pos_;
      ExpPolyFn inner = expr();
      if (!accept(')')) fail("expected ')'");
      return inner;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c))) {
      std::size_t end = pos_;
      while (end < s_.size() && std::isalpha(static_cast<unsigned char>(s_[end]))) ++end;
      const std::string name(s_.substr(pos_, end - pos_));
      const std::size_t at = pos_;
      pos_ = end;
      if (name == "t") return ExpPolyFn::monomial(1.0, 1);
      if (name == "exp" || name == "cos" || name == "sin") {
        if (!accept('(')) fail("expected '(' after " + name);
        const std::size_t arg_at = pos_;
        ExpPolyFn arg = expr();
        if (!accept(')')) fail("expected ')'");
        const double k = linear_coefficient(arg, arg_at);
        if (name == "exp") return ExpPolyFn::monomial(1.0, 0, k);
        if (name == "cos") return ExpPolyFn::monomial(1.0, 0, 0.0, k, Phase::Cos);
        return ExpPolyFn::monomial(1.0, 0, 0.0, k, Phase::Sin);
      }
      pos_ = at;
      fail("unknown identifier '" + name + "'");
    }
    fail("unexpected character '" + std::string(1, c) + "'");
  }

  // Argument of exp/cos/sin must be k*t.
  double linear_coefficient(const ExpPolyFn& arg, std::size_t at) {
    if (arg.is_zero()) return 0.0;
    const auto& g = arg.groups();
    if (g.size() == 1 && g[0].rate == std::complex<double>{} && g[0].poly.size() == 2 &&
        g[0].poly[0] == std::complex<double>{})
      return g[0].poly[1].real();
    pos_ = at;
    fail("function argument must be linear in t (k*t)");
  }

  ExpPolyFn number() {
    const char* begin = s_.data() + pos_;
    // strtod needs a terminated buffer.
    std::string tail(s_.substr(pos_));
    char* end = nullptr;
    const double v = std::strtod(tail.c_str(), &end);
    const std::size_t used = static_cast<std::size_t>(end - tail.c_str());
    (void)begin;
    if (used == 0 || !std::isfinite(v)) fail("malformed number");
    pos_ += used;
    return ExpPolyFn::constant(v);
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace

ExpPolyFn ExpPolyFn::parse(std::string_view text) { return Parser(text).parse(); }

}  // namespace memflow
