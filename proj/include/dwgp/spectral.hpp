#pragma once

// Double-well potentials, the finite-difference Hamiltonian, its ground
// doublet and the tunnelling splitting.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "dwgp/core.hpp"
#include "dwgp/errors.hpp"
#include "dwgp/parallel.hpp"
#include "dwgp/tridiagonal.hpp"

namespace dwgp {

// ---------------------------------------------------------------------------
// Potentials

class PotentialSpec {
 public:
  enum class Form { Quartic, Tabulated };

  /// V(x) = V0 ((x/a)^2 - 1)^2.
  static PotentialSpec quartic(double barrier, double well) {
    if (!(barrier > 0.0) || !(well > 0.0)) {
      throw DomainError("PotentialSpec::quartic: V0 and a must be positive");
    }
    PotentialSpec p;
    p.form_ = Form::Quartic;
    p.v0_ = barrier;
    p.a_ = well;
    return p;
  }

  /// Piecewise-linear interpolation of (x, V) samples, constant beyond the
  /// ends.  Repeated abscissae encode jumps.
  static PotentialSpec tabulated(std::vector<double> xs, std::vector<double> vs) {
    if (xs.size() != vs.size() || xs.size() < 2) {
      throw UsageError("PotentialSpec::tabulated: need >= 2 (x, V) pairs of equal length");
    }
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (!std::isfinite(xs[i]) || !std::isfinite(vs[i])) {
        throw DomainError("PotentialSpec::tabulated: non-finite sample");
      }
      if (i > 0 && xs[i] < xs[i - 1]) {
        throw UsageError("PotentialSpec::tabulated: abscissae must be non-decreasing");
      }
    }
    PotentialSpec p;
    p.form_ = Form::Tabulated;
    p.xs_ = std::move(xs);
    p.vs_ = std::move(vs);
    const auto it = std::min_element(p.vs_.begin(), p.vs_.end());
    p.vmin_ = *it;
    // Rightmost global minimum gives the well position.
    double pos = 0.0;
    for (std::size_t i = 0; i < p.vs_.size(); ++i) {
      if (p.vs_[i] == p.vmin_) pos = std::max(pos, p.xs_[i]);
    }
    p.a_ = pos;
    return p;
  }

  /// Tabulates f on the nodes of grid plus the closing node +L.
  static PotentialSpec sampled(const Grid1D& grid, const std::function<double(double)>& f) {
    std::vector<double> xs(grid.size() + 1), vs(grid.size() + 1);
    for (std::size_t j = 0; j <= grid.size(); ++j) {
      xs[j] = (j == grid.size()) ? grid.half_width() : grid.x(j);
      vs[j] = f(xs[j]);
    }
    return tabulated(std::move(xs), std::move(vs));
  }

  /// Two-column CSV "x,V"; lines starting with '#' and a non-numeric header
  /// line are skipped.
  static PotentialSpec from_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("PotentialSpec::from_csv: cannot open " + path);
    std::vector<double> xs, vs;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      std::replace(line.begin(), line.end(), ',', ' ');
      std::istringstream ss(line);
      double x = 0.0, v = 0.0;
      if (!(ss >> x >> v)) {
        if (xs.empty() && lineno == 1) continue;
        throw UsageError(path + ":" + std::to_string(lineno) + ": expected two numbers");
      }
      xs.push_back(x);
      vs.push_back(v);
    }
    return tabulated(std::move(xs), std::move(vs));
  }

  Form form() const noexcept { return form_; }
  bool is_quartic() const noexcept { return form_ == Form::Quartic; }

  /// V0 for the quartic; V(0) - V_min otherwise.
  double barrier_height() const { return is_quartic() ? v0_ : (*this)(0.0) - vmin_; }

  /// Position of the right minimum.
  double well_position() const noexcept { return a_; }

  double v_min() const noexcept { return is_quartic() ? 0.0 : vmin_; }

  /// Limit of V at infinity (the tabulated form is continued by constants).
  double v_infinity() const noexcept {
    return is_quartic() ? kInf : std::min(vs_.front(), vs_.back());
  }

  const std::vector<double>& table_x() const noexcept { return xs_; }
  const std::vector<double>& table_v() const noexcept { return vs_; }

  double operator()(double x) const {
    if (is_quartic()) {
      const double u = x / a_;
      const double w = u * u - 1.0;
      return v0_ * w * w;
    }
    if (x <= xs_.front()) return vs_.front();
    if (x >= xs_.back()) return vs_.back();
    const auto k = static_cast<std::size_t>(
        std::upper_bound(xs_.begin(), xs_.end(), x) - xs_.begin());
    const double x0 = xs_[k - 1], x1 = xs_[k];
    const double s = (x - x0) / (x1 - x0);
    return vs_[k - 1] + s * (vs_[k] - vs_[k - 1]);
  }

  std::vector<double> sample(const Grid1D& grid) const {
    std::vector<double> v(grid.size());
    for (std::size_t j = 0; j < grid.size(); ++j) {
      v[j] = (*this)(grid.x(j));
      if (!std::isfinite(v[j])) throw DomainError("PotentialSpec: non-finite sample");
    }
    return v;
  }

 private:
  PotentialSpec() = default;
  Form form_ = Form::Quartic;
  double v0_ = 0.0;
  double a_ = 0.0;
  double vmin_ = 0.0;
  std::vector<double> xs_, vs_;
};

struct ValidationCheck {
  std::string name;  ///< symmetry | smoothness | two-minima | confinement
  bool passed;
  std::string detail;
};

struct ValidationReport {
  std::vector<ValidationCheck> checks;
  double symmetry_defect = 0.0;
  double smoothness_defect = 0.0;
  std::vector<double> minima;             ///< refined positions of the global minima
  std::vector<double> second_derivatives; ///< numerical V'' at each minimum node
  double confinement_margin = 0.0;        ///< min_{|x| >= R} V - V_min

  bool ok() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
  }

  std::string failures() const {
    std::string s;
    for (const auto& c : checks) {
      if (c.passed) continue;
      if (!s.empty()) s += "; ";
      s += c.name + " check failed (" + c.detail + ")";
    }
    return s;
  }
};

/// Grid proxies for: V even, V twice differentiable, exactly two
/// non-degenerate global minima at +-a, V bounded away from V_min far out.
inline ValidationReport validate_potential(const PotentialSpec& spec, const Grid1D& grid) {
  ValidationReport rep;
  const std::vector<double> v = spec.sample(grid);
  const std::size_t n = grid.size();
  const double dx = grid.dx();
  double scale = 1.0;
  for (double x : v) scale = std::max(scale, std::abs(x));

  // Symmetry.
  double sym = std::abs(spec(-grid.half_width()) - spec(grid.half_width()));
  for (std::size_t j = 0; j < n; ++j) sym = std::max(sym, std::abs(v[j] - v[grid.mirror(j)]));
  rep.symmetry_defect = sym;
  {
    std::ostringstream d;
    d << "max |V(x) - V(-x)| = " << sym;
    rep.checks.push_back({"symmetry", sym <= 1e-12 * scale, d.str()});
  }

  // Smoothness: second differences at spacing dx and 2dx must agree.
  double d2max = 1.0, smooth = 0.0;
  for (std::size_t j = 2; j + 2 < n; ++j) {
    const double d1 = (v[j + 1] - 2.0 * v[j] + v[j - 1]) / (dx * dx);
    const double d2 = (v[j + 2] - 2.0 * v[j] + v[j - 2]) / (4.0 * dx * dx);
    d2max = std::max(d2max, std::abs(d1));
    smooth = std::max(smooth, std::abs(d1 - d2));
  }
  rep.smoothness_defect = smooth / d2max;
  {
    std::ostringstream d;
    d << "relative second-difference mismatch = " << rep.smoothness_defect;
    rep.checks.push_back({"smoothness", rep.smoothness_defect <= 0.05, d.str()});
  }

  // Two non-degenerate global minima, mirror images of each other.
  const double vg = *std::min_element(v.begin() + 1, v.end());
  std::vector<std::size_t> idx;
  for (std::size_t j = 1; j + 1 < n; ++j) {
    if (v[j] <= v[j - 1] && v[j] <= v[j + 1] && v[j] <= vg + 1e-9 * scale) idx.push_back(j);
  }
  bool two = idx.size() == 2 && grid.mirror(idx[0]) == idx[1];
  for (std::size_t j : idx) {
    const double d2 = (v[j + 1] - 2.0 * v[j] + v[j - 1]) / (dx * dx);
    rep.second_derivatives.push_back(d2);
    const double den = v[j + 1] - 2.0 * v[j] + v[j - 1];
    const double shift = den > 0.0 ? 0.5 * (v[j - 1] - v[j + 1]) / den : 0.0;
    rep.minima.push_back(grid.x(j) + shift * dx);
    if (!(d2 > 1e-8 * scale)) two = false;
  }
  {
    std::ostringstream d;
    d << idx.size() << " global minim" << (idx.size() == 1 ? "um" : "a") << " found";
    for (std::size_t k = 0; k < rep.minima.size(); ++k) {
      d << (k == 0 ? " at " : ", ") << rep.minima[k] << " (V''=" << rep.second_derivatives[k]
        << ")";
    }
    rep.checks.push_back({"two-minima", two, d.str()});
  }

  // Confinement beyond min(2a, 0.9L).
  double a = 0.0;
  for (double m : rep.minima) a = std::max(a, std::abs(m));
  if (a == 0.0) a = spec.well_position();
  const double radius = std::min(2.0 * a, 0.9 * grid.half_width());
  double far = kInf;
  for (std::size_t j = 0; j < n; ++j) {
    if (std::abs(grid.x(j)) >= radius) far = std::min(far, v[j]);
  }
  rep.confinement_margin = far - vg;
  {
    std::ostringstream d;
    d << "min V over |x| >= " << radius << " exceeds V_min by " << rep.confinement_margin;
    rep.checks.push_back({"confinement", rep.confinement_margin > 1e-9 * scale, d.str()});
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Hamiltonian

/// -(hbar^2/2m) d^2/dx^2 + V by 3-point differences with psi(+-L) = 0.
class DiscreteHamiltonian {
 public:
  DiscreteHamiltonian(const Grid1D& grid, std::vector<double> potential, double hbar,
                      double mass)
      : grid_(grid), v_(std::move(potential)), hbar_(hbar), mass_(mass) {
    if (!(hbar > 0.0) || !(mass > 0.0)) {
      throw DomainError("DiscreteHamiltonian: hbar and m must be positive");
    }
    if (v_.size() != grid.size()) throw UsageError("DiscreteHamiltonian: potential size");
    hop_ = hbar * hbar / (2.0 * mass * grid.dx() * grid.dx());
  }

  const Grid1D& grid() const noexcept { return grid_; }
  double hbar() const noexcept { return hbar_; }
  double mass() const noexcept { return mass_; }
  /// Kinetic coupling t = hbar^2 / (2 m dx^2).
  double hopping() const noexcept { return hop_; }
  const std::vector<double>& potential() const noexcept { return v_; }

  /// Node 0 (x = -L, identified with +L) is the Dirichlet node: its value is
  /// treated as zero and the result there is zero.
  Wavefunction apply(const Wavefunction& f) const {
    require_same_grid(grid_, f.grid(), "DiscreteHamiltonian::apply");
    const std::size_t n = grid_.size();
    std::vector<Complex> out(n, Complex{});
    for (std::size_t j = 1; j < n; ++j) {
      const Complex left = (j > 1) ? f[j - 1] : Complex{};
      const Complex right = (j + 1 < n) ? f[j + 1] : Complex{};
      out[j] = (v_[j] + 2.0 * hop_) * f[j] - hop_ * (left + right);
    }
    return Wavefunction(grid_, std::move(out));
  }

  /// Matrix on the interior nodes 1..n-1.
  SymTridiagonal matrix() const {
    const std::size_t n = grid_.size();
    SymTridiagonal t;
    t.diag.resize(n - 1);
    t.offdiag.assign(n - 2, -hop_);
    for (std::size_t j = 1; j < n; ++j) t.diag[j - 1] = v_[j] + 2.0 * hop_;
    return t;
  }

  /// Even functions, unknowns at x_i = i dx, i = 0..n/2-1, symmetrised with
  /// u_i = sqrt(w_i dx) f_i (w_0 = 1, w_i = 2).
  SymTridiagonal even_sector() const {
    const std::size_t c = grid_.center();
    SymTridiagonal t;
    t.diag.resize(c);
    t.offdiag.assign(c - 1, -hop_);
    t.offdiag[0] = -std::numbers::sqrt2 * hop_;
    for (std::size_t i = 0; i < c; ++i) t.diag[i] = v_[c + i] + 2.0 * hop_;
    return t;
  }

  /// Odd functions, unknowns at x_i = i dx, i = 1..n/2-1, u_i = sqrt(2 dx) f_i.
  SymTridiagonal odd_sector() const {
    const std::size_t c = grid_.center();
    SymTridiagonal t;
    t.diag.resize(c - 1);
    t.offdiag.assign(c - 2, -hop_);
    for (std::size_t i = 1; i < c; ++i) t.diag[i - 1] = v_[c + i] + 2.0 * hop_;
    return t;
  }

 private:
  Grid1D grid_;
  std::vector<double> v_;
  double hbar_;
  double mass_;
  double hop_;
};

struct AssembleOptions {
  bool validate = true;
};

inline DiscreteHamiltonian assemble_hamiltonian(const Grid1D& grid, const PotentialSpec& spec,
                                                double hbar, double m,
                                                AssembleOptions opt = {}) {
  if (!(hbar > 0.0) || !(m > 0.0)) {
    throw DomainError("assemble_hamiltonian: hbar and m must be positive");
  }
  if (opt.validate) {
    const auto rep = validate_potential(spec, grid);
    if (!rep.ok()) throw ValidationError("potential rejected: " + rep.failures());
  }
  return DiscreteHamiltonian(grid, spec.sample(grid), hbar, m);
}

// ---------------------------------------------------------------------------
// Ground doublet

struct DoubletBasis {
  DiscreteHamiltonian hamiltonian;
  double lambda1;
  double lambda2;         ///< lambda1 + 2 omega
  double lambda2_direct;  ///< odd-sector eigenvalue as returned by bisection
  double omega;
  double Omega;
  std::string omega_method;  ///< "wronskian" or "difference"
  Wavefunction phi1, phi2, phiR, phiL;
  double c;        ///< int phi_R^4
  double c_norm;   ///< ||phi_R^2|| = sqrt(c)
  double gap3;     ///< lambda3 - lambda2
  std::vector<double> excited;  ///< lambda3, lambda4, ...
  double residual1, residual2;  ///< ||H phi - lambda phi||
  double truncation_defect;     ///< max |phi_{1,2}| on the nodes next to +-L
  double localization;          ///< int_{x>0} phi_R^2

  const Grid1D& grid() const noexcept { return phi1.grid(); }
  double hbar() const noexcept { return hamiltonian.hbar(); }
  double mass() const noexcept { return hamiltonian.mass(); }
};

struct DoubletOptions {
  /// Enforce the double-well claims: separated doublet and localisation.
  bool double_well = true;
  double truncation_tol = 1e-12;
};

namespace detail {

// Flip so the largest-magnitude sample on x > 0 is positive.
inline void fix_sign(std::vector<double>& f) {
  std::size_t best = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (std::abs(f[i]) > std::abs(f[best])) best = i;
  }
  if (f[best] < 0.0) {
    for (double& x : f) x = -x;
  }
}

}  // namespace detail

inline DoubletBasis lowest_doublet(const DiscreteHamiltonian& H, int k_extra = 1,
                                   DoubletOptions opt = {}) {
  if (k_extra < 1) throw UsageError("lowest_doublet: k_extra must be >= 1");
  const Grid1D& g = H.grid();
  const std::size_t n = g.size();
  const std::size_t c = g.center();
  const double dx = g.dx();
  const double t = H.hopping();

  const auto even = lowest_eigenpairs(H.even_sector(), static_cast<std::size_t>(k_extra) + 1);
  const auto odd = lowest_eigenpairs(H.odd_sector(), static_cast<std::size_t>(k_extra) + 1);

  // Half-line physical values f(i dx), i = 0..c-1 (odd: f(0) = 0).
  std::vector<double> fe(c), fo(c, 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    fe[i] = even[0].vector[i] / std::sqrt((i == 0 ? 1.0 : 2.0) * dx);
  }
  for (std::size_t i = 1; i < c; ++i) fo[i] = odd[0].vector[i - 1] / std::sqrt(2.0 * dx);
  detail::fix_sign(fe);
  detail::fix_sign(fo);

  const double lambda1 = even[0].value;
  const double lambda2_direct = odd[0].value;
  // Below ~eps |T| the two bisection results are indistinguishable; the
  // ordering is then settled by the sign of the Wronskian splitting.
  const double resolution =
      64.0 * std::numeric_limits<double>::epsilon() * H.even_sector().max_abs_entry();
  if (lambda1 > lambda2_direct + resolution) {
    throw ModelError("lowest_doublet: ground state is not even (lambda_even >= lambda_odd)");
  }

  // Discrete Wronskian: (l2 - l1) sum_{i>=1} f1 f2 = t f1(0) f2(dx), exact for
  // the 3-point operator and free of cancellation.
  double overlap = 0.0;
  for (std::size_t i = 1; i < c; ++i) overlap += fe[i] * fo[i];
  double omega = 0.0;
  std::string method;
  if (overlap * dx > 0.1) {
    omega = 0.5 * t * fe[0] * fo[1] / overlap;
    method = "wronskian";
  } else {
    omega = 0.5 * (lambda2_direct - lambda1);
    method = "difference";
  }
  if (!(omega > 0.0)) {
    throw SolverError("lowest_doublet: non-positive splitting omega = " + std::to_string(omega));
  }
  const double lambda2 = lambda1 + 2.0 * omega;

  std::vector<double> excited;
  for (std::size_t k = 1; k < even.size(); ++k) excited.push_back(even[k].value);
  for (std::size_t k = 1; k < odd.size(); ++k) excited.push_back(odd[k].value);
  std::sort(excited.begin(), excited.end());
  excited.resize(static_cast<std::size_t>(k_extra));
  const double gap3 = excited.front() - lambda2;

  std::vector<Complex> p1(n), p2(n), pr(n), pl(n);
  for (std::size_t i = 0; i < c; ++i) {
    p1[c + i] = fe[i];
    p2[c + i] = fo[i];
    if (i > 0) {
      p1[c - i] = fe[i];
      p2[c - i] = -fo[i];
    }
  }
  p1[0] = p2[0] = 0.0;
  const double r2 = std::numbers::sqrt2 / 2.0;
  for (std::size_t j = 0; j < n; ++j) {
    pr[j] = r2 * (p1[j] + p2[j]);
    pl[j] = r2 * (p1[j] - p2[j]);
  }

  Wavefunction phi1(g, std::move(p1)), phi2(g, std::move(p2));
  Wavefunction phiR(g, std::move(pr)), phiL(g, std::move(pl));

  double cval = 0.0, loc = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double r = phiR[j].real();
    cval += r * r * r * r;
    if (g.x(j) > 0.0) loc += r * r;
  }
  cval *= dx;
  loc *= dx;

  const double res1 = lp_norm(H.apply(phi1) - Complex(lambda1) * phi1, 2.0);
  const double res2 = lp_norm(H.apply(phi2) - Complex(lambda2) * phi2, 2.0);
  const double trunc = std::max({std::abs(phi1[1]), std::abs(phi1[n - 1]),
                                 std::abs(phi2[1]), std::abs(phi2[n - 1])});

  if (!(res1 <= 1e-8 * std::abs(lambda1) + 1e-14) ||
      !(res2 <= 1e-8 * std::abs(lambda2) + 1e-14)) {
    std::ostringstream msg;
    msg << "lowest_doublet: eigen-residuals too large: " << res1 << ", " << res2;
    throw SolverError(msg.str());
  }
  if (trunc > opt.truncation_tol) {
    std::ostringstream msg;
    msg << "lowest_doublet: eigenstates do not vanish at the domain ends (max "
        << trunc << " > " << opt.truncation_tol << "); enlarge L";
    throw ModelError(msg.str());
  }
  if (opt.double_well) {
    if (!(gap3 > 2.0 * omega)) {
      std::ostringstream msg;
      msg << "lowest_doublet: doublet not separated, gap3 = " << gap3 << " <= 2 omega = "
          << 2.0 * omega;
      throw ModelError(msg.str());
    }
    if (!(loc >= 1.0 - 10.0 * omega - 1e-12)) {  // 1e-12: rounding in the sum
      std::ostringstream msg;
      msg << "lowest_doublet: phi_R not localised on x > 0 (weight " << loc << ")";
      throw ModelError(msg.str());
    }
  }

  return DoubletBasis{H,
                      lambda1,
                      lambda2,
                      lambda2_direct,
                      omega,
                      lambda1 + omega,
                      method,
                      std::move(phi1),
                      std::move(phi2),
                      std::move(phiR),
                      std::move(phiL),
                      cval,
                      std::sqrt(cval),
                      gap3,
                      std::move(excited),
                      res1,
                      res2,
                      trunc,
                      loc};
}

namespace detail {

inline double overlap_sup_direct(const DoubletBasis& b) {
  double m = 0.0;
  for (std::size_t j = 0; j < b.phiR.size(); ++j) {
    m = std::max(m, std::abs(b.phiR[j] * b.phiL[j]));
  }
  return m;
}

}  // namespace detail

/// max_j |phi_R(x_j) phi_L(x_j)|.
///
/// phi_L is O(omega) inside the right well, far below the rounding noise of
/// phi1 - phi2.  On x > 0 the difference d = phi1 - phi2 solves
///   (A - lambda1) d = t phi1(0) e_1 - 2 omega phi2
/// with A the odd-sector matrix.  The phi2 component of d is fixed by the
/// normalisation, so only the reduced resolvent (well conditioned) is needed.
inline double overlap_sup(const DoubletBasis& b) {
  const Grid1D& g = b.grid();
  const std::size_t c = g.center();
  const std::size_t m = c - 1;
  const double dx = g.dx();
  const double fe0 = b.phi1[c].real();

  std::vector<double> q(m), r(m, 0.0);
  double qq = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    q[i] = b.phi2[c + 1 + i].real();
    qq += q[i] * q[i];
  }
  auto project = [&](std::vector<double>& v) {
    double qv = 0.0;
    for (std::size_t i = 0; i < m; ++i) qv += q[i] * v[i];
    for (std::size_t i = 0; i < m; ++i) v[i] -= qv / qq * q[i];
  };

  const auto A = b.hamiltonian.odd_sector();
  std::vector<double> diag(A.diag);
  for (double& x : diag) x -= b.lambda1;
  const detail::TridiagonalLU lu(A.offdiag, diag, A.offdiag, 1e-300);

  r[0] = b.hamiltonian.hopping() * fe0;
  project(r);
  std::vector<double> x = r;
  lu.solve(x);
  project(x);
  for (int it = 0; it < 2; ++it) {
    std::vector<double> res(m);
    for (std::size_t i = 0; i < m; ++i) {
      double s = diag[i] * x[i];
      if (i > 0) s += A.offdiag[i - 1] * x[i - 1];
      if (i + 1 < m) s += A.offdiag[i] * x[i + 1];
      res[i] = r[i] - s;
    }
    project(res);
    lu.solve(res);
    project(res);
    for (std::size_t i = 0; i < m; ++i) x[i] += res[i];
  }

  // <phi2, d> = -(phi1(0)^2 dx + |d|^2) / 2 in the half-line norm.
  double s = fe0 * fe0 * dx;
  for (double v : x) s += 2.0 * dx * v * v;
  if (!(s < 1.0)) return detail::overlap_sup_direct(b);
  const double alpha = -s / (1.0 + std::sqrt(1.0 - s)) / (2.0 * dx * qq);

  double best = 0.5 * fe0 * fe0;
  for (std::size_t i = 0; i < m; ++i) {
    const double d = x[i] + alpha * q[i];
    best = std::max(best, 0.5 * std::abs(d * (2.0 * q[i] + d)));
  }
  if (!std::isfinite(best)) return detail::overlap_sup_direct(b);
  return best;
}

struct LpRow {
  int state;  ///< 1 or 2
  double p;
  double norm;
  double scaled;  ///< norm * hbar^((p-2)/(4p))
};

struct LpReport {
  std::vector<LpRow> rows;

  double scaled(int state, double p) const {
    for (const auto& r : rows) {
      if (r.state == state && r.p == p) return r.scaled;
    }
    throw UsageError("LpReport: no such row");
  }
};

/// Semiclassical exponent for the L^p norm of a state concentrated on a
/// length sqrt(hbar): ||f||_p ~ hbar^(-(p-2)/(4p)).
inline double lp_scale_exponent(double p) {
  return std::isinf(p) ? 0.25 : (p - 2.0) / (4.0 * p);
}

inline LpReport eigenstate_lp_report(const DoubletBasis& b, double hbar) {
  LpReport rep;
  for (int s = 1; s <= 2; ++s) {
    const Wavefunction& f = (s == 1) ? b.phi1 : b.phi2;
    for (double p : {2.0, 4.0, kInf}) {
      const double nrm = lp_norm(f, p);
      rep.rows.push_back({s, p, nrm, nrm * std::pow(hbar, lp_scale_exponent(p))});
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Agmon distance and splitting scan

/// Smallest positive x with V(x) = V_min + delta.
inline double well_boundary(const PotentialSpec& spec, double delta) {
  if (!(delta >= 0.0)) throw DomainError("well_boundary: delta must be >= 0");
  if (!(delta < spec.barrier_height())) {
    throw DomainError("well_boundary: delta reaches the barrier top, wells merge");
  }
  if (spec.is_quartic()) {
    return spec.well_position() * std::sqrt(1.0 - std::sqrt(delta / spec.barrier_height()));
  }
  const double level = spec.v_min() + delta;
  const double a = spec.well_position();
  constexpr int kScan = 8192;
  double lo = 0.0, hi = a;
  for (int i = 1; i <= kScan; ++i) {
    const double x = a * i / kScan;
    if (spec(x) <= level) {
      hi = x;
      lo = a * (i - 1) / kScan;
      break;
    }
  }
  for (int it = 0; it < 200 && hi - lo > 4.0 * std::numeric_limits<double>::epsilon() * hi;
       ++it) {
    const double mid = 0.5 * (lo + hi);
    (spec(mid) <= level ? hi : lo) = mid;
  }
  return hi;
}

/// Gamma_delta = int_{-b}^{b} sqrt(max(V - V_min - delta, 0)) dx by composite
/// Simpson in x = b sin(theta), which removes the square-root endpoint
/// singularity at the turning point.
inline double agmon_distance(const PotentialSpec& spec, double delta = 0.0,
                             int panels = 4096) {
  const double b = well_boundary(spec, delta);
  const double level = spec.v_min() + delta;
  if (panels % 2) ++panels;
  const double h = 0.5 * std::numbers::pi / panels;
  auto f = [&](double th) {
    const double x = b * std::sin(th);
    return std::sqrt(std::max(spec(x) - level, 0.0)) * b * std::cos(th);
  };
  double s = f(0.0) + f(0.5 * std::numbers::pi);
  for (int i = 1; i < panels; ++i) s += (i % 2 ? 4.0 : 2.0) * f(i * h);
  return 2.0 * s * h / 3.0;
}

struct SplittingPoint {
  double hbar;
  double omega;  ///< NaN when not converged
  bool converged;
  std::string error;
};

struct SplittingFit {
  std::vector<SplittingPoint> points;
  double slope = 0.0;       ///< d log(omega) / d(1/hbar)
  double intercept = 0.0;
  double r_squared = 0.0;
  double rms_residual = 0.0;
  double gamma0 = 0.0;             ///< raw Agmon integral
  double gamma0_normalized = 0.0;  ///< sqrt(2m) * gamma0
  bool all_converged = false;
  bool strictly_decreasing = false;  ///< omega decreases as hbar decreases
};

inline SplittingFit splitting_scan(const PotentialSpec& spec, double m,
                                   const std::vector<double>& hbars, const Grid1D& grid,
                                   std::size_t threads = 0) {
  if (hbars.size() < 4) throw UsageError("splitting_scan: need at least 4 hbar values");
  for (std::size_t i = 1; i < hbars.size(); ++i) {
    if (!(hbars[i] < hbars[i - 1])) {
      throw UsageError("splitting_scan: hbar values must be strictly decreasing");
    }
  }
  const auto rep = validate_potential(spec, grid);
  if (!rep.ok()) throw ValidationError("potential rejected: " + rep.failures());
  const std::vector<double> v = spec.sample(grid);

  SplittingFit fit;
  fit.points = ordered_map(
      hbars,
      [&](double hb) {
        try {
          DiscreteHamiltonian H(grid, v, hb, m);
          return SplittingPoint{hb, lowest_doublet(H).omega, true, ""};
        } catch (const Error& e) {
          return SplittingPoint{hb, std::numeric_limits<double>::quiet_NaN(), false, e.what()};
        }
      },
      threads);

  fit.all_converged = true;
  fit.strictly_decreasing = true;
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < fit.points.size(); ++i) {
    const auto& p = fit.points[i];
    if (!p.converged) {
      fit.all_converged = false;
      continue;
    }
    if (i > 0 && fit.points[i - 1].converged && !(p.omega < fit.points[i - 1].omega)) {
      fit.strictly_decreasing = false;
    }
    xs.push_back(1.0 / p.hbar);
    ys.push_back(std::log(p.omega));
  }
  if (xs.size() >= 2) {
    const double k = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      mx += xs[i];
      my += ys[i];
    }
    mx /= k;
    my /= k;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      sxx += (xs[i] - mx) * (xs[i] - mx);
      sxy += (xs[i] - mx) * (ys[i] - my);
      syy += (ys[i] - my) * (ys[i] - my);
    }
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double sse = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double r = ys[i] - (fit.intercept + fit.slope * xs[i]);
      sse += r * r;
    }
    fit.r_squared = syy > 0.0 ? 1.0 - sse / syy : 1.0;
    fit.rms_residual = std::sqrt(sse / k);
  }
  fit.gamma0 = agmon_distance(spec, 0.0);
  fit.gamma0_normalized = std::sqrt(2.0 * m) * fit.gamma0;
  return fit;
}

}  // namespace dwgp
