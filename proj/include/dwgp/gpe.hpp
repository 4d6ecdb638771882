#pragma once

// Time-dependent Gross-Pitaevskii propagation
//
//   i hbar psi_t = (H0 - Omega) psi + eps |psi|^2 psi,
//
// projection on the ground doublet, remainder terms of the projected
// system, and the two-mode stability experiment.
//
// Three propagators share the same 3-point H0:
//   exponential     fourth-order exponential Runge-Kutta (Cox-Matthews) in
//                   slow time, in the eigenbasis of the even and odd parity
//                   sectors; the only method that reaches beating periods
//                   of 1e10 time units and more.
//   split-step      Strang splitting; kinetic factor by FFT with the DFT
//                   symbol of the 3-point Laplacian, periodic ends.
//   crank-nicolson  tridiagonal solve per step, Dirichlet ends, two-stage
//                   predictor-corrector for the nonlinearity.

#include <fftw3.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "dwgp/core.hpp"
#include "dwgp/errors.hpp"
#include "dwgp/parallel.hpp"
#include "dwgp/spectral.hpp"
#include "dwgp/twomode.hpp"

namespace dwgp {

enum class Method { Exponential, SplitStep, CrankNicolson };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::Exponential: return "exponential";
    case Method::SplitStep: return "split-step";
    case Method::CrankNicolson: return "crank-nicolson";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  if (s == "exponential") return Method::Exponential;
  if (s == "split-step" || s == "split_step") return Method::SplitStep;
  if (s == "crank-nicolson" || s == "crank_nicolson") return Method::CrankNicolson;
  throw UsageError("unknown method '" + s + "' (exponential | split-step | crank-nicolson)");
}

struct EvolutionConfig {
  std::shared_ptr<const DoubletBasis> basis;
  double epsilon = 0.0;
  double t_end = 0.0;
  double dt = 0.0;  ///< 0 selects the method default (a fixed fraction of the beating period)
  Method method = Method::Exponential;
  std::size_t stride = 1;
  /// false: report the state of i hbar psi' = H0 psi + eps|psi|^2 psi.  The
  /// offset Omega is a global phase; the exponential and Crank-Nicolson paths
  /// integrate in the shifted frame and apply exp(-i Omega t / hbar) exactly,
  /// the split-step path puts V rather than V - Omega in its phase step.
  bool omega_shift = true;
  bool allow_general_initial = false;  ///< skip the doublet-span requirement on psi0
  bool store_states = false;
  double eta_max = 100.0;
  std::optional<double> attractive_cap;  ///< max |eps| for eps < 0; default eta_max omega / c
  double norm_tolerance = 1e-6;
  std::optional<ObservableX> observable;

  double hbar() const { return basis->hbar(); }
  double mass() const { return basis->mass(); }
  double eta() const { return epsilon * basis->c / basis->omega; }
  /// Linear beating period pi hbar / omega.
  double period() const { return std::numbers::pi * hbar() / basis->omega; }
  double default_dt() const {
    return period() / (method == Method::Exponential ? 4000.0 : 20000.0);
  }
};

struct TrajectorySample {
  double t;
  double tau;  ///< omega t / hbar
  double norm;
  double energy;
  Complex aR;
  Complex aL;
  double psi_c_norm;
  double z;
  double center_of_mass;
  double completeness_defect;  ///< | |aR|^2 + |aL|^2 + ||psi_c||^2 - ||psi||^2 |
  double orthogonality_defect; ///< max |<psi_c, phi_R>|, |<psi_c, phi_L>|
  std::optional<Wavefunction> state;
};

struct Trajectory {
  Method method = Method::Exponential;
  double dt = 0.0;
  std::size_t steps = 0;
  double hbar = 0.0, omega = 0.0, epsilon = 0.0, eta = 0.0;
  std::vector<TrajectorySample> samples;
  std::vector<std::string> warnings;

  double max_norm_drift() const {
    double m = 0.0;
    for (const auto& s : samples) m = std::max(m, std::abs(s.norm - samples.front().norm));
    return m;
  }
  double max_energy_drift() const {
    const double e0 = samples.front().energy;
    double m = 0.0;
    for (const auto& s : samples) m = std::max(m, std::abs(s.energy - e0));
    return m / std::max(std::abs(e0), 1e-300);
  }
  double max_completeness_defect() const {
    double m = 0.0;
    for (const auto& s : samples) m = std::max(m, s.completeness_defect);
    return m;
  }
};

// ---------------------------------------------------------------------------
// Diagnostics on a single state

/// E = (hbar^2/2m) sum |psi_{j+1} - psi_j|^2 / dx + sum V |psi|^2 dx
///     + (eps/2) sum |psi|^4 dx, differences taken periodically.  For
/// states vanishing at the Dirichlet node this is <psi, H0 psi> exactly.
inline double energy(const Wavefunction& psi, const EvolutionConfig& cfg) {
  const auto& H = cfg.basis->hamiltonian;
  require_same_grid(psi.grid(), H.grid(), "energy");
  const std::size_t n = psi.size();
  const double dx = psi.grid().dx();
  const auto& v = H.potential();
  double kin = 0.0, pot = 0.0, quartic = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double d = std::norm(psi[(j + 1) % n] - psi[j]);
    const double r = std::norm(psi[j]);
    kin += d;
    pot += v[j] * r;
    quartic += r * r;
  }
  const double t = H.hopping();  // hbar^2 / (2 m dx^2)
  return (t * kin + pot + 0.5 * cfg.epsilon * quartic) * dx;
}

/// sqrt(sum |psi_{j+1} - psi_j|^2 / dx), periodic.
inline double gradient_norm(const Wavefunction& psi) {
  const std::size_t n = psi.size();
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) s += std::norm(psi[(j + 1) % n] - psi[j]);
  return std::sqrt(s / psi.grid().dx());
}

struct ProjectionDecomposition {
  Complex aR;
  Complex aL;
  Wavefunction psi_c;
  double psi_c_norm;
  double completeness_defect;
  double orthogonality_defect;
  double reconstruction_defect;
};

inline ProjectionDecomposition project_doublet(const Wavefunction& psi, const DoubletBasis& b,
                                               bool check = true) {
  require_same_grid(psi.grid(), b.grid(), "project_doublet");
  const Complex aR = inner_product(b.phiR, psi);
  const Complex aL = inner_product(b.phiL, psi);
  Wavefunction pc = psi - aR * b.phiR - aL * b.phiL;
  const double pcn = lp_norm(pc, 2.0);
  const double nrm2 = std::pow(lp_norm(psi, 2.0), 2);
  const double comp = std::abs(std::norm(aR) + std::norm(aL) + pcn * pcn - nrm2);
  const double orth =
      std::max(std::abs(inner_product(pc, b.phiR)), std::abs(inner_product(pc, b.phiL)));
  const double recon = lp_norm(psi - (aR * b.phiR + aL * b.phiL + pc), 2.0);
  if (check && (comp > 1e-10 * std::max(1.0, nrm2) || orth > 1e-10 * std::max(1.0, nrm2))) {
    std::ostringstream msg;
    msg << "project_doublet: completeness defect " << comp << ", orthogonality defect "
        << orth;
    throw ConsistencyError(msg.str());
  }
  return {aR, aL, std::move(pc), pcn, comp, orth, recon};
}

struct Remainders {
  Complex rR;
  Complex rL;
};

/// Remainders of the projected system, in the expanded form
///   r_R = <phi_R, |psi|^2 F_L> + a_R <|phi_R|^2, |F_L|^2 + a_R phi_R conj(F_L)
///                                               + conj(a_R) conj(phi_R) F_L>
/// with F_L = a_L phi_L + psi_c (and R <-> L).  The result is compared with
/// the defining form <phi_R, |psi|^2 psi> - c |a_R|^2 a_R.
inline Remainders remainder_terms(const Wavefunction& psi, const DoubletBasis& b) {
  const auto d = project_doublet(psi, b, false);
  const std::size_t n = psi.size();
  const double dx = psi.grid().dx();
  auto one = [&](const Wavefunction& own, Complex a_own, Complex a_other,
                 const Wavefunction& other) {
    Complex t1{}, t2{}, direct{};
    for (std::size_t j = 0; j < n; ++j) {
      const Complex f = a_other * other[j] + d.psi_c[j];  // F_other
      const Complex p = own[j];
      const double mod2 = std::norm(psi[j]);
      t1 += std::conj(p) * mod2 * f;
      t2 += std::norm(p) * (std::norm(f) + a_own * p * std::conj(f) +
                            std::conj(a_own) * std::conj(p) * f);
      direct += std::conj(p) * mod2 * psi[j];
    }
    const Complex r = (t1 + a_own * t2) * dx;
    const Complex r_def = direct * dx - b.c * std::norm(a_own) * a_own;
    const double scale = std::max({1.0, b.c, std::abs(direct * dx)});
    if (std::abs(r - r_def) > 1e-9 * scale) {
      std::ostringstream msg;
      msg << "remainder_terms: expanded and defining forms differ by " << std::abs(r - r_def);
      throw ConsistencyError(msg.str());
    }
    return r;
  };
  return {one(b.phiR, d.aR, d.aL, b.phiL), one(b.phiL, d.aL, d.aR, b.phiR)};
}

// ---------------------------------------------------------------------------
// Propagators

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

// phi_1, phi_2, phi_3 of the exponential integrator.
inline void phi_functions(Complex z, Complex& p1, Complex& p2, Complex& p3) {
  if (std::abs(z) < 0.5) {
    // p_k = sum_m z^m / (m + k)!
    Complex zm = 1.0;
    double f1 = 1.0, f2 = 0.5, f3 = 1.0 / 6.0;
    p1 = p2 = p3 = 0.0;
    for (int m = 0; m < 25; ++m) {
      p1 += zm * f1;
      p2 += zm * f2;
      p3 += zm * f3;
      zm *= z;
      f1 /= m + 2;
      f2 /= m + 3;
      f3 /= m + 4;
    }
    return;
  }
  const Complex e = std::exp(z);
  p1 = (e - 1.0) / z;
  p2 = (e - 1.0 - z) / (z * z);
  p3 = (e - 1.0 - z - 0.5 * z * z) / (z * z * z);
}

using CVec = Eigen::VectorXcd;

// Coefficients of one parity sector in the exponential integrator.
struct Sector {
  Eigen::MatrixXd U;     // columns: orthonormal eigenvectors in the u-representation
  Eigen::MatrixXd Ut;    // U transposed, stored (the transposed product is slow)
  Eigen::VectorXd lam;   // eigenvalues (doublet entry replaced)
  Eigen::VectorXd wsq;   // sqrt(w_i dx): u_i = wsq_i f(x_i)
  CVec E, E2, Q, F1, F2, F3;
};

inline Eigen::Map<Eigen::Matrix<double, 2, Eigen::Dynamic>> as_real(CVec& v) {
  return {reinterpret_cast<double*>(v.data()), 2, v.size()};
}
inline Eigen::Map<const Eigen::Matrix<double, 2, Eigen::Dynamic>> as_real(const CVec& v) {
  return {reinterpret_cast<const double*>(v.data()), 2, v.size()};
}

class ExponentialStepper {
 public:
  ExponentialStepper(const DoubletBasis& b, double epsilon, double dt) : basis_(b) {
    const auto& H = b.hamiltonian;
    const Grid1D& g = H.grid();
    c_ = g.center();
    dx_ = g.dx();
    g_ = epsilon / b.omega;
    h_ = dt * b.omega / b.hbar();
    build(even_, H.even_sector(), true);
    build(odd_, H.odd_sector(), false);
  }

  double slow_step() const { return h_; }

  /// Sector coefficients of psi = aR phi_R + aL phi_L + psi_c.
  void load(const Wavefunction& psi, Complex aR, Complex aL, const Wavefunction& psi_c) {
    (void)psi;
    ce_ = CVec::Zero(even_.U.cols());
    co_ = CVec::Zero(odd_.U.cols());
    CVec e(c_), o(c_ - 1);
    for (std::size_t i = 0; i < c_; ++i) {
      const Complex plus = psi_c[c_ + i];
      const Complex minus = (i == 0) ? plus : psi_c[c_ - i];
      e[static_cast<Eigen::Index>(i)] = 0.5 * (plus + minus) * even_.wsq[static_cast<Eigen::Index>(i)];
      if (i > 0) {
        o[static_cast<Eigen::Index>(i - 1)] =
            0.5 * (plus - minus) * odd_.wsq[static_cast<Eigen::Index>(i - 1)];
      }
    }
    as_real(ce_).noalias() = as_real(e) * even_.U;
    as_real(co_).noalias() = as_real(o) * odd_.U;
    const double r = std::numbers::sqrt2 / 2.0;
    ce_[0] = r * (aR + aL);
    co_[0] = r * (aR - aL);
  }

  void step() {
    const CVec ue = ce_, uo = co_;
    CVec nue, nuo, nae, nao, nbe, nbo, nce, nco;
    rhs(ue, uo, nue, nuo);
    CVec ae = even_.E2.cwiseProduct(ue) + even_.Q.cwiseProduct(nue);
    CVec ao = odd_.E2.cwiseProduct(uo) + odd_.Q.cwiseProduct(nuo);
    rhs(ae, ao, nae, nao);
    CVec be = even_.E2.cwiseProduct(ue) + even_.Q.cwiseProduct(nae);
    CVec bo = odd_.E2.cwiseProduct(uo) + odd_.Q.cwiseProduct(nao);
    rhs(be, bo, nbe, nbo);
    CVec cce = even_.E2.cwiseProduct(ae) + even_.Q.cwiseProduct(2.0 * nbe - nue);
    CVec cco = odd_.E2.cwiseProduct(ao) + odd_.Q.cwiseProduct(2.0 * nbo - nuo);
    rhs(cce, cco, nce, nco);
    ce_ = even_.E.cwiseProduct(ue) + even_.F1.cwiseProduct(nue) +
          even_.F2.cwiseProduct(nae + nbe) + even_.F3.cwiseProduct(nce);
    co_ = odd_.E.cwiseProduct(uo) + odd_.F1.cwiseProduct(nuo) +
          odd_.F2.cwiseProduct(nao + nbo) + odd_.F3.cwiseProduct(nco);
  }

  Complex aR() const { return std::numbers::sqrt2 / 2.0 * (ce_[0] + co_[0]); }
  Complex aL() const { return std::numbers::sqrt2 / 2.0 * (ce_[0] - co_[0]); }

  /// ||psi_c|| straight from the excited-mode coefficients.
  double psi_c_norm() const {
    double s = 0.0;
    for (Eigen::Index k = 1; k < ce_.size(); ++k) s += std::norm(ce_[k]);
    for (Eigen::Index k = 1; k < co_.size(); ++k) s += std::norm(co_[k]);
    return std::sqrt(s);
  }

  Wavefunction state() const {
    CVec pe, po;
    half_values(ce_, co_, pe, po);
    const std::size_t n = 2 * c_;
    std::vector<Complex> v(n, Complex{});
    for (std::size_t i = 0; i < c_; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      v[c_ + i] = pe[ii] + po[ii];
      if (i > 0) v[c_ - i] = pe[ii] - po[ii];
    }
    return Wavefunction(basis_.grid(), std::move(v));
  }

 private:
  void build(Sector& s, const SymTridiagonal& t, bool even) {
    const auto m = static_cast<Eigen::Index>(t.size());
    Eigen::VectorXd d(m), e(m - 1);
    for (Eigen::Index i = 0; i < m; ++i) d[i] = t.diag[static_cast<std::size_t>(i)];
    for (Eigen::Index i = 0; i + 1 < m; ++i) e[i] = t.offdiag[static_cast<std::size_t>(i)];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(d, e, Eigen::ComputeEigenvectors);
    if (es.info() != Eigen::Success) throw SolverError("exponential propagator: sector eigensolve failed");
    s.U = es.eigenvectors();
    s.lam = es.eigenvalues();

    s.wsq.resize(m);
    const std::size_t off = even ? 0 : 1;
    for (Eigen::Index i = 0; i < m; ++i) {
      const std::size_t xi = static_cast<std::size_t>(i) + off;
      s.wsq[i] = std::sqrt((xi == 0 ? 1.0 : 2.0) * dx_);
    }
    // Column 0 becomes the doublet member of the basis, the rest is
    // re-orthogonalised against it.
    const Wavefunction& f = even ? basis_.phi1 : basis_.phi2;
    Eigen::VectorXd v0(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      v0[i] = s.wsq[i] * f[c_ + static_cast<std::size_t>(i) + off].real();
    }
    v0.normalize();
    s.U.col(0) = v0;
    for (Eigen::Index k = 1; k < m; ++k) {
      auto col = s.U.col(k);
      col -= v0.dot(col) * v0;
      col.normalize();
    }
    s.lam[0] = even ? basis_.lambda1 : basis_.lambda2;
    s.Ut = s.U.transpose();

    s.E.resize(m);
    s.E2.resize(m);
    s.Q.resize(m);
    s.F1.resize(m);
    s.F2.resize(m);
    s.F3.resize(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      // Doublet modes carry their (unit) frequency explicitly.
      const Complex L = k == 0 ? Complex{}
                               : Complex(0.0, -(s.lam[k] - basis_.Omega) / basis_.omega);
      Complex p1, p2, p3, q1, q2, q3;
      phi_functions(L * h_, p1, p2, p3);
      phi_functions(0.5 * L * h_, q1, q2, q3);
      s.E[k] = std::exp(L * h_);
      s.E2[k] = std::exp(0.5 * L * h_);
      s.Q[k] = 0.5 * h_ * q1;
      s.F1[k] = h_ * (p1 - 3.0 * p2 + 4.0 * p3);
      s.F2[k] = 2.0 * h_ * (p2 - 2.0 * p3);
      s.F3[k] = h_ * (4.0 * p3 - p2);
    }
  }

  // Physical even / odd parts on x_i = i dx, i = 0..c-1.
  void half_values(const CVec& ce, const CVec& co, CVec& pe, CVec& po) const {
    pe.resize(static_cast<Eigen::Index>(c_));
    po.setZero(static_cast<Eigen::Index>(c_));
    as_real(pe).noalias() = as_real(ce) * even_.Ut;
    CVec tmp(static_cast<Eigen::Index>(c_ - 1));
    as_real(tmp).noalias() = as_real(co) * odd_.Ut;
    for (Eigen::Index i = 0; i < pe.size(); ++i) pe[i] /= even_.wsq[i];
    for (Eigen::Index i = 0; i < tmp.size(); ++i) po[i + 1] = tmp[i] / odd_.wsq[i];
  }

  // Nonlinear part of the slow-time right-hand side plus the explicit
  // doublet coupling.
  void rhs(const CVec& ce, const CVec& co, CVec& ne, CVec& no) const {
    ne.setZero(ce.size());
    no.setZero(co.size());
    if (g_ != 0.0) {
      CVec pe, po;
      half_values(ce, co, pe, po);
      CVec se(pe.size()), so(po.size() - 1);
      for (Eigen::Index i = 0; i < pe.size(); ++i) {
        const Complex p = pe[i] + po[i], m = pe[i] - po[i];
        const Complex np = std::norm(p) * p, nm = std::norm(m) * m;
        se[i] = 0.5 * (np + nm) * even_.wsq[i];
        if (i > 0) so[i - 1] = 0.5 * (np - nm) * odd_.wsq[i - 1];
      }
      as_real(ne).noalias() = as_real(se) * even_.U;
      as_real(no).noalias() = as_real(so) * odd_.U;
      ne *= Complex(0.0, -g_);
      no *= Complex(0.0, -g_);
    }
    ne[0] += Complex(0.0, 1.0) * ce[0];
    no[0] -= Complex(0.0, 1.0) * co[0];
  }

  const DoubletBasis& basis_;
  std::size_t c_ = 0;
  double dx_ = 0.0, g_ = 0.0, h_ = 0.0;
  Sector even_, odd_;
  CVec ce_, co_;
};

class SplitStepper {
 public:
  SplitStepper(const DiscreteHamiltonian& H, double epsilon, double dt, double shift)
      : n_(H.grid().size()), eps_(epsilon), dt_(dt), hbar_(H.hbar()) {
    buf_ = fftw_alloc_complex(n_);
    {
      std::lock_guard<std::mutex> lock(fftw_planner_mutex());
      fwd_ = fftw_plan_dft_1d(static_cast<int>(n_), buf_, buf_, FFTW_FORWARD, FFTW_ESTIMATE);
      bwd_ = fftw_plan_dft_1d(static_cast<int>(n_), buf_, buf_, FFTW_BACKWARD, FFTW_ESTIMATE);
    }
    kin_.resize(n_);
    const double t = H.hopping();
    for (std::size_t q = 0; q < n_; ++q) {
      const double symbol = 2.0 * t * (1.0 - std::cos(2.0 * std::numbers::pi * q / n_));
      kin_[q] = std::polar(1.0 / static_cast<double>(n_), -0.5 * symbol * dt / hbar_);
    }
    vshift_.resize(n_);
    for (std::size_t j = 0; j < n_; ++j) vshift_[j] = H.potential()[j] - shift;
  }
  ~SplitStepper() {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(bwd_);
    fftw_free(buf_);
  }
  SplitStepper(const SplitStepper&) = delete;
  SplitStepper& operator=(const SplitStepper&) = delete;

  void step(std::span<Complex> psi) {
    kinetic_half(psi);
    for (std::size_t j = 0; j < n_; ++j) {
      const double phase = -(vshift_[j] + eps_ * std::norm(psi[j])) * dt_ / hbar_;
      psi[j] *= std::polar(1.0, phase);
    }
    kinetic_half(psi);
  }

  double max_phase_rate(std::span<const Complex> psi) const {
    double m = 0.0;
    for (std::size_t j = 0; j < n_; ++j) {
      m = std::max(m, std::abs(vshift_[j] + eps_ * std::norm(psi[j])));
    }
    return m;
  }

 private:
  void kinetic_half(std::span<Complex> psi) {
    auto* b = reinterpret_cast<Complex*>(buf_);
    std::copy(psi.begin(), psi.end(), b);
    fftw_execute(fwd_);
    for (std::size_t q = 0; q < n_; ++q) b[q] *= kin_[q];
    fftw_execute(bwd_);
    std::copy(b, b + n_, psi.begin());
  }

  std::size_t n_;
  double eps_, dt_, hbar_;
  fftw_complex* buf_ = nullptr;
  fftw_plan fwd_ = nullptr, bwd_ = nullptr;
  std::vector<Complex> kin_;
  std::vector<double> vshift_;
};

class CrankNicolsonStepper {
 public:
  CrankNicolsonStepper(const DiscreteHamiltonian& H, double epsilon, double dt, double shift)
      : n_(H.grid().size()), eps_(epsilon), t_(H.hopping()), a_(0.5 * dt / H.hbar()) {
    vshift_.resize(n_);
    for (std::size_t j = 0; j < n_; ++j) vshift_[j] = H.potential()[j] - shift;
    cp_.resize(n_);
    dp_.resize(n_);
    rhs_.resize(n_);
    work_.resize(n_);
    dens_.resize(n_);
  }

  void step(std::span<Complex> psi) {
    for (std::size_t j = 0; j < n_; ++j) dens_[j] = std::norm(psi[j]);
    std::vector<Complex> pred(psi.begin(), psi.end());
    solve(psi, pred);
    for (std::size_t j = 0; j < n_; ++j) dens_[j] = std::norm(0.5 * (psi[j] + pred[j]));
    std::vector<Complex> corr(n_);
    solve(psi, corr);
    std::copy(corr.begin(), corr.end(), psi.begin());
  }

  double max_phase_rate(std::span<const Complex> psi) const {
    double m = 0.0;
    for (std::size_t j = 0; j < n_; ++j) {
      m = std::max(m, std::abs(vshift_[j] + eps_ * std::norm(psi[j])));
    }
    return m;
  }

 private:
  // (1 + i a H) out = (1 - i a H) in on nodes 1..n-1, out[0] = 0.
  void solve(std::span<const Complex> in, std::vector<Complex>& out) {
    const Complex I(0.0, 1.0);
    const std::size_t n = n_;
    auto hdiag = [&](std::size_t j) { return vshift_[j] + 2.0 * t_ + eps_ * dens_[j]; };
    for (std::size_t j = 1; j < n; ++j) {
      Complex hpsi = hdiag(j) * in[j];
      if (j > 1) hpsi -= t_ * in[j - 1];
      if (j + 1 < n) hpsi -= t_ * in[j + 1];
      rhs_[j] = in[j] - I * a_ * hpsi;
    }
    const Complex off = I * a_ * (-t_);
    // Thomas sweep.
    Complex diag = 1.0 + I * a_ * hdiag(1);
    cp_[1] = off / diag;
    dp_[1] = rhs_[1] / diag;
    for (std::size_t j = 2; j < n; ++j) {
      const Complex den = 1.0 + I * a_ * hdiag(j) - off * cp_[j - 1];
      cp_[j] = off / den;
      dp_[j] = (rhs_[j] - off * dp_[j - 1]) / den;
    }
    out.assign(n, Complex{});
    out[n - 1] = dp_[n - 1];
    for (std::size_t j = n - 2; j >= 1; --j) out[j] = dp_[j] - cp_[j] * out[j + 1];
  }

  std::size_t n_;
  double eps_, t_, a_;
  std::vector<double> vshift_, dens_;
  std::vector<Complex> cp_, dp_, rhs_, work_;
};

inline ObservableX default_observable(const DoubletBasis& b) {
  // Scale of X: position of the maximum of phi_R.
  std::size_t best = b.grid().center();
  for (std::size_t j = b.grid().center(); j < b.phiR.size(); ++j) {
    if (std::abs(b.phiR[j]) > std::abs(b.phiR[best])) best = j;
  }
  const double a = std::max(b.grid().x(best), b.grid().dx());
  return ObservableX::standard(b.grid(), a);
}

}  // namespace detail

inline void check_coupling(const EvolutionConfig& cfg) {
  if (!cfg.basis) throw UsageError("EvolutionConfig: basis missing");
  if (!std::isfinite(cfg.epsilon)) throw DomainError("EvolutionConfig: epsilon not finite");
  const double eta = std::abs(cfg.eta());
  if (eta > cfg.eta_max) {
    std::ostringstream msg;
    msg << "EvolutionConfig: |eps| c / omega = " << eta << " exceeds the cap " << cfg.eta_max;
    throw UsageError(msg.str());
  }
  if (cfg.epsilon < 0.0) {
    const double cap = cfg.attractive_cap.value_or(cfg.eta_max * cfg.basis->omega / cfg.basis->c);
    if (-cfg.epsilon > cap) {
      std::ostringstream msg;
      msg << "EvolutionConfig: attractive |eps| = " << -cfg.epsilon << " exceeds the cap " << cap;
      throw UsageError(msg.str());
    }
  }
}

/// Evolves psi0 to cfg.t_end; samples every cfg.stride steps and at the end.
inline Trajectory propagate(const Wavefunction& psi0, const EvolutionConfig& cfg) {
  check_coupling(cfg);
  const DoubletBasis& b = *cfg.basis;
  require_same_grid(psi0.grid(), b.grid(), "propagate");
  if (!(cfg.t_end > 0.0)) throw UsageError("propagate: t_end must be positive");
  if (cfg.stride == 0) throw UsageError("propagate: stride must be >= 1");
  const double n0 = lp_norm(psi0, 2.0);
  if (std::abs(n0 - 1.0) > 1e-10) throw UsageError("propagate: initial state is not normalised");
  const auto dec0 = project_doublet(psi0, b);
  if (!cfg.allow_general_initial && dec0.psi_c_norm > 1e-8) {
    std::ostringstream msg;
    msg << "propagate: initial state has a component " << dec0.psi_c_norm
        << " outside the doublet span (set allow_general_initial to permit)";
    throw UsageError(msg.str());
  }

  const double dt_req = cfg.dt > 0.0 ? cfg.dt : cfg.default_dt();
  const auto steps = static_cast<std::size_t>(std::max(1.0, std::ceil(cfg.t_end / dt_req - 1e-9)));
  const double dt = cfg.t_end / static_cast<double>(steps);
  const double hbar = b.hbar();
  const bool literal = cfg.method == Method::SplitStep;
  const double shift = (cfg.omega_shift || !literal) ? b.Omega : 0.0;
  auto frame = [&](double t) {
    return (cfg.omega_shift || literal) ? Complex(1.0) : std::polar(1.0, -b.Omega * t / hbar);
  };
  const ObservableX X = cfg.observable ? *cfg.observable : detail::default_observable(b);

  Trajectory tr;
  tr.method = cfg.method;
  tr.dt = dt;
  tr.steps = steps;
  tr.hbar = hbar;
  tr.omega = b.omega;
  tr.epsilon = cfg.epsilon;
  tr.eta = cfg.eta();

  auto record = [&](std::size_t k, const Wavefunction& psi,
                    const std::optional<std::pair<Complex, Complex>>& coeffs,
                    std::optional<double> pc_coeff) {
    const double t = static_cast<double>(k) * dt;
    const auto d = project_doublet(psi, b, false);
    TrajectorySample s;
    s.t = t;
    s.tau = t * b.omega / hbar;
    s.norm = lp_norm(psi, 2.0);
    s.energy = energy(psi, cfg);
    s.aR = coeffs ? coeffs->first : d.aR;
    s.aL = coeffs ? coeffs->second : d.aL;
    s.psi_c_norm = pc_coeff ? *pc_coeff : d.psi_c_norm;
    s.z = std::norm(s.aR) - std::norm(s.aL);
    s.center_of_mass = center_of_mass(psi, X);
    s.completeness_defect = d.completeness_defect;
    s.orthogonality_defect = d.orthogonality_defect;
    if (cfg.store_states) s.state = psi;
    if (std::abs(s.norm - n0) > cfg.norm_tolerance) {
      std::ostringstream msg;
      msg << "propagate: norm drift " << std::abs(s.norm - n0) << " at t = " << t;
      throw IntegrationError(msg.str(), t);
    }
    tr.samples.push_back(std::move(s));
  };
  auto due = [&](std::size_t k) { return k % cfg.stride == 0 || k == steps; };

  if (cfg.method == Method::Exponential) {
    detail::ExponentialStepper st(b, cfg.epsilon, dt);
    st.load(psi0, dec0.aR, dec0.aL, dec0.psi_c);
    // The doublet coefficients are the projection itself.
    auto emit = [&](std::size_t k) {
      const Complex ph = frame(static_cast<double>(k) * dt);
      record(k, ph * st.state(), std::make_pair(ph * st.aR(), ph * st.aL()), st.psi_c_norm());
    };
    emit(0);
    for (std::size_t k = 1; k <= steps; ++k) {
      st.step();
      if (due(k)) emit(k);
    }
  } else {
    std::vector<Complex> psi(psi0.values().begin(), psi0.values().end());
    const double limit = 0.1;
    std::optional<detail::SplitStepper> ss;
    std::optional<detail::CrankNicolsonStepper> cn;
    double rate = 0.0;
    if (cfg.method == Method::SplitStep) {
      // Periodic kinetic step vs the Dirichlet basis: fine only if the
      // doublet has decayed at the ends.
      const std::size_t n = b.grid().size();
      const double edge = std::max(std::abs(b.phi1[1]), std::abs(b.phi1[n - 1]));
      if (edge > 1e-12) {
        std::ostringstream msg;
        msg << "ground state is " << edge << " at the grid ends; periodic and Dirichlet "
            << "ends differ at that level";
        tr.warnings.push_back(msg.str());
      }
      ss.emplace(b.hamiltonian, cfg.epsilon, dt, shift);
      rate = ss->max_phase_rate(psi);
    } else {
      cn.emplace(b.hamiltonian, cfg.epsilon, dt, shift);
      rate = cn->max_phase_rate(psi);
    }
    if (dt * rate / hbar > limit) {
      std::ostringstream msg;
      msg << "dt max|V - Omega + eps|psi|^2| / hbar = " << dt * rate / hbar << " > " << limit;
      tr.warnings.push_back(msg.str());
    }
    record(0, psi0, std::nullopt, std::nullopt);
    for (std::size_t k = 1; k <= steps; ++k) {
      if (ss) ss->step(psi); else cn->step(psi);
      if (due(k)) {
        record(k, frame(static_cast<double>(k) * dt) * Wavefunction(b.grid(), psi),
               std::nullopt, std::nullopt);
      }
    }
  }
  return tr;
}

// ---------------------------------------------------------------------------
// Trajectory diagnostics

struct LpDiagnosticRow {
  double t;
  double p2, p4, pinf;  ///< ||psi||_p hbar^((p-2)/(4p))
  double gradient;      ///< ||d psi/dx|| hbar^(1/2)
};

inline std::vector<LpDiagnosticRow> lp_diagnostics(const Trajectory& tr, double hbar) {
  std::vector<LpDiagnosticRow> rows;
  for (const auto& s : tr.samples) {
    if (!s.state) throw UsageError("lp_diagnostics: trajectory has no stored states");
    rows.push_back({s.t, lp_norm(*s.state, 2.0) * std::pow(hbar, lp_scale_exponent(2.0)),
                    lp_norm(*s.state, 4.0) * std::pow(hbar, lp_scale_exponent(4.0)),
                    lp_norm(*s.state, kInf) * std::pow(hbar, lp_scale_exponent(kInf)),
                    gradient_norm(*s.state) * std::sqrt(hbar)});
  }
  return rows;
}

struct RemainderConsistency {
  double max_mismatch;  ///< max |i hbar a_R' - (-omega a_L + eps c |a_R|^2 a_R + eps r_R)| / omega
  double tolerance;
  bool passed;
};

/// Checks the projected equation for a_R against a finite-difference
/// derivative of the stored trajectory (fourth-order central differences;
/// tolerance 10x the gap to the second-order estimate plus a rounding floor).
inline RemainderConsistency remainder_consistency(const Trajectory& tr, const DoubletBasis& b) {
  const auto& s = tr.samples;
  if (s.size() < 5) throw UsageError("remainder_consistency: need >= 5 samples");
  double worst = 0.0, tol = 0.0;
  bool ok = true;
  const Complex I(0.0, 1.0);
  for (std::size_t k = 2; k + 2 < s.size(); ++k) {
    if (!s[k].state) throw UsageError("remainder_consistency: trajectory has no stored states");
    const double h = s[k + 1].t - s[k].t;
    const Complex d4 = (s[k - 2].aR - 8.0 * s[k - 1].aR + 8.0 * s[k + 1].aR - s[k + 2].aR) / (12.0 * h);
    const Complex d2 = (s[k + 1].aR - s[k - 1].aR) / (2.0 * h);
    const auto r = remainder_terms(*s[k].state, b);
    const Complex model = -b.omega * s[k].aL + tr.epsilon * b.c * std::norm(s[k].aR) * s[k].aR +
                          tr.epsilon * r.rR;
    const double mismatch = std::abs(I * b.hbar() * d4 - model) / b.omega;
    const double allowed = 10.0 * b.hbar() * std::abs(d4 - d2) / b.omega + 1e-9;
    worst = std::max(worst, mismatch);
    tol = std::max(tol, allowed);
    if (mismatch > allowed) ok = false;
  }
  return {worst, tol, ok};
}

// ---------------------------------------------------------------------------
// Stability experiment

enum class InitialChoice { PhiR, PhiL, Phi1, Phi2, Custom };

struct InitialState {
  InitialChoice choice = InitialChoice::PhiR;
  Complex c1{1.0, 0.0};  ///< Custom: psi0 = c1 phi_1 + c2 phi_2
  Complex c2{0.0, 0.0};
};

inline Wavefunction make_initial(const DoubletBasis& b, const InitialState& s) {
  switch (s.choice) {
    case InitialChoice::PhiR: return b.phiR;
    case InitialChoice::PhiL: return b.phiL;
    case InitialChoice::Phi1: return b.phi1;
    case InitialChoice::Phi2: return b.phi2;
    case InitialChoice::Custom: {
      const double n = std::sqrt(std::norm(s.c1) + std::norm(s.c2));
      if (std::abs(n - 1.0) > 1e-10) {
        throw UsageError("initial state: custom coefficients must satisfy |c1|^2 + |c2|^2 = 1");
      }
      return s.c1 * b.phi1 + s.c2 * b.phi2;
    }
  }
  throw UsageError("initial state: unknown choice");
}

struct StabilityOptions {
  double half_width = 3.0;
  std::size_t n_points = 1024;
  double mass = 1.0;
  Method method = Method::Exponential;
  double steps_per_period = 4000.0;  ///< dt = (pi hbar / omega) / steps_per_period, refined if needed
  std::size_t threads = 0;           ///< 0: DWGP_THREADS or 1
  bool keep_trajectories = true;
};

struct StabilityRow {
  double hbar;
  double omega;
  double eta;
  double epsilon;
  double c;
  double max_dev_R;   ///< max_t |a_R - b_R|
  double max_dev_L;   ///< max_t |a_L - b_L|
  double max_psi_c;   ///< max_t ||psi_c||
  double tau_prime;
  std::size_t steps;
  double norm_drift;
  double energy_drift;
};

struct StabilityRun {
  Trajectory pde;
  std::vector<TwoModeSample> two_mode;
};

struct StabilityReport {
  std::vector<StabilityRow> rows;  ///< decreasing hbar
  bool dev_R_decreasing = false;
  bool dev_L_decreasing = false;
  bool psi_c_decreasing = false;
  double psi_c_bound = 0.0;  ///< omega^(1/2) at the smallest hbar
  bool psi_c_bound_ok = false;
  std::vector<StabilityRun> runs;  ///< empty unless keep_trajectories
};

namespace detail {

template <class E>
[[noreturn]] inline void rethrow_with_context(const E& e, const std::string& ctx) {
  if constexpr (std::is_same_v<E, IntegrationError>) {
    throw IntegrationError(ctx + e.what(), e.time());
  } else {
    throw E(ctx + e.what());
  }
}

}  // namespace detail

inline StabilityReport stability_experiment(const PotentialSpec& spec,
                                            const std::vector<double>& hbars, double eta,
                                            double tau_prime, const InitialState& init = {},
                                            const StabilityOptions& opt = {}) {
  if (hbars.size() < 3) throw UsageError("stability_experiment: need at least 3 hbar values");
  for (std::size_t i = 1; i < hbars.size(); ++i) {
    if (!(hbars[i] < hbars[i - 1])) {
      throw UsageError("stability_experiment: hbar values must be strictly decreasing");
    }
  }
  if (!(tau_prime > 0.0)) throw UsageError("stability_experiment: tau_prime must be positive");
  const Grid1D grid(opt.half_width, opt.n_points);
  const auto rep = validate_potential(spec, grid);
  if (!rep.ok()) throw ValidationError("potential rejected: " + rep.failures());
  const std::vector<double> v = spec.sample(grid);

  auto one = [&](double hb) -> std::pair<StabilityRow, StabilityRun> {
    std::ostringstream ctx;
    ctx << "hbar = " << hb << ": ";
    try {
      auto basis = std::make_shared<const DoubletBasis>(
          lowest_doublet(DiscreteHamiltonian(grid, v, hb, opt.mass)));
      EvolutionConfig cfg;
      cfg.basis = basis;
      cfg.epsilon = eta * basis->omega / basis->c;
      cfg.method = opt.method;
      cfg.t_end = hb * tau_prime / basis->omega;
      // Common step for the PDE and the two-mode RK4 (slow step within the
      // two-mode limit).
      const double h_max = std::min(std::numbers::pi / opt.steps_per_period,
                                    max_two_mode_step(eta));
      const auto steps = static_cast<std::size_t>(std::ceil(tau_prime / h_max - 1e-9));
      cfg.dt = cfg.t_end / static_cast<double>(steps);
      cfg.stride = 1;

      const Wavefunction psi0 = make_initial(*basis, init);
      Trajectory tr = propagate(psi0, cfg);
      const TwoModeState s0{tr.samples.front().aR, tr.samples.front().aL};
      auto tm = integrate_two_mode(s0, eta, tau_prime, tau_prime / static_cast<double>(steps));
      if (tm.size() != tr.samples.size()) {
        throw ConsistencyError("stability_experiment: PDE and two-mode sample counts differ");
      }
      StabilityRow row{hb, basis->omega, eta, cfg.epsilon, basis->c, 0.0, 0.0, 0.0,
                       tau_prime, steps, tr.max_norm_drift(), tr.max_energy_drift()};
      for (std::size_t k = 0; k < tm.size(); ++k) {
        row.max_dev_R = std::max(row.max_dev_R, std::abs(tr.samples[k].aR - tm[k].state.bR));
        row.max_dev_L = std::max(row.max_dev_L, std::abs(tr.samples[k].aL - tm[k].state.bL));
        row.max_psi_c = std::max(row.max_psi_c, tr.samples[k].psi_c_norm);
      }
      StabilityRun run;
      if (opt.keep_trajectories) run = StabilityRun{std::move(tr), std::move(tm)};
      return {row, std::move(run)};
    } catch (const IntegrationError& e) {
      detail::rethrow_with_context(e, ctx.str());
    } catch (const ValidationError& e) {
      detail::rethrow_with_context(e, ctx.str());
    } catch (const SolverError& e) {
      detail::rethrow_with_context(e, ctx.str());
    } catch (const ModelError& e) {
      detail::rethrow_with_context(e, ctx.str());
    } catch (const UsageError& e) {
      detail::rethrow_with_context(e, ctx.str());
    } catch (const ConsistencyError& e) {
      detail::rethrow_with_context(e, ctx.str());
    }
  };

  auto results = ordered_map(hbars, one, opt.threads);
  StabilityReport out;
  out.dev_R_decreasing = out.dev_L_decreasing = out.psi_c_decreasing = true;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i].first;
    if (i > 0) {
      const auto& p = results[i - 1].first;
      if (!(r.max_dev_R < p.max_dev_R)) out.dev_R_decreasing = false;
      if (!(r.max_dev_L < p.max_dev_L)) out.dev_L_decreasing = false;
      if (!(r.max_psi_c < p.max_psi_c)) out.psi_c_decreasing = false;
    }
    out.rows.push_back(r);
    if (opt.keep_trajectories) out.runs.push_back(std::move(results[i].second));
  }
  out.psi_c_bound = std::sqrt(out.rows.back().omega);
  out.psi_c_bound_ok = out.rows.back().max_psi_c <= out.psi_c_bound;
  return out;
}

}  // namespace dwgp
