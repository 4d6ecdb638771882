#pragma once

// Two-mode reduction in slow time tau = omega t / hbar:
//
//   b_R' = i b_L - i eta |b_R|^2 b_R,    b_L' = i b_R - i eta |b_L|^2 b_L,
//
// its closed-form imbalance z = |b_R|^2 - |b_L|^2 in Jacobi functions, and
// the beating / self-trapping classification.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dwgp/core.hpp"
#include "dwgp/elliptic.hpp"
#include "dwgp/errors.hpp"

namespace dwgp {

struct TwoModeState {
  Complex bR;
  Complex bL;

  double norm2() const { return std::norm(bR) + std::norm(bL); }
  double imbalance() const { return std::norm(bR) - std::norm(bL); }
};

enum class Regime { Beating, SelfTrapped, Separatrix };

inline const char* to_string(Regime r) {
  switch (r) {
    case Regime::Beating: return "Beating";
    case Regime::SelfTrapped: return "SelfTrapped";
    case Regime::Separatrix: return "Separatrix";
  }
  return "?";
}

inline constexpr double kSeparatrixTol = 1e-9;

inline Regime regime_of(double k2) {
  if (k2 < 1.0 - kSeparatrixTol) return Regime::Beating;
  if (k2 > 1.0 + kSeparatrixTol) return Regime::SelfTrapped;
  return Regime::Separatrix;
}

struct TwoModeParams {
  double eta;
  double z0;
  double theta0;
  double I;     ///< sqrt(1 - z0^2) cos(theta0) - eta z0^2 / 4
  double A;     ///< oscillation amplitude of z, >= 0
  double k2;    ///< squared elliptic modulus
  double tau0;  ///< NaN on the separatrix
  Regime regime;
  double rate;  ///< z = A cn(rate (tau - tau0), k) or sign A dn(rate (tau - tau0), 1/k)
  double sign;  ///< sign(z0) in the self-trapped branch, else +1
};

namespace detail {

struct ModulusParts {
  double S;   // sqrt(eta^2/4 + 1 + I eta)
  double p;   // 1 + I eta / 2
  double A2;
  double k2;
};

// A^2 = (8/eta^2)(S - p), k^2 = (S - p)/(2S).  For p >= 0 the difference is
// rationalised, S - p = eta^2 (1 - I^2) / (4 (S + p)), which is exact at
// eta = 0 (A^2 = 1 - I^2, k^2 = 0).
inline ModulusParts modulus_parts(double I, double eta) {
  const double S = std::sqrt(std::max(0.25 * eta * eta + 1.0 + I * eta, 0.0));
  const double p = 1.0 + 0.5 * I * eta;
  ModulusParts m{S, p, 0.0, 0.0};
  if (S == 0.0) return m;
  if (p >= 0.0) {
    const double one_minus = (1.0 - I) * (1.0 + I);
    m.A2 = 2.0 * one_minus / (S + p);
    m.k2 = eta * eta * one_minus / (8.0 * S * (S + p));
  } else {
    m.A2 = 8.0 / (eta * eta) * (S - p);
    m.k2 = 0.5 * (S - p) / S;
  }
  return m;
}

// u in [0, 2K] with am(u, k) = phi, phi in [0, pi]; Newton on the amplitude
// (d am / du = dn > 0), safeguarded by bisection.
inline double inverse_amplitude(double phi, double k) {
  const double K = complete_K(k);
  double lo = 0.0, hi = 2.0 * K;
  if (phi <= 0.0) return 0.0;
  if (phi >= std::numbers::pi) return hi;
  double u = phi / std::numbers::pi * hi;
  for (int it = 0; it < 200; ++it) {
    const auto t = jacobi(u, k);
    const double am = std::atan2(std::abs(t.sn), t.cn);
    const double f = am - phi;
    if (f > 0.0) hi = u; else lo = u;
    if (f == 0.0 || hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * K) break;
    double next = u - f / t.dn;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - u) <= 2.0 * std::numeric_limits<double>::epsilon() * K) {
      u = next;
      break;
    }
    u = next;
  }
  return u;
}

}  // namespace detail

/// Squared elliptic modulus k^2 as a function of (I, eta).
inline double elliptic_modulus_squared(double I, double eta) {
  return detail::modulus_parts(I, eta).k2;
}

inline double conserved_I(double z0, double theta0, double eta) {
  return std::sqrt(std::max(0.0, (1.0 - z0) * (1.0 + z0))) * std::cos(theta0) -
         0.25 * eta * z0 * z0;
}

inline TwoModeParams two_mode_params(const TwoModeState& s0, double eta) {
  if (!std::isfinite(eta)) throw DomainError("two_mode_params: eta must be finite");
  if (std::abs(s0.norm2() - 1.0) > 1e-10) {
    throw DomainError("two_mode_params: initial state is not normalised");
  }
  TwoModeParams P{};
  P.eta = eta;
  P.z0 = std::clamp(s0.imbalance() / s0.norm2(), -1.0, 1.0);
  const Complex cross = s0.bR * std::conj(s0.bL);
  P.theta0 = (cross == Complex{}) ? 0.0 : std::arg(cross);
  P.I = conserved_I(P.z0, P.theta0, eta);

  const auto m = detail::modulus_parts(P.I, eta);
  if (m.A2 < -1e-12) {
    std::ostringstream msg;
    msg << "two_mode_params: negative amplitude radicand A^2 = " << m.A2;
    throw ConsistencyError(msg.str());
  }
  P.A = std::sqrt(std::max(m.A2, 0.0));
  P.k2 = m.k2;
  P.regime = regime_of(P.k2);
  P.sign = 1.0;
  P.tau0 = 0.0;
  P.rate = 0.0;

  if (P.regime == Regime::Separatrix) {
    P.tau0 = std::numeric_limits<double>::quiet_NaN();
    return P;
  }
  if (P.A <= 1e-14) {  // z stays at 0
    P.A = 0.0;
    return P;
  }

  const double z0 = P.z0;
  const double one_minus_z2 = (1.0 - z0) * (1.0 + z0);
  const double dz0 = 2.0 * std::sqrt(std::max(one_minus_z2, 0.0)) * std::sin(P.theta0);
  // A^2 - z0^2 from the first integral z'^2 = (eta^2/4)(A^2 - z^2)(z^2 + B^2),
  // eta^2 B^2 = 8 (S + p).
  const double sin_t = std::sin(P.theta0);
  const double den = eta * eta * z0 * z0 + 8.0 * (m.S + m.p);
  double gap2 = den > 0.0 ? 16.0 * one_minus_z2 * sin_t * sin_t / den : 0.0;

  if (P.regime == Regime::Beating) {
    const double k = std::sqrt(P.k2);
    // rate = A |eta| / (2k); for p >= 0 with k^2 = eta^2 q this is A / (2 sqrt(q)),
    // finite at eta = 0.
    if (m.p >= 0.0) {
      const double q = (1.0 - P.I) * (1.0 + P.I) / (8.0 * m.S * (m.S + m.p));
      P.rate = P.A / (2.0 * std::sqrt(q));
    } else {
      P.rate = P.A * std::abs(eta) / (2.0 * k);
    }
    gap2 = std::clamp(gap2, 0.0, P.A * P.A);
    // cn(u0) = z0/A and sign(sn(u0)) = -sign(z'(0)).
    const double s = (dz0 > 0.0) ? -1.0 : 1.0;
    const double phi0 = std::atan2(std::sqrt(gap2), z0);  // in [0, pi]
    const double u0 = detail::inverse_amplitude(phi0, k);
    P.tau0 = -(dz0 == 0.0 ? u0 : s * u0) / P.rate + 0.0;
  } else {
    P.sign = (z0 < 0.0) ? -1.0 : 1.0;
    const double kappa = 1.0 / std::sqrt(P.k2);
    P.rate = 0.5 * P.A * std::abs(eta);
    if (std::abs(z0) < 0.9 * P.A) gap2 = (P.A - std::abs(z0)) * (P.A + std::abs(z0));
    // dn(u0) = |z0|/A with u0 in [-K, K]; sign(sn(u0)) = -sign(z'(0)) * sign.
    const double sn_abs = std::min(1.0, std::sqrt(std::max(gap2, 0.0)) / (P.A * kappa));
    const double phi0 = std::asin(sn_abs);  // in [0, pi/2]
    const double u0 = detail::inverse_amplitude(phi0, kappa);
    const double s = (dz0 * P.sign > 0.0) ? -1.0 : 1.0;
    P.tau0 = -(dz0 == 0.0 ? u0 : s * u0) / P.rate + 0.0;
  }
  return P;
}

/// Closed-form imbalance z(tau).
inline double imbalance_analytic(double tau, const TwoModeParams& P) {
  if (P.regime == Regime::Separatrix) {
    std::ostringstream msg;
    msg << "imbalance_analytic: k^2 = " << P.k2
        << " is on the separatrix; no closed form, integrate the ODE instead";
    throw SeparatrixError(msg.str());
  }
  if (P.A == 0.0) return 0.0;
  const double u = P.rate * (tau - P.tau0);
  if (P.regime == Regime::Beating) return P.A * jacobi(u, std::sqrt(P.k2)).cn;
  return P.sign * P.A * jacobi(u, 1.0 / std::sqrt(P.k2)).dn;
}

struct TwoModeSample {
  double tau;
  TwoModeState state;
};

inline TwoModeState two_mode_rhs(const TwoModeState& b, double eta) {
  const Complex i(0.0, 1.0);
  return {i * b.bL - i * eta * std::norm(b.bR) * b.bR,
          i * b.bR - i * eta * std::norm(b.bL) * b.bL};
}

/// One classical RK4 step of size h.
inline TwoModeState rk4_step(const TwoModeState& b, double eta, double h) {
  auto axpy = [](const TwoModeState& x, double a, const TwoModeState& k) {
    return TwoModeState{x.bR + a * k.bR, x.bL + a * k.bL};
  };
  const auto k1 = two_mode_rhs(b, eta);
  const auto k2 = two_mode_rhs(axpy(b, 0.5 * h, k1), eta);
  const auto k3 = two_mode_rhs(axpy(b, 0.5 * h, k2), eta);
  const auto k4 = two_mode_rhs(axpy(b, h, k3), eta);
  return {b.bR + (h / 6.0) * (k1.bR + 2.0 * k2.bR + 2.0 * k3.bR + k4.bR),
          b.bL + (h / 6.0) * (k1.bL + 2.0 * k2.bL + 2.0 * k3.bL + k4.bL)};
}

inline double max_two_mode_step(double eta) { return 0.01 / std::max(1.0, std::abs(eta)); }

/// Fixed-step RK4 on [0, tau_end] with ceil(tau_end/dtau) equal steps; no
/// renormalisation.  Every step is returned, starting with tau = 0.
inline std::vector<TwoModeSample> integrate_two_mode(const TwoModeState& s0, double eta,
                                                     double tau_end, double dtau) {
  if (!(tau_end > 0.0)) throw UsageError("integrate_two_mode: tau_end must be positive");
  if (!(dtau > 0.0) || dtau > max_two_mode_step(eta) * (1.0 + 1e-12)) {
    std::ostringstream msg;
    msg << "integrate_two_mode: dtau = " << dtau << " exceeds 0.01/max(1,|eta|) = "
        << max_two_mode_step(eta);
    throw UsageError(msg.str());
  }
  const auto steps = static_cast<std::size_t>(std::ceil(tau_end / dtau - 1e-9));
  const double h = tau_end / static_cast<double>(steps);
  std::vector<TwoModeSample> out;
  out.reserve(steps + 1);
  out.push_back({0.0, s0});
  TwoModeState b = s0;
  for (std::size_t n = 1; n <= steps; ++n) {
    b = rk4_step(b, eta, h);
    out.push_back({static_cast<double>(n) * h, b});
  }
  return out;
}

struct MotionReport {
  Regime regime;
  double k2;
  double A;
  /// Beating: period of z in tau, 4K(k)/rate.  SelfTrapped: 2K(1/k)/rate.
  /// NaN on the separatrix or when z is constant.
  double period;
};

inline MotionReport classify_motion(const TwoModeParams& P) {
  MotionReport r{P.regime, P.k2, P.A, std::numeric_limits<double>::quiet_NaN()};
  if (P.rate > 0.0) {
    if (P.regime == Regime::Beating) r.period = 4.0 * complete_K(std::sqrt(P.k2)) / P.rate;
    if (P.regime == Regime::SelfTrapped) {
      r.period = 2.0 * complete_K(1.0 / std::sqrt(P.k2)) / P.rate;
    }
  }
  return r;
}

/// Smallest eta in (0, 1000] with k^2(eta) = 1 for the initial point
/// (z0, theta0): a 0.01 scan brackets the first crossing, bisection refines.
inline std::optional<double> critical_eta(double z0, double theta0) {
  if (!(z0 >= -1.0 && z0 <= 1.0)) throw DomainError("critical_eta: z0 must lie in [-1, 1]");
  auto f = [&](double eta) {
    return elliptic_modulus_squared(conserved_I(z0, theta0, eta), eta) - 1.0;
  };
  constexpr double kStep = 0.01;
  constexpr int kSteps = 100000;
  double prev_eta = 0.0;
  double prev = f(0.0);
  for (int i = 1; i <= kSteps; ++i) {
    const double eta = i * kStep;
    const double cur = f(eta);
    if (cur == 0.0) return eta;
    if ((prev < 0.0) != (cur < 0.0)) {
      double lo = prev_eta, hi = eta;
      const bool lo_neg = prev < 0.0;
      for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = f(mid);
        if (fm == 0.0) return mid;
        ((fm < 0.0) == lo_neg ? lo : hi) = mid;
      }
      return 0.5 * (lo + hi);
    }
    prev_eta = eta;
    prev = cur;
  }
  return std::nullopt;
}

}  // namespace dwgp
