#pragma once

// Jacobi elliptic functions sn, cn, dn and the complete integral K(k),
// real arguments, modulus convention (k, not m = k^2).

#include <array>
#include <cmath>
#include <limits>
#include <numbers>

#include "dwgp/errors.hpp"

namespace dwgp {

struct EllipticTriple {
  double sn;
  double cn;
  double dn;
};

namespace detail {

// k' = sqrt(1 - k^2) without cancellation near k = 1.
inline double complementary_modulus(double k) {
  return std::sqrt((1.0 - k) * (1.0 + k));
}

inline double agm(double a, double b) {
  for (int i = 0; i < 64; ++i) {
    const double an = 0.5 * (a + b);
    const double bn = std::sqrt(a * b);
    if (std::abs(an - bn) <= 4.0 * std::numeric_limits<double>::epsilon() * an) {
      return 0.5 * (an + bn);
    }
    a = an;
    b = bn;
  }
  return 0.5 * (a + b);
}

}  // namespace detail

/// Complete elliptic integral of the first kind, K(k) = pi / (2 AGM(1, k')).
inline double complete_K(double k) {
  if (!(k >= 0.0) || !(k < 1.0)) {
    throw DomainError("complete_K: modulus must lie in [0, 1)");
  }
  if (k == 0.0) return 0.5 * std::numbers::pi;
  return 0.5 * std::numbers::pi / detail::agm(1.0, detail::complementary_modulus(k));
}

/// sn, cn, dn by descending Landen / AGM recursion.
///
/// k in [0, 1].  k = 0 and k = 1 use the trigonometric and hyperbolic
/// degenerations directly (the AGM does not terminate at k = 1).  The
/// argument is first reduced modulo 4K.
inline EllipticTriple jacobi(double u, double k) {
  if (!std::isfinite(u)) throw DomainError("jacobi: argument must be finite");
  if (!(k >= 0.0) || !(k <= 1.0)) {
    throw DomainError("jacobi: modulus must lie in [0, 1]; pass 1/k for k > 1");
  }
  if (k == 0.0) return {std::sin(u), std::cos(u), 1.0};
  if (k == 1.0) {
    const double s = 1.0 / std::cosh(u);
    return {std::tanh(u), s, s};
  }

  constexpr int kMaxLevels = 40;
  std::array<double, kMaxLevels + 1> a{};
  std::array<double, kMaxLevels + 1> c{};
  a[0] = 1.0;
  double b = detail::complementary_modulus(k);
  c[0] = k;
  int n = 0;
  while (n < kMaxLevels &&
         std::abs(c[n]) > std::numeric_limits<double>::epsilon() * a[n]) {
    a[n + 1] = 0.5 * (a[n] + b);
    c[n + 1] = 0.5 * (a[n] - b);
    b = std::sqrt(a[n] * b);
    ++n;
  }

  // K = pi / (2 a_n); reduce u into [-2K, 2K].
  const double quarter = 0.5 * std::numbers::pi / a[n];
  const double period = 4.0 * quarter;
  const double ur = u - period * std::nearbyint(u / period);

  double phi = std::ldexp(a[n] * ur, n);
  for (int i = n; i >= 1; --i) {
    phi = 0.5 * (phi + std::asin(c[i] / a[i] * std::sin(phi)));
  }
  const double sn = std::sin(phi);
  const double cn = std::cos(phi);
  // dn^2 = k'^2 + k^2 cn^2: both terms non-negative, no cancellation near u = K.
  const double kc = detail::complementary_modulus(k);
  const double dn = std::sqrt(kc * kc + k * k * cn * cn);
  return {sn, cn, dn};
}

/// Jacobi amplitude am(u, k) in the branch continuous through u = 0 for
/// |u| <= 2K, i.e. atan2(sn, cn).
inline double jacobi_amplitude(double u, double k) {
  const auto t = jacobi(u, k);
  return std::atan2(t.sn, t.cn);
}

}  // namespace dwgp
