#pragma once

// Grids, complex fields on them, quadrature, norms and observables.
//
// Every integral in the library is the plain Riemann sum sum_j f_j dx over
// the n nodes x_j = -L + j dx, j = 0..n-1.  The node x_0 = -L is identified
// with +L (periodic convention), so the node set is mapped onto itself by
// x -> -x (j -> (n - j) mod n).

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "dwgp/errors.hpp"

namespace dwgp {

using Complex = std::complex<double>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

class Grid1D {
 public:
  Grid1D(double half_width, std::size_t n_points)
      : half_width_(half_width), n_points_(n_points) {
    if (!(half_width > 0.0) || !std::isfinite(half_width)) {
      throw DomainError("Grid1D: half width must be positive and finite");
    }
    if (n_points < 64 || (n_points & (n_points - 1)) != 0) {
      throw DomainError("Grid1D: n_points must be a power of two >= 64, got " +
                        std::to_string(n_points));
    }
  }

  double half_width() const noexcept { return half_width_; }
  std::size_t size() const noexcept { return n_points_; }
  double dx() const noexcept { return 2.0 * half_width_ / static_cast<double>(n_points_); }

  double x(std::size_t j) const noexcept {
    return -half_width_ + static_cast<double>(j) * dx();
  }

  /// Index of the node at x = 0.
  std::size_t center() const noexcept { return n_points_ / 2; }

  /// Index of the mirror node of j.
  std::size_t mirror(std::size_t j) const noexcept {
    return (n_points_ - j) % n_points_;
  }

  /// Node nearest to x (clamped to the grid).
  std::size_t nearest(double xv) const noexcept {
    const double s = std::round((xv + half_width_) / dx());
    const double clamped = std::clamp(s, 0.0, static_cast<double>(n_points_ - 1));
    return static_cast<std::size_t>(clamped);
  }

  std::vector<double> nodes() const {
    std::vector<double> xs(n_points_);
    for (std::size_t j = 0; j < n_points_; ++j) xs[j] = x(j);
    return xs;
  }

  friend bool operator==(const Grid1D&, const Grid1D&) = default;

 private:
  double half_width_;
  std::size_t n_points_;
};

inline void require_same_grid(const Grid1D& a, const Grid1D& b, const char* where) {
  if (!(a == b)) throw UsageError(std::string(where) + ": grid mismatch");
}

/// Complex samples psi_j on a grid.  Samples are always finite.
class Wavefunction {
 public:
  explicit Wavefunction(const Grid1D& grid)
      : grid_(grid), values_(grid.size(), Complex{}) {}

  Wavefunction(const Grid1D& grid, std::vector<Complex> values)
      : grid_(grid), values_(std::move(values)) {
    if (values_.size() != grid_.size()) {
      throw UsageError("Wavefunction: sample count does not match grid");
    }
    check_finite();
  }

  static Wavefunction from_real(const Grid1D& grid, std::span<const double> values) {
    std::vector<Complex> c(values.begin(), values.end());
    return Wavefunction(grid, std::move(c));
  }

  static Wavefunction from_function(const Grid1D& grid,
                                    const std::function<Complex(double)>& f) {
    std::vector<Complex> c(grid.size());
    for (std::size_t j = 0; j < grid.size(); ++j) c[j] = f(grid.x(j));
    return Wavefunction(grid, std::move(c));
  }

  const Grid1D& grid() const noexcept { return grid_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::span<const Complex> values() const noexcept { return values_; }
  std::span<Complex> mutable_values() noexcept { return values_; }
  const Complex& operator[](std::size_t j) const noexcept { return values_[j]; }
  Complex& operator[](std::size_t j) noexcept { return values_[j]; }

  void check_finite() const {
    for (const auto& v : values_) {
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) {
        throw DomainError("Wavefunction: non-finite sample");
      }
    }
  }

  Wavefunction& operator+=(const Wavefunction& o) {
    require_same_grid(grid_, o.grid_, "Wavefunction +=");
    for (std::size_t j = 0; j < values_.size(); ++j) values_[j] += o.values_[j];
    return *this;
  }
  Wavefunction& operator-=(const Wavefunction& o) {
    require_same_grid(grid_, o.grid_, "Wavefunction -=");
    for (std::size_t j = 0; j < values_.size(); ++j) values_[j] -= o.values_[j];
    return *this;
  }
  Wavefunction& operator*=(Complex s) {
    for (auto& v : values_) v *= s;
    return *this;
  }

  friend Wavefunction operator+(Wavefunction a, const Wavefunction& b) { return a += b; }
  friend Wavefunction operator-(Wavefunction a, const Wavefunction& b) { return a -= b; }
  friend Wavefunction operator*(Complex s, Wavefunction a) { return a *= s; }

 private:
  Grid1D grid_;
  std::vector<Complex> values_;
};

/// (sum_j |f_j|^p dx)^(1/p), or max_j |f_j| for p = infinity.
inline double lp_norm(const Wavefunction& f, double p) {
  if (!(p >= 1.0)) throw DomainError("lp_norm: p must be >= 1");
  const auto v = f.values();
  if (std::isinf(p)) {
    double m = 0.0;
    for (const auto& z : v) m = std::max(m, std::abs(z));
    return m;
  }
  const double dx = f.grid().dx();
  if (p == 2.0) {
    double s = 0.0;
    for (const auto& z : v) s += std::norm(z);
    return std::sqrt(s * dx);
  }
  // Scale by the maximum so large p does not overflow.
  double m = 0.0;
  for (const auto& z : v) m = std::max(m, std::abs(z));
  if (m == 0.0) return 0.0;
  double s = 0.0;
  for (const auto& z : v) s += std::pow(std::abs(z) / m, p);
  return m * std::pow(s * dx, 1.0 / p);
}

/// sum_j conj(f_j) g_j dx.
inline Complex inner_product(const Wavefunction& f, const Wavefunction& g) {
  require_same_grid(f.grid(), g.grid(), "inner_product");
  Complex s{};
  const auto a = f.values();
  const auto b = g.values();
  for (std::size_t j = 0; j < a.size(); ++j) s += std::conj(a[j]) * b[j];
  return s * f.grid().dx();
}

/// R(psi)(x) = psi(-x) on the node set.
inline Wavefunction reflect(const Wavefunction& f) {
  const Grid1D& g = f.grid();
  std::vector<Complex> out(g.size());
  for (std::size_t j = 0; j < g.size(); ++j) out[j] = f[g.mirror(j)];
  return Wavefunction(g, std::move(out));
}

/// Pointwise product.
inline Wavefunction pointwise_product(const Wavefunction& f, const Wavefunction& g) {
  require_same_grid(f.grid(), g.grid(), "pointwise_product");
  std::vector<Complex> out(f.size());
  for (std::size_t j = 0; j < f.size(); ++j) out[j] = f[j] * g[j];
  return Wavefunction(f.grid(), std::move(out));
}

/// Odd, bounded real observable X(-x) = -X(x), exact on the node set.
class ObservableX {
 public:
  /// Samples f on the half grid x >= 0 and mirrors with a sign flip, so the
  /// oddness holds bit-for-bit.  X(0) = X(+-L) = 0.
  static ObservableX from_function(const Grid1D& grid,
                                   const std::function<double(double)>& f) {
    std::vector<double> s(grid.size(), 0.0);
    const std::size_t c = grid.center();
    for (std::size_t i = 1; i < c; ++i) {
      const double v = f(static_cast<double>(i) * grid.dx());
      if (!std::isfinite(v)) throw DomainError("ObservableX: non-finite sample");
      s[c + i] = v;
      s[c - i] = -v;
    }
    return ObservableX(grid, std::move(s));
  }

  /// x/a * exp(1/2 - x^2 / (2 a^2)): odd, bounded by 1, peaks at x = a.
  static ObservableX standard(const Grid1D& grid, double a) {
    if (!(a > 0.0)) throw DomainError("ObservableX::standard: a must be positive");
    return from_function(grid, [a](double x) {
      const double u = x / a;
      return u * std::exp(0.5 - 0.5 * u * u);
    });
  }

  /// Wraps given samples; throws unless they are exactly odd.
  ObservableX(const Grid1D& grid, std::vector<double> samples)
      : grid_(grid), samples_(std::move(samples)) {
    if (samples_.size() != grid_.size()) {
      throw UsageError("ObservableX: sample count does not match grid");
    }
    for (std::size_t j = 0; j < samples_.size(); ++j) {
      if (!std::isfinite(samples_[j])) throw DomainError("ObservableX: non-finite sample");
      if (samples_[grid_.mirror(j)] != -samples_[j]) {
        throw DomainError("ObservableX: samples are not odd at node " + std::to_string(j));
      }
    }
  }

  const Grid1D& grid() const noexcept { return grid_; }
  std::span<const double> samples() const noexcept { return samples_; }

 private:
  Grid1D grid_;
  std::vector<double> samples_;
};

/// <X psi, psi> = int X |psi|^2 dx.
inline double center_of_mass(const Wavefunction& psi, const ObservableX& X) {
  require_same_grid(psi.grid(), X.grid(), "center_of_mass");
  Complex s{};
  const auto xs = X.samples();
  const auto v = psi.values();
  for (std::size_t j = 0; j < v.size(); ++j) s += std::conj(xs[j] * v[j]) * v[j];
  s *= psi.grid().dx();
  if (std::abs(s.imag()) >= 1e-12) {
    throw ConsistencyError("center_of_mass: non-negligible imaginary part");
  }
  return s.real();
}

}  // namespace dwgp
