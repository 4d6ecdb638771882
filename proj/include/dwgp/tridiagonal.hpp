#pragma once

// Symmetric tridiagonal eigenpairs by Sturm-sequence bisection and inverse
// iteration.  Only the few lowest pairs are ever needed, so no
// reorthogonalisation against clusters is attempted.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <sstream>
#include <vector>

#include "dwgp/errors.hpp"

namespace dwgp {

struct SymTridiagonal {
  std::vector<double> diag;     ///< size N
  std::vector<double> offdiag;  ///< size N - 1

  std::size_t size() const noexcept { return diag.size(); }

  void multiply(const std::vector<double>& x, std::vector<double>& y) const {
    const std::size_t n = diag.size();
    y.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double s = diag[i] * x[i];
      if (i > 0) s += offdiag[i - 1] * x[i - 1];
      if (i + 1 < n) s += offdiag[i] * x[i + 1];
      y[i] = s;
    }
  }

  double max_abs_entry() const {
    double m = 0.0;
    for (double d : diag) m = std::max(m, std::abs(d));
    for (double e : offdiag) m = std::max(m, std::abs(e));
    return m;
  }
};

struct EigenPair {
  double value;
  std::vector<double> vector;  ///< unit Euclidean norm
  double residual;             ///< ||T v - value v||_2
};

namespace detail {

inline double pivot_floor(const SymTridiagonal& t) {
  const double m = std::max(t.max_abs_entry(), std::numeric_limits<double>::min());
  return std::numeric_limits<double>::min() / std::numeric_limits<double>::epsilon() *
         std::max(1.0, m * m);
}

// Partially pivoted LU of a general tridiagonal matrix (LAPACK gttrf layout).
class TridiagonalLU {
 public:
  TridiagonalLU(std::vector<double> sub, std::vector<double> diag, std::vector<double> sup,
                double tiny)
      : dl_(std::move(sub)), d_(std::move(diag)), du_(std::move(sup)) {
    const std::size_t n = d_.size();
    du2_.assign(n > 2 ? n - 2 : 0, 0.0);
    swapped_.assign(n > 1 ? n - 1 : 0, 0);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      if (std::abs(d_[i]) >= std::abs(dl_[i])) {
        if (d_[i] == 0.0) d_[i] = tiny;
        const double fact = dl_[i] / d_[i];
        dl_[i] = fact;
        d_[i + 1] -= fact * du_[i];
      } else {
        const double fact = d_[i] / dl_[i];
        d_[i] = dl_[i];
        dl_[i] = fact;
        const double temp = du_[i];
        du_[i] = d_[i + 1];
        d_[i + 1] = temp - fact * d_[i + 1];
        if (i + 2 < n) {
          du2_[i] = du_[i + 1];
          du_[i + 1] = -fact * du_[i + 1];
        }
        swapped_[i] = 1;
      }
    }
    if (n > 0 && d_[n - 1] == 0.0) d_[n - 1] = tiny;
  }

  void solve(std::vector<double>& b) const {
    const std::size_t n = d_.size();
    for (std::size_t i = 0; i + 1 < n; ++i) {
      if (!swapped_[i]) {
        b[i + 1] -= dl_[i] * b[i];
      } else {
        const double temp = b[i];
        b[i] = b[i + 1];
        b[i + 1] = temp - dl_[i] * b[i];
      }
    }
    b[n - 1] /= d_[n - 1];
    if (n >= 2) b[n - 2] = (b[n - 2] - du_[n - 2] * b[n - 1]) / d_[n - 2];
    for (std::size_t k = n >= 2 ? n - 2 : 0; k-- > 0;) {
      b[k] = (b[k] - du_[k] * b[k + 1] - du2_[k] * b[k + 2]) / d_[k];
    }
  }

 private:
  std::vector<double> dl_, d_, du_, du2_;
  std::vector<char> swapped_;
};

inline double euclidean_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  if (m == 0.0) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x / m) * (x / m);
  return m * std::sqrt(s);
}

}  // namespace detail

/// Number of eigenvalues of t strictly below mu (Sturm count).
inline std::size_t sturm_count(const SymTridiagonal& t, double mu) {
  const std::size_t n = t.size();
  const double floor = detail::pivot_floor(t);
  std::size_t count = 0;
  double q = t.diag[0] - mu;
  if (std::abs(q) < floor) q = -floor;
  if (q < 0.0) ++count;
  for (std::size_t i = 1; i < n; ++i) {
    q = t.diag[i] - mu - t.offdiag[i - 1] * t.offdiag[i - 1] / q;
    if (std::abs(q) < floor) q = -floor;
    if (q < 0.0) ++count;
  }
  return count;
}

/// Gershgorin interval enclosing the spectrum.
inline std::pair<double, double> gershgorin_bounds(const SymTridiagonal& t) {
  const std::size_t n = t.size();
  double lo = std::numeric_limits<double>::max();
  double hi = std::numeric_limits<double>::lowest();
  for (std::size_t i = 0; i < n; ++i) {
    double r = 0.0;
    if (i > 0) r += std::abs(t.offdiag[i - 1]);
    if (i + 1 < n) r += std::abs(t.offdiag[i]);
    lo = std::min(lo, t.diag[i] - r);
    hi = std::max(hi, t.diag[i] + r);
  }
  return {lo, hi};
}

/// The index-th smallest eigenvalue (0-based) by bisection.
inline double bisect_eigenvalue(const SymTridiagonal& t, std::size_t index) {
  if (index >= t.size()) throw UsageError("bisect_eigenvalue: index out of range");
  auto [lo, hi] = gershgorin_bounds(t);
  const double eps = std::numeric_limits<double>::epsilon();
  const double scale = std::max(std::abs(lo), std::abs(hi));
  lo -= 2.0 * eps * scale + detail::pivot_floor(t);
  hi += 2.0 * eps * scale + detail::pivot_floor(t);
  for (int it = 0; it < 256; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (hi - lo <= 2.0 * eps * std::max(std::abs(lo), std::abs(hi))) break;
    if (sturm_count(t, mid) > index) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return 0.5 * (lo + hi);
}

/// Eigenvector for an (accurate) eigenvalue by inverse iteration.
///
/// Throws SolverError when the residual does not fall below
/// residual_tol * max(1, max |t_ij|).
inline EigenPair inverse_iteration(const SymTridiagonal& t, double lambda,
                                   double residual_tol = 1e-12, int max_iter = 12) {
  const std::size_t n = t.size();
  const double tiny = std::numeric_limits<double>::epsilon() * std::max(1.0, t.max_abs_entry());
  std::vector<double> diag(t.diag);
  for (double& d : diag) d -= lambda;
  detail::TridiagonalLU lu(t.offdiag, std::move(diag), t.offdiag, tiny);

  // Deterministic, non-symmetric start vector so no parity or node pattern
  // can be orthogonal to the target.
  std::vector<double> x(n);
  std::uint64_t state = 0x9E3779B97F4A7C15ull;
  for (std::size_t i = 0; i < n; ++i) {
    state = state * 6364136223846793005ull + 1442695040888963407ull;
    x[i] = 0.5 + static_cast<double>(state >> 11) * 0x1.0p-53;
  }

  std::vector<double> tx;
  double residual = std::numeric_limits<double>::infinity();
  const double bound = residual_tol * std::max(1.0, t.max_abs_entry());
  for (int it = 0; it < max_iter; ++it) {
    lu.solve(x);
    const double nrm = detail::euclidean_norm(x);
    if (!(nrm > 0.0) || !std::isfinite(nrm)) {
      throw SolverError("inverse_iteration: breakdown at iteration " + std::to_string(it));
    }
    for (double& v : x) v /= nrm;
    t.multiply(x, tx);
    double r = 0.0;
    for (std::size_t i = 0; i < n; ++i) r += (tx[i] - lambda * x[i]) * (tx[i] - lambda * x[i]);
    residual = std::sqrt(r);
    if (it >= 1 && residual <= bound) return {lambda, x, residual};
  }
  std::ostringstream msg;
  msg << "inverse_iteration: no convergence for lambda = " << lambda
      << ", residual = " << residual << " > " << bound;
  throw SolverError(msg.str());
}

/// The count lowest eigenpairs, ascending.
inline std::vector<EigenPair> lowest_eigenpairs(const SymTridiagonal& t, std::size_t count) {
  std::vector<EigenPair> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    out.push_back(inverse_iteration(t, bisect_eigenvalue(t, k)));
  }
  return out;
}

}  // namespace dwgp
