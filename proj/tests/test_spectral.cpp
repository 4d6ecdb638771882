#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "dwgp/spectral.hpp"

using namespace dwgp;

namespace {

using LMat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

const PotentialSpec& quartic() {
  static const PotentialSpec s = PotentialSpec::quartic(2.0, 1.0);
  return s;
}

DoubletBasis quartic_basis(double hbar, std::size_t n = 1024) {
  return lowest_doublet(assemble_hamiltonian(Grid1D(3.0, n), quartic(), hbar, 1.0));
}

// Harmonic V = x^2/2 on dx = 0.01 unless n is changed.
DoubletBasis harmonic_basis(std::size_t n = 2048) {
  const Grid1D g(10.24, n);
  const auto spec = PotentialSpec::sampled(g, [](double x) { return 0.5 * x * x; });
  const auto H = assemble_hamiltonian(g, spec, 1.0, 1.0, AssembleOptions{false});
  return lowest_doublet(H, 1, DoubletOptions{false, 1e-12});
}

LMat dense(const SymTridiagonal& t) {
  const auto n = static_cast<Eigen::Index>(t.diag.size());
  LMat m = LMat::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) m(i, i) = t.diag[static_cast<std::size_t>(i)];
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    m(i, i + 1) = m(i + 1, i) = t.offdiag[static_cast<std::size_t>(i)];
  }
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// validation

TEST(Validation, QuarticPasses) {
  const Grid1D g(3.0, 1024);
  const auto rep = validate_potential(quartic(), g);
  EXPECT_TRUE(rep.ok()) << rep.failures();
  EXPECT_EQ(rep.checks.size(), 4u);
}

TEST(Validation, SingleWellFailsTwoMinima) {
  const Grid1D g(3.0, 1024);
  const auto spec = PotentialSpec::sampled(g, [](double x) { return x * x; });
  const auto rep = validate_potential(spec, g);
  EXPECT_FALSE(rep.ok());
  bool seen = false;
  for (const auto& c : rep.checks) {
    if (c.name == "two-minima") {
      seen = true;
      EXPECT_FALSE(c.passed);
    }
  }
  EXPECT_TRUE(seen);
  EXPECT_NE(rep.failures().find("two-minima"), std::string::npos);
}

TEST(Validation, TiltFailsSymmetry) {
  const Grid1D g(3.0, 1024);
  const auto spec =
      PotentialSpec::sampled(g, [](double x) { return (x * x - 1) * (x * x - 1) + 0.1 * x; });
  const auto rep = validate_potential(spec, g);
  for (const auto& c : rep.checks) {
    if (c.name == "symmetry") {
      EXPECT_FALSE(c.passed);
    }
  }
  EXPECT_NE(rep.failures().find("symmetry"), std::string::npos);
}

TEST(Validation, AssembleRejectsInvalid) {
  const Grid1D g(3.0, 1024);
  const auto spec = PotentialSpec::sampled(g, [](double x) { return x * x; });
  EXPECT_THROW(assemble_hamiltonian(g, spec, 0.3, 1.0), ValidationError);
}

TEST(Potential, QuarticFactoryRejectsNonPositive) {
  EXPECT_THROW(PotentialSpec::quartic(0.0, 1.0), DomainError);
  EXPECT_THROW(PotentialSpec::quartic(2.0, -1.0), DomainError);
}

TEST(Potential, CsvRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "dwgp_test_potential.csv";
  {
    std::ofstream f(path);
    f << "x,V\n# comment\n";
    for (int i = -30; i <= 30; ++i) {
      const double x = 0.1 * i;
      f << x << "," << 2.0 * (x * x - 1) * (x * x - 1) << "\n";
    }
  }
  const auto spec = PotentialSpec::from_csv(path.string());
  EXPECT_EQ(spec.table_x().size(), 61u);
  EXPECT_NEAR(spec(1.0), 0.0, 1e-12);
  EXPECT_NEAR(spec(0.0), 2.0, 1e-12);
  EXPECT_NEAR(spec.well_position(), 1.0, 1e-12);
  std::filesystem::remove(path);
}

TEST(Potential, CsvGarbageIsUsageError) {
  const auto path = std::filesystem::temp_directory_path() / "dwgp_test_bad.csv";
  {
    std::ofstream f(path);
    f << "x,V\n0,1\nabc,def\n";
  }
  EXPECT_THROW(PotentialSpec::from_csv(path.string()), UsageError);
  std::filesystem::remove(path);
}

// ---------------------------------------------------------------------------
// Hamiltonian

TEST(Hamiltonian, HarmonicGroundStateResidual) {
  const Grid1D g(10.24, 2048);
  ASSERT_NEAR(g.dx(), 0.01, 1e-15);
  std::vector<double> v(g.size());
  for (std::size_t j = 0; j < g.size(); ++j) v[j] = 0.5 * g.x(j) * g.x(j);
  const DiscreteHamiltonian H(g, v, 1.0, 1.0);
  const auto phi = Wavefunction::from_function(
      g, [](double x) { return Complex(std::exp(-0.5 * x * x)); });
  const double rel = lp_norm(H.apply(phi) - Complex(0.5) * phi, 2.0) / lp_norm(phi, 2.0);
  EXPECT_LE(rel, 1e-4);
  EXPECT_GT(rel, 0.0);
}

TEST(Hamiltonian, ApplierMatchesMatrixAndIsSymmetric) {
  const Grid1D g(3.0, 256);
  const auto H = assemble_hamiltonian(g, quartic(), 0.3, 1.0);
  const auto f = Wavefunction::from_function(
      g, [](double x) { return Complex(std::sin(3 * x) + x * x, std::cos(x)); });
  const auto u = Wavefunction::from_function(
      g, [](double x) { return Complex(std::exp(-x * x), 0.5 * x); });

  // interior nodes against the tridiagonal matrix
  const auto M = H.matrix();
  const auto Hf = H.apply(f);
  for (std::size_t j = 1; j < g.size(); ++j) {
    const std::size_t i = j - 1;
    Complex s = M.diag[i] * f[j];
    if (i > 0) s += M.offdiag[i - 1] * f[j - 1];
    if (i + 1 < M.diag.size()) s += M.offdiag[i] * f[j + 1];
    EXPECT_LE(std::abs(s - Hf[j]), 1e-12 * (1 + std::abs(s)));
  }
  EXPECT_EQ(Hf[0], Complex{});

  // <Hf, u> = <f, Hu> when both vanish at the Dirichlet node
  auto zero_end = [](Wavefunction w) {
    w[0] = 0.0;
    return w;
  };
  const auto f0 = zero_end(f), u0 = zero_end(u);
  const Complex lhs = inner_product(H.apply(f0), u0);
  const Complex rhs = inner_product(f0, H.apply(u0));
  EXPECT_LE(std::abs(lhs - rhs), 1e-10 * std::abs(lhs));
}

TEST(Hamiltonian, CommutesWithReflection) {
  const Grid1D g(3.0, 512);
  const auto H = assemble_hamiltonian(g, quartic(), 0.2, 1.0);
  auto f = Wavefunction::from_function(
      g, [](double x) { return Complex(std::exp(-(x - 0.7) * (x - 0.7)), x); });
  f[0] = 0.0;
  const auto a = H.apply(reflect(f));
  const auto b = reflect(H.apply(f));
  EXPECT_LE(lp_norm(a - b, kInf), 1e-10);
}

TEST(Hamiltonian, RejectsNonPositiveHbarOrMass) {
  const Grid1D g(3.0, 256);
  EXPECT_THROW(assemble_hamiltonian(g, quartic(), 0.0, 1.0), DomainError);
  EXPECT_THROW(assemble_hamiltonian(g, quartic(), -0.1, 1.0), DomainError);
  EXPECT_THROW(assemble_hamiltonian(g, quartic(), 0.3, 0.0), DomainError);
}

TEST(Hamiltonian, SecondOrderConvergence) {
  // Same L, dx halved: the eigenvalue error drops by about 4.
  const double e1 = std::abs(harmonic_basis(1024).lambda1 - 0.5);
  const double e2 = std::abs(harmonic_basis(2048).lambda1 - 0.5);
  EXPECT_NEAR(e1 / e2, 4.0, 0.1);
}

// ---------------------------------------------------------------------------
// ground doublet

TEST(Doublet, HarmonicSpectrum) {
  const auto b = harmonic_basis();
  EXPECT_NEAR(b.lambda1, 0.5, 1e-4);
  EXPECT_NEAR(b.lambda2, 1.5, 1e-4);
  EXPECT_NEAR(b.lambda2_direct, b.lambda2, 1e-10);
  EXPECT_NEAR(b.excited.front(), 2.5, 1e-4);
}

TEST(Doublet, HarmonicRejectedOnDoubleWellPath) {
  const Grid1D g(10.24, 2048);
  const auto spec = PotentialSpec::sampled(g, [](double x) { return 0.5 * x * x; });
  const auto H = assemble_hamiltonian(g, spec, 1.0, 1.0, AssembleOptions{false});
  EXPECT_THROW(lowest_doublet(H), ModelError);
}

TEST(Doublet, QuarticInvariants) {
  const auto b = quartic_basis(0.3);
  const Grid1D& g = b.grid();
  EXPECT_LT(b.lambda1, b.lambda2);
  EXPECT_GT(b.omega, 0.0);
  EXPECT_NEAR(b.Omega, 0.5 * (b.lambda1 + b.lambda2), 1e-14);
  EXPECT_GT(b.gap3, 2.0 * b.omega);

  for (const auto* f : {&b.phi1, &b.phi2, &b.phiR, &b.phiL}) {
    EXPECT_NEAR(lp_norm(*f, 2.0), 1.0, 1e-12);
  }
  EXPECT_LE(std::abs(inner_product(b.phi1, b.phi2)), 1e-12);
  EXPECT_LE(std::abs(inner_product(b.phiR, b.phiL)), 1e-12);

  // parity
  EXPECT_LE(lp_norm(reflect(b.phi1) - b.phi1, kInf), 1e-14);
  EXPECT_LE(lp_norm(reflect(b.phi2) + b.phi2, kInf), 1e-14);
  EXPECT_LE(lp_norm(reflect(b.phiR) - b.phiL, 2.0), 1e-8);

  // sign convention at the right minimum
  const std::size_t ja = g.nearest(1.0);
  EXPECT_GT(b.phi1[ja].real(), 0.0);
  EXPECT_GT(b.phi2[ja].real(), 0.0);

  EXPECT_LE(b.residual1, 1e-8 * std::abs(b.lambda1));
  EXPECT_LE(b.residual2, 1e-8 * std::abs(b.lambda2));
  EXPECT_GE(b.localization, 1.0 - 10.0 * b.omega);
  EXPECT_NEAR(b.c, std::pow(lp_norm(b.phiR, 4.0), 4), 1e-12);
  EXPECT_NEAR(b.c_norm, std::sqrt(b.c), 1e-15);
}

TEST(Doublet, RightStateIsRightOfCentre) {
  const auto b = quartic_basis(0.1);
  const auto X = ObservableX::standard(b.grid(), 1.0);
  EXPECT_GT(center_of_mass(b.phiR, X), 0.0);
  EXPECT_LT(center_of_mass(b.phiL, X), 0.0);
}

TEST(Doublet, DenseOracleEigenvalues) {
  // Full (n-1)x(n-1) matrix in long double, no parity reduction.
  const auto b = quartic_basis(0.3, 512);
  const LMat M = dense(b.hamiltonian.matrix());
  Eigen::SelfAdjointEigenSolver<LMat> es(M, Eigen::EigenvaluesOnly);
  ASSERT_EQ(es.info(), Eigen::Success);
  const auto& ev = es.eigenvalues();
  const long double omega = (ev(1) - ev(0)) / 2;
  EXPECT_LE(std::abs(b.lambda1 - static_cast<double>(ev(0))), 1e-10 * std::abs(b.lambda1));
  EXPECT_LE(std::abs(b.lambda2 - static_cast<double>(ev(1))), 1e-10 * std::abs(b.lambda2));
  EXPECT_LE(std::abs(b.excited.front() - static_cast<double>(ev(2))),
            1e-10 * std::abs(b.excited.front()));
  EXPECT_LE(std::abs(b.omega - static_cast<double>(omega)), 1e-10 * b.omega);
}

TEST(Doublet, ModelErrorWhenDomainTooSmall) {
  // ground state does not decay before +-L
  const Grid1D g(1.3, 256);
  EXPECT_THROW(lowest_doublet(assemble_hamiltonian(g, quartic(), 0.3, 1.0)), ModelError);
}

// ---------------------------------------------------------------------------
// overlap_sup

TEST(Overlap, NonNegativeAndSymmetric) {
  for (double hb : {0.3, 0.1}) {
    const auto b = quartic_basis(hb);
    const double ov = overlap_sup(b);
    EXPECT_GE(ov, 0.0);
    double direct_rl = 0.0, direct_lr = 0.0;
    for (std::size_t j = 0; j < b.phiR.size(); ++j) {
      direct_rl = std::max(direct_rl, std::abs(b.phiR[j] * b.phiL[j]));
      direct_lr = std::max(direct_lr, std::abs(b.phiL[j] * b.phiR[j]));
    }
    EXPECT_EQ(direct_rl, direct_lr);
    // where rounding is harmless the plain maximum is the reference
    EXPECT_NEAR(ov, direct_rl, 1e-3 * ov);
  }
}

TEST(Overlap, ParityResolvedLongDoubleOracle) {
  // phi1^2 - phi2^2 from separate long double solves of the even and odd
  // sectors: accurate to ~1e-16 relative, well below omega at hbar = 0.08.
  const double hb = 0.08;
  const auto b = quartic_basis(hb, 512);
  const auto& H = b.hamiltonian;
  const std::size_t c = b.grid().center();
  const double dx = b.grid().dx();

  Eigen::SelfAdjointEigenSolver<LMat> even(dense(H.even_sector()));
  Eigen::SelfAdjointEigenSolver<LMat> odd(dense(H.odd_sector()));
  ASSERT_EQ(even.info(), Eigen::Success);
  ASSERT_EQ(odd.info(), Eigen::Success);
  std::vector<long double> fe(c), fo(c, 0.0L);
  for (std::size_t i = 0; i < c; ++i) {
    fe[i] = even.eigenvectors()(static_cast<Eigen::Index>(i), 0) /
            std::sqrt(static_cast<long double>((i == 0 ? 1.0 : 2.0) * dx));
  }
  for (std::size_t i = 1; i < c; ++i) {
    fo[i] = odd.eigenvectors()(static_cast<Eigen::Index>(i - 1), 0) /
            std::sqrt(static_cast<long double>(2.0 * dx));
  }
  long double best = 0.0L;
  for (std::size_t i = 0; i < c; ++i) {
    best = std::max(best, std::abs(fe[i] * fe[i] - fo[i] * fo[i]) / 2);
  }
  const double oracle = static_cast<double>(best);
  EXPECT_NEAR(overlap_sup(b), oracle, 1e-3 * oracle);
}

TEST(Overlap, BoundedByOmegaAcrossScan) {
  const auto b10 = quartic_basis(0.10);
  const auto b06 = quartic_basis(0.06);
  const double r10 = overlap_sup(b10) / b10.omega;
  const double r06 = overlap_sup(b06) / b06.omega;
  EXPECT_GT(r10, 0.0);
  EXPECT_GT(r06, 0.0);
  EXPECT_LE(std::max(r10, r06) / std::min(r10, r06), 10.0) << r10 << " " << r06;
}

TEST(Overlap, GridIndependent) {
  const double a = overlap_sup(quartic_basis(0.05, 1024));
  const double b = overlap_sup(quartic_basis(0.05, 2048));
  EXPECT_NEAR(a / b, 1.0, 0.1);
}

// ---------------------------------------------------------------------------
// Lp scaling of the eigenstates

TEST(LpReport, NormalisationAndBoundedness) {
  double lo = 1e300, hi = 0.0;
  for (double hb : {0.10, 0.08, 0.06, 0.05, 0.04}) {
    const auto b = quartic_basis(hb);
    const auto rep = eigenstate_lp_report(b, hb);
    EXPECT_EQ(rep.rows.size(), 6u);
    EXPECT_NEAR(rep.scaled(1, 2.0), 1.0, 1e-12);
    EXPECT_NEAR(rep.scaled(2, 2.0), 1.0, 1e-12);
    for (double p : {4.0, kInf}) {
      const double r = rep.scaled(1, p) / rep.scaled(2, p);
      EXPECT_NEAR(r, 1.0, 0.2) << "p = " << p << " hbar = " << hb;
    }
    lo = std::min(lo, rep.scaled(1, kInf));
    hi = std::max(hi, rep.scaled(1, kInf));
  }
  EXPECT_LE(hi / lo, 3.0);
  EXPECT_THROW(eigenstate_lp_report(quartic_basis(0.3), 0.3).scaled(3, 2.0), UsageError);
}

TEST(LpReport, ScaleExponent) {
  EXPECT_DOUBLE_EQ(lp_scale_exponent(2.0), 0.0);
  EXPECT_DOUBLE_EQ(lp_scale_exponent(4.0), 0.125);
  EXPECT_DOUBLE_EQ(lp_scale_exponent(kInf), 0.25);
}

// ---------------------------------------------------------------------------
// Agmon distance

TEST(Agmon, SquareBarrier) {
  const double b = 0.5, v0 = 2.0;
  const auto spec =
      PotentialSpec::tabulated({-5.0, -b, -b, b, b, 5.0}, {0.0, 0.0, v0, v0, 0.0, 0.0});
  EXPECT_NEAR(well_boundary(spec, 0.0), b, 1e-12);
  EXPECT_NEAR(agmon_distance(spec), 2.0 * b * std::sqrt(v0), 1e-10);
}

TEST(Agmon, QuarticAgainstAdaptiveQuadrature) {
  boost::math::quadrature::tanh_sinh<double> ts;
  for (double delta : {0.0, 0.2, 0.4}) {
    const double b = well_boundary(quartic(), delta);
    EXPECT_NEAR(quartic()(b), delta, 1e-12);
    auto f = [&](double x) { return std::sqrt(std::max(quartic()(x) - delta, 0.0)); };
    const double oracle = ts.integrate(f, -b, b);
    EXPECT_NEAR(agmon_distance(quartic(), delta), oracle, 1e-10) << "delta = " << delta;
  }
  EXPECT_NEAR(agmon_distance(quartic()), 4.0 * std::numbers::sqrt2 / 3.0, 1e-10);
}

TEST(Agmon, DecreasingInDelta) {
  const double g0 = agmon_distance(quartic(), 0.0);
  const double g1 = agmon_distance(quartic(), 0.2);
  const double g2 = agmon_distance(quartic(), 0.4);
  EXPECT_GT(g0, g1);
  EXPECT_GT(g1, g2);
}

TEST(Agmon, MergedWellsAreDomainError) {
  EXPECT_THROW(agmon_distance(quartic(), 2.0), DomainError);
  EXPECT_THROW(agmon_distance(quartic(), 3.0), DomainError);
  EXPECT_THROW(well_boundary(quartic(), -0.1), DomainError);
}

// ---------------------------------------------------------------------------
// splitting scan

TEST(SplittingScan, ExponentialLaw) {
  const Grid1D g(3.0, 1024);
  const auto fit = splitting_scan(quartic(), 1.0, {0.10, 0.08, 0.06, 0.05, 0.04}, g);
  ASSERT_EQ(fit.points.size(), 5u);
  EXPECT_TRUE(fit.all_converged);
  EXPECT_TRUE(fit.strictly_decreasing);
  for (std::size_t i = 0; i < fit.points.size(); ++i) {
    EXPECT_GT(fit.points[i].omega, 0.0);
    if (i) {
      EXPECT_LT(fit.points[i].omega, fit.points[i - 1].omega);
    }
  }
  EXPECT_LT(fit.slope, 0.0);
  EXPECT_GE(fit.r_squared, 0.999);
  EXPECT_NEAR(fit.gamma0_normalized, std::numbers::sqrt2 * agmon_distance(quartic()), 1e-14);
  EXPECT_LE(std::abs(-fit.slope / fit.gamma0_normalized - 1.0), 0.15);
}

TEST(SplittingScan, ThreadCountDoesNotChangeResult) {
  const Grid1D g(3.0, 512);
  const std::vector<double> hb{0.2, 0.15, 0.12, 0.1};
  const auto a = splitting_scan(quartic(), 1.0, hb, g, 1);
  const auto b = splitting_scan(quartic(), 1.0, hb, g, 3);
  for (std::size_t i = 0; i < hb.size(); ++i) {
    EXPECT_EQ(a.points[i].omega, b.points[i].omega);
  }
  EXPECT_EQ(a.slope, b.slope);
}

TEST(SplittingScan, FailedPointIsFlagged) {
  // at hbar = 5 the doublet is not separated from the rest of the spectrum
  const Grid1D g(3.0, 512);
  const auto fit = splitting_scan(quartic(), 1.0, {5.0, 0.3, 0.2, 0.15}, g);
  ASSERT_EQ(fit.points.size(), 4u);
  EXPECT_FALSE(fit.points[0].converged);
  EXPECT_TRUE(std::isnan(fit.points[0].omega));
  EXPECT_FALSE(fit.points[0].error.empty());
  EXPECT_FALSE(fit.all_converged);
  EXPECT_TRUE(fit.points[3].converged);
}

TEST(SplittingScan, Preconditions) {
  const Grid1D g(3.0, 512);
  EXPECT_THROW(splitting_scan(quartic(), 1.0, {0.1, 0.08, 0.06}, g), UsageError);
  EXPECT_THROW(splitting_scan(quartic(), 1.0, {0.1, 0.08, 0.09, 0.05}, g), UsageError);
}
