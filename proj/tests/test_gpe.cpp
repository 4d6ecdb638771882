#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <memory>
#include <numbers>

#include "dwgp/gpe.hpp"

using namespace dwgp;

namespace {

constexpr double kPi = std::numbers::pi;

std::shared_ptr<const DoubletBasis> basis(double hbar, std::size_t n = 1024) {
  static std::map<std::pair<double, std::size_t>, std::shared_ptr<const DoubletBasis>> cache;
  auto& slot = cache[{hbar, n}];
  if (!slot) {
    slot = std::make_shared<const DoubletBasis>(lowest_doublet(
        assemble_hamiltonian(Grid1D(3.0, n), PotentialSpec::quartic(2.0, 1.0), hbar, 1.0)));
  }
  return slot;
}

EvolutionConfig config(std::shared_ptr<const DoubletBasis> b, double eta, Method m) {
  EvolutionConfig c;
  c.basis = std::move(b);
  c.epsilon = eta * c.basis->omega / c.basis->c;
  c.method = m;
  c.t_end = c.period();
  return c;
}

Wavefunction conj(const Wavefunction& f) {
  std::vector<Complex> v(f.values().begin(), f.values().end());
  for (auto& x : v) x = std::conj(x);
  return Wavefunction(f.grid(), std::move(v));
}

Wavefunction final_state(const Wavefunction& psi0, EvolutionConfig c) {
  c.store_states = true;
  c.stride = static_cast<std::size_t>(-1);
  return *propagate(psi0, c).samples.back().state;
}

}  // namespace

TEST(Method, Names) {
  for (Method m : {Method::Exponential, Method::SplitStep, Method::CrankNicolson}) {
    EXPECT_EQ(method_from_string(to_string(m)), m);
  }
  EXPECT_THROW(method_from_string("euler"), UsageError);
}

// ---------------------------------------------------------------------------
// energy and projection

TEST(Energy, Eigenstates) {
  const auto b = basis(0.3);
  auto c = config(b, 0.0, Method::Exponential);
  EXPECT_NEAR(energy(b->phi1, c), b->lambda1, 1e-6 * std::abs(b->lambda1));
  EXPECT_NEAR(energy(b->phi2, c), b->lambda2, 1e-6 * std::abs(b->lambda2));
  EXPECT_NEAR(energy(b->phiR, c), b->Omega, 1e-6 * std::abs(b->Omega));
}

TEST(Energy, QuarticTerm) {
  const auto b = basis(0.3);
  auto c = config(b, 1.0, Method::Exponential);
  EXPECT_NEAR(energy(b->phiR, c), b->Omega + 0.5 * c.epsilon * b->c, 1e-10);
}

TEST(Energy, GradientOfConstantIsZeroInside) {
  const Grid1D g(3.0, 128);
  EXPECT_NEAR(gradient_norm(Wavefunction::from_function(g, [](double) { return Complex(1); })),
              0.0, 1e-14);
}

TEST(Projection, RightState) {
  const auto b = basis(0.3);
  const auto d = project_doublet(b->phiR, *b);
  EXPECT_NEAR(std::abs(d.aR - 1.0), 0.0, 1e-10);
  EXPECT_NEAR(std::abs(d.aL), 0.0, 1e-10);
  EXPECT_NEAR(d.psi_c_norm, 0.0, 1e-10);
}

TEST(Projection, OddState) {
  const auto b = basis(0.3);
  const auto d = project_doublet(b->phi2, *b);
  EXPECT_NEAR(std::abs(d.aR - std::numbers::sqrt2 / 2), 0.0, 1e-10);
  EXPECT_NEAR(std::abs(d.aL + std::numbers::sqrt2 / 2), 0.0, 1e-10);
  EXPECT_NEAR(d.psi_c_norm, 0.0, 1e-10);
}

TEST(Projection, GeneralStateIsComplete) {
  const auto b = basis(0.3);
  auto psi = Wavefunction::from_function(b->grid(), [](double x) {
    return Complex(std::exp(-(x - 0.4) * (x - 0.4) * 3), 0.3 * x * std::exp(-x * x));
  });
  psi[0] = 0.0;
  psi *= Complex(1.0 / lp_norm(psi, 2.0));
  const auto d = project_doublet(psi, *b);
  EXPECT_GT(d.psi_c_norm, 1e-3);
  EXPECT_LE(d.completeness_defect, 1e-10);
  EXPECT_LE(d.orthogonality_defect, 1e-10);
  EXPECT_LE(d.reconstruction_defect, 1e-12);
  EXPECT_THROW(project_doublet(Wavefunction(Grid1D(3.0, 512)), *b), UsageError);
}

// ---------------------------------------------------------------------------
// remainders

TEST(Remainders, PureRightState) {
  const auto b = basis(0.3);
  const Complex a = std::polar(0.9, 0.3);
  const auto r = remainder_terms(a * b->phiR, *b);
  EXPECT_LE(std::abs(r.rR), 1e-12);

  // r_L = |a|^2 a <phi_L phi_R, phi_R^2>, bounded by |a|^3 max|phi_R phi_L|.
  Complex expect{};
  for (std::size_t j = 0; j < b->phiR.size(); ++j) {
    expect += std::conj(b->phiL[j]) * std::norm(b->phiR[j]) * b->phiR[j];
  }
  expect *= std::norm(a) * a * b->grid().dx();
  EXPECT_NEAR(std::abs(r.rL - expect), 0.0, 1e-12);
  EXPECT_GT(std::abs(r.rL), 0.0);
  EXPECT_LE(std::abs(r.rL), overlap_sup(*b) * std::pow(std::abs(a), 3) * (1 + 1e-9));
}

TEST(Remainders, ProjectedEquationAlongTrajectory) {
  const auto b = basis(0.08);
  auto c = config(b, 1.0, Method::Exponential);
  c.t_end = c.period() / 20;
  c.dt = c.period() / 4000;
  c.store_states = true;
  const auto tr = propagate(b->phiR, c);
  const auto rc = remainder_consistency(tr, *b);
  EXPECT_TRUE(rc.passed) << rc.max_mismatch << " > " << rc.tolerance;
  EXPECT_LE(rc.tolerance, 1e-4);
}

// ---------------------------------------------------------------------------
// propagation

TEST(Propagate, StationaryEvenState) {
  for (Method m : {Method::Exponential, Method::CrankNicolson}) {
    const auto b = basis(0.3);
    auto c = config(b, 0.0, m);
    c.stride = m == Method::Exponential ? 400 : 2000;
    c.store_states = true;
    const auto tr = propagate(b->phi1, c);
    ASSERT_GE(tr.samples.size(), 10u);
    double worst = 0.0;
    for (const auto& s : tr.samples) {
      worst = std::max(worst, std::abs(std::abs(inner_product(b->phi1, *s.state)) - 1.0));
      EXPECT_NEAR(s.z, 0.0, 1e-8);
    }
    EXPECT_LE(worst, 1e-8) << to_string(m);

    const auto rows = lp_diagnostics(tr, b->hbar());
    for (const auto& r : rows) {
      EXPECT_NEAR(r.p2, 1.0, 1e-8);
      EXPECT_NEAR(r.gradient, rows.front().gradient, 1e-6 * rows.front().gradient);
    }
  }
}

// Strang splitting leaks phi1 into the rest of the spectrum at O(dt^2);
// the ratio is only near 4 once dt is well below T/20000.
TEST(Propagate, SplitStepStationaryLeakIsSecondOrder) {
  const auto b = basis(0.3);
  auto leak = [&](double dt) {
    auto c = config(b, 0.0, Method::SplitStep);
    c.t_end = c.period() / 100;
    c.dt = dt;
    const auto psi = final_state(b->phi1, c);
    return std::sqrt(std::max(0.0, 1.0 - std::norm(inner_product(b->phi1, psi))));
  };
  const double T = config(b, 0.0, Method::SplitStep).period();
  const double coarse = leak(T / 80000);
  const double fine = leak(T / 160000);
  EXPECT_GT(coarse, 0.0);
  EXPECT_NEAR(coarse / fine, 4.0, 0.5);
}

TEST(Propagate, LinearBeating) {
  const auto b = basis(0.3);
  auto c = config(b, 0.0, Method::Exponential);
  const auto tr = propagate(b->phiR, c);
  double worst = 0.0;
  for (const auto& s : tr.samples) {
    worst = std::max(worst, std::abs(s.z - std::cos(2 * b->omega * s.t / b->hbar())));
  }
  EXPECT_LE(worst, 1e-6);
  EXPECT_NEAR(tr.samples.back().t, c.period(), 1e-9 * c.period());
  // centre of mass follows the imbalance
  EXPECT_GT(tr.samples.front().center_of_mass, 0.0);
  EXPECT_LT(tr.samples[tr.samples.size() / 2].center_of_mass, 0.0);
}

TEST(Propagate, CrankNicolsonConservation) {
  const auto b = basis(0.3);
  auto c = config(b, 1.0, Method::CrankNicolson);
  c.stride = 500;
  const auto tr = propagate(b->phiR, c);
  EXPECT_LE(tr.max_norm_drift(), 1e-8);
  EXPECT_LE(tr.max_energy_drift(), 1e-5);
  EXPECT_LE(tr.max_completeness_defect(), 1e-10);
}

TEST(Propagate, ExponentialConservation) {
  const auto b = basis(0.3);
  auto c = config(b, 1.0, Method::Exponential);
  c.stride = 100;
  const auto tr = propagate(b->phiR, c);
  EXPECT_LE(tr.max_norm_drift(), 1e-8);
  EXPECT_LE(tr.max_energy_drift(), 1e-6);
}

TEST(Propagate, NormToleranceRaisesWithTime) {
  const auto b = basis(0.3);
  auto c = config(b, 1.0, Method::SplitStep);
  c.t_end = c.period() / 100;
  c.norm_tolerance = 0.0;
  try {
    propagate(b->phiR, c);
    FAIL() << "expected IntegrationError";
  } catch (const IntegrationError& e) {
    EXPECT_GT(e.time(), 0.0);
    EXPECT_NE(std::string(e.what()).find("t = "), std::string::npos);
  }
}

TEST(Propagate, StepSizeWarning) {
  const auto b = basis(0.3);
  auto c = config(b, 1.0, Method::SplitStep);
  c.dt = c.period() / 100;
  c.t_end = 3 * c.dt;
  const auto tr = propagate(b->phiR, c);
  ASSERT_FALSE(tr.warnings.empty());
  EXPECT_NE(tr.warnings.front().find("> 0.1"), std::string::npos);

  c.dt = 1e-4;
  c.t_end = 3e-4;
  EXPECT_TRUE(propagate(b->phiR, c).warnings.empty());
}

TEST(Propagate, Preconditions) {
  const auto b = basis(0.3);
  auto c = config(b, 0.0, Method::SplitStep);
  c.t_end = c.period() / 1000;

  auto gauss = Wavefunction::from_function(
      b->grid(), [](double x) { return Complex(std::exp(-4 * x * x)); });
  gauss *= Complex(1.0 / lp_norm(gauss, 2.0));
  EXPECT_THROW(propagate(gauss, c), UsageError);
  c.allow_general_initial = true;
  EXPECT_NO_THROW(propagate(gauss, c));
  c.allow_general_initial = false;

  EXPECT_THROW(propagate(Complex(2.0) * b->phiR, c), UsageError);
  auto bad = c;
  bad.t_end = 0.0;
  EXPECT_THROW(propagate(b->phiR, bad), UsageError);
  bad = c;
  bad.stride = 0;
  EXPECT_THROW(propagate(b->phiR, bad), UsageError);
  bad = c;
  bad.basis = nullptr;
  EXPECT_THROW(propagate(b->phiR, bad), UsageError);
}

TEST(Propagate, CouplingCaps) {
  const auto b = basis(0.3);
  auto c = config(b, 150.0, Method::SplitStep);
  c.t_end = c.period() / 1000;
  EXPECT_THROW(propagate(b->phiR, c), UsageError);
  c.eta_max = 200.0;
  EXPECT_NO_THROW(check_coupling(c));

  auto a = config(b, -1.0, Method::SplitStep);
  EXPECT_NO_THROW(check_coupling(a));
  a.attractive_cap = 0.5 * std::abs(a.epsilon);
  EXPECT_THROW(check_coupling(a), UsageError);
}

// ---------------------------------------------------------------------------
// integrator properties

TEST(Integrators, SplitStepAgreesWithCrankNicolson) {
  const auto b = basis(0.5, 512);
  auto run = [&](Method m, double dt) {
    auto c = config(b, 1.0, m);
    c.t_end = 2.0;
    c.dt = dt;
    return final_state(b->phiR, c);
  };
  const double d1 = lp_norm(run(Method::SplitStep, 2e-3) - run(Method::CrankNicolson, 2e-3), 2.0);
  const double d2 = lp_norm(run(Method::SplitStep, 1e-3) - run(Method::CrankNicolson, 1e-3), 2.0);
  EXPECT_LE(d2, 1e-5);
  EXPECT_LT(d2, d1);
}

TEST(Integrators, TimeReversalByConjugation) {
  for (Method m : {Method::SplitStep, Method::CrankNicolson, Method::Exponential}) {
    const auto b = basis(0.3);
    auto c = config(b, 0.0, m);
    c.t_end = c.period() / 7;
    const auto fwd = final_state(b->phiR, c);
    c.allow_general_initial = true;
    const auto back = conj(final_state(conj(fwd), c));
    EXPECT_LE(lp_norm(back - b->phiR, 2.0), 1e-8) << to_string(m);
  }
}

TEST(Integrators, GaugeOfTheEnergyShift) {
  for (Method m : {Method::SplitStep, Method::Exponential, Method::CrankNicolson}) {
    const auto b = basis(0.3);
    auto c = config(b, 1.0, m);
    c.t_end = c.period() / 50;
    const auto shifted = final_state(b->phiR, c);
    c.omega_shift = false;
    const auto plain = final_state(b->phiR, c);
    const Complex phase = std::polar(1.0, -b->Omega * c.t_end / b->hbar());
    EXPECT_LE(lp_norm(plain - phase * shifted, 2.0), 1e-8) << to_string(m);
  }
}

// ---------------------------------------------------------------------------
// Lp diagnostics across hbar

TEST(LpDiagnostics, BoundedAcrossHbar) {
  double lo = 1e300, hi = 0.0;
  for (double hb : {0.10, 0.08, 0.05}) {
    const auto b = basis(hb);
    auto c = config(b, 1.0, Method::Exponential);
    c.t_end = c.period() / 8;
    c.stride = 50;
    c.store_states = true;
    for (const auto& r : lp_diagnostics(propagate(b->phiR, c), hb)) {
      EXPECT_NEAR(r.p2, 1.0, 1e-8);
      lo = std::min(lo, r.pinf);
      hi = std::max(hi, r.pinf);
    }
  }
  EXPECT_LE(hi / lo, 3.0);
}

TEST(LpDiagnostics, NeedsStates) {
  const auto b = basis(0.3);
  auto c = config(b, 0.0, Method::Exponential);
  c.t_end = c.period() / 100;
  EXPECT_THROW(lp_diagnostics(propagate(b->phiR, c), 0.3), UsageError);
}

// ---------------------------------------------------------------------------
// stability experiment

TEST(Stability, LinearCaseIsDiscretisationOnly) {
  const auto spec = PotentialSpec::quartic(2.0, 1.0);
  StabilityOptions opt;
  opt.keep_trajectories = false;
  const auto rep = stability_experiment(spec, {0.3, 0.2, 0.15}, 0.0, 2 * kPi, {}, opt);
  ASSERT_EQ(rep.rows.size(), 3u);
  for (const auto& r : rep.rows) {
    EXPECT_LE(r.max_dev_R, 1e-6);
    EXPECT_LE(r.max_dev_L, 1e-6);
    EXPECT_LE(r.max_psi_c, 1e-6);
    EXPECT_EQ(r.epsilon, 0.0);
  }
}

TEST(Stability, ThreadCountDoesNotChangeResult) {
  const auto spec = PotentialSpec::quartic(2.0, 1.0);
  StabilityOptions opt;
  opt.n_points = 512;
  opt.threads = 1;
  const std::vector<double> hb{0.3, 0.25, 0.2};
  const auto a = stability_experiment(spec, hb, 1.0, 0.5, {}, opt);
  opt.threads = 3;
  const auto b = stability_experiment(spec, hb, 1.0, 0.5, {}, opt);
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].hbar, hb[i]);
    EXPECT_EQ(a.rows[i].max_dev_R, b.rows[i].max_dev_R);
    EXPECT_EQ(a.rows[i].max_psi_c, b.rows[i].max_psi_c);
    EXPECT_EQ(a.runs[i].pde.samples.back().aR, b.runs[i].pde.samples.back().aR);
  }
  // PDE and two-mode series share the sample times
  const auto& run = a.runs.front();
  ASSERT_EQ(run.pde.samples.size(), run.two_mode.size());
  EXPECT_NEAR(run.pde.samples.back().tau, run.two_mode.back().tau, 1e-12);
}

TEST(Stability, CustomInitialState) {
  const auto spec = PotentialSpec::quartic(2.0, 1.0);
  StabilityOptions opt;
  opt.n_points = 512;
  InitialState init{InitialChoice::Custom, Complex(0.8), Complex(0.0, 0.6)};
  const auto rep = stability_experiment(spec, {0.3, 0.25, 0.2}, 0.5, 0.3, init, opt);
  const auto& s0 = rep.runs.front().pde.samples.front();
  EXPECT_NEAR(s0.z, 0.0, 1e-12);  // z = 2 Re(c1 conj(c2)) = 0
  EXPECT_THROW(make_initial(*basis(0.3), {InitialChoice::Custom, Complex(1), Complex(1)}),
               UsageError);
}

TEST(Stability, Preconditions) {
  const auto spec = PotentialSpec::quartic(2.0, 1.0);
  EXPECT_THROW(stability_experiment(spec, {0.3, 0.2}, 1.0, 1.0), UsageError);
  EXPECT_THROW(stability_experiment(spec, {0.2, 0.3, 0.1}, 1.0, 1.0), UsageError);
  EXPECT_THROW(stability_experiment(spec, {0.3, 0.2, 0.1}, 1.0, 0.0), UsageError);
}

TEST(Stability, FailureCarriesHbar) {
  const auto spec = PotentialSpec::quartic(2.0, 1.0);
  StabilityOptions opt;
  opt.n_points = 256;
  try {
    stability_experiment(spec, {2.0, 0.3, 0.2}, 1.0, 0.1, {}, opt);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(std::string(e.what()).rfind("hbar = 2: ", 0), 0u) << e.what();
  }
}
