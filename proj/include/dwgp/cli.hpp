#pragma once

// Batch front end: JSON run configuration, the five subcommands, and the
// mapping from failures to exit codes.  Commands only compute; every file
// goes through one ordered artifact list that run() writes at the end (also
// after a failure, so partial results survive).

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dwgp/errors.hpp"
#include "dwgp/gpe.hpp"
#include "dwgp/io.hpp"
#include "dwgp/parallel.hpp"
#include "dwgp/spectral.hpp"
#include "dwgp/twomode.hpp"

namespace dwgp::cli {

using io::Json;

enum ExitCode : int { kOk = 0, kOther = 1, kConfig = 2, kSolver = 3, kIntegrator = 4, kSeparatrix = 5 };

struct RunConfig {
  // potential
  std::string form = "quartic";
  double V0 = 2.0;
  double a = 1.0;
  std::string table;  // absolute path when form == "table"

  // physics
  std::vector<double> hbar{0.1};
  double m = 1.0;
  std::optional<double> epsilon;
  std::vector<double> eta;  // empty: not given
  std::optional<double> tau_prime;
  std::optional<double> t_end;
  double periods = 1.0;
  InitialState psi0{};
  std::vector<double> z0{1.0};
  std::vector<double> theta0{0.0};
  double tau_end = 20.0;
  double dtau = 1e-3;
  bool analytic = true;

  // numerics
  double L = 3.0;
  std::size_t n_points = 1024;
  double dt = 0.0;
  Method method = Method::Exponential;
  std::size_t stride = 1;
  bool allow_general_initial = false;
  bool omega_shift = true;
  double eta_max = 100.0;
  std::optional<double> attractive_cap;
  double steps_per_period = 4000.0;
  double norm_tolerance = 1e-6;

  // output
  std::string directory = "out";
  std::vector<std::string> formats{"csv", "json"};

  bool wants(const std::string& f) const {
    return std::find(formats.begin(), formats.end(), f) != formats.end();
  }
};

namespace detail {

inline void allow_keys(const Json& obj, const std::string& where,
                       std::initializer_list<const char*> keys) {
  if (!obj.is_object()) throw UsageError("config: '" + where + "' must be an object");
  std::set<std::string> ok(keys.begin(), keys.end());
  for (const auto& [k, v] : obj.items()) {
    if (!ok.count(k)) throw UsageError("config: unknown key '" + where + "." + k + "'");
  }
}

inline double number(const Json& v, const std::string& name) {
  if (!v.is_number()) throw UsageError("config: '" + name + "' must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw UsageError("config: '" + name + "' must be finite");
  return x;
}

inline std::vector<double> number_list(const Json& v, const std::string& name) {
  std::vector<double> out;
  if (v.is_array()) {
    for (const auto& e : v) out.push_back(number(e, name));
    if (out.empty()) throw UsageError("config: '" + name + "' must not be empty");
  } else {
    out.push_back(number(v, name));
  }
  return out;
}

inline Json list_or_scalar(const std::vector<double>& v) {
  return v.size() == 1 ? Json(v.front()) : Json(v);
}

inline Complex complex_pair(const Json& v, const std::string& name) {
  if (!v.is_array() || v.size() != 2) throw UsageError("config: '" + name + "' must be [re, im]");
  return {number(v[0], name), number(v[1], name)};
}

inline bool boolean(const Json& v, const std::string& name) {
  if (!v.is_boolean()) throw UsageError("config: '" + name + "' must be true or false");
  return v.get<bool>();
}

inline std::size_t count(const Json& v, const std::string& name) {
  if (!v.is_number_integer() || v.get<long long>() < 1) {
    throw UsageError("config: '" + name + "' must be a positive integer");
  }
  return static_cast<std::size_t>(v.get<long long>());
}

inline const char* psi0_name(InitialChoice c) {
  switch (c) {
    case InitialChoice::PhiR: return "phiR";
    case InitialChoice::PhiL: return "phiL";
    case InitialChoice::Phi1: return "phi1";
    case InitialChoice::Phi2: return "phi2";
    case InitialChoice::Custom: return "custom";
  }
  return "?";
}

}  // namespace detail

/// Parses a run configuration; relative table paths resolve against base_dir.
inline RunConfig parse_config(const Json& j, const std::filesystem::path& base_dir = ".") {
  using namespace detail;
  allow_keys(j, "<root>", {"potential", "physics", "numerics", "output"});
  RunConfig c;

  if (j.contains("potential")) {
    const Json& p = j["potential"];
    allow_keys(p, "potential", {"form", "V0", "a", "table"});
    if (p.contains("form")) {
      if (!p["form"].is_string()) throw UsageError("config: 'potential.form' must be a string");
      c.form = p["form"].get<std::string>();
    }
    if (c.form == "quartic") {
      if (p.contains("table")) throw UsageError("config: 'potential.table' needs form \"table\"");
      if (p.contains("V0")) c.V0 = number(p["V0"], "potential.V0");
      if (p.contains("a")) c.a = number(p["a"], "potential.a");
    } else if (c.form == "table") {
      if (p.contains("V0") || p.contains("a")) {
        throw UsageError("config: 'potential.V0' / 'potential.a' need form \"quartic\"");
      }
      if (!p.contains("table") || !p["table"].is_string()) {
        throw UsageError("config: form \"table\" needs 'potential.table' (CSV path)");
      }
      std::filesystem::path tp = p["table"].get<std::string>();
      if (tp.is_relative()) tp = base_dir / tp;
      if (!std::filesystem::exists(tp)) {
        throw UsageError("config: potential table " + tp.string() + " does not exist");
      }
      c.table = std::filesystem::canonical(tp).string();
    } else {
      throw UsageError("config: 'potential.form' must be \"quartic\" or \"table\"");
    }
  }

  if (j.contains("physics")) {
    const Json& p = j["physics"];
    allow_keys(p, "physics",
               {"hbar", "m", "epsilon", "eta", "tau_prime", "t_end", "periods", "psi0", "z0",
                "theta0", "tau_end", "dtau", "analytic"});
    if (p.contains("hbar")) c.hbar = number_list(p["hbar"], "physics.hbar");
    for (double h : c.hbar) {
      if (!(h > 0.0)) throw UsageError("config: 'physics.hbar' values must be positive");
    }
    if (p.contains("m")) c.m = number(p["m"], "physics.m");
    if (!(c.m > 0.0)) throw UsageError("config: 'physics.m' must be positive");
    if (p.contains("epsilon") && p.contains("eta")) {
      throw UsageError("config: give exactly one of 'physics.epsilon' and 'physics.eta'");
    }
    if (p.contains("epsilon")) c.epsilon = number(p["epsilon"], "physics.epsilon");
    if (p.contains("eta")) c.eta = number_list(p["eta"], "physics.eta");
    if (p.contains("tau_prime")) {
      c.tau_prime = number(p["tau_prime"], "physics.tau_prime");
      if (!(*c.tau_prime > 0.0)) throw UsageError("config: 'physics.tau_prime' must be positive");
    }
    if (p.contains("t_end") && p.contains("periods")) {
      throw UsageError("config: give at most one of 'physics.t_end' and 'physics.periods'");
    }
    if (p.contains("t_end")) {
      c.t_end = number(p["t_end"], "physics.t_end");
      if (!(*c.t_end > 0.0)) throw UsageError("config: 'physics.t_end' must be positive");
    }
    if (p.contains("periods")) {
      c.periods = number(p["periods"], "physics.periods");
      if (!(c.periods > 0.0)) throw UsageError("config: 'physics.periods' must be positive");
    }
    if (p.contains("psi0")) {
      const Json& s = p["psi0"];
      if (s.is_string()) {
        const auto name = s.get<std::string>();
        if (name == "phiR") c.psi0.choice = InitialChoice::PhiR;
        else if (name == "phiL") c.psi0.choice = InitialChoice::PhiL;
        else if (name == "phi1") c.psi0.choice = InitialChoice::Phi1;
        else if (name == "phi2") c.psi0.choice = InitialChoice::Phi2;
        else throw UsageError("config: 'physics.psi0' must be phi1|phi2|phiR|phiL or {c1, c2}");
      } else {
        allow_keys(s, "physics.psi0", {"c1", "c2"});
        if (!s.contains("c1") || !s.contains("c2")) {
          throw UsageError("config: custom 'physics.psi0' needs c1 and c2");
        }
        c.psi0.choice = InitialChoice::Custom;
        c.psi0.c1 = complex_pair(s["c1"], "physics.psi0.c1");
        c.psi0.c2 = complex_pair(s["c2"], "physics.psi0.c2");
        const double n = std::norm(c.psi0.c1) + std::norm(c.psi0.c2);
        if (std::abs(n - 1.0) > 1e-10) {
          throw UsageError("config: custom psi0 needs |c1|^2 + |c2|^2 = 1");
        }
      }
    }
    if (p.contains("z0")) c.z0 = number_list(p["z0"], "physics.z0");
    for (double z : c.z0) {
      if (!(z >= -1.0 && z <= 1.0)) throw UsageError("config: 'physics.z0' must lie in [-1, 1]");
    }
    if (p.contains("theta0")) c.theta0 = number_list(p["theta0"], "physics.theta0");
    if (p.contains("tau_end")) c.tau_end = number(p["tau_end"], "physics.tau_end");
    if (!(c.tau_end > 0.0)) throw UsageError("config: 'physics.tau_end' must be positive");
    if (p.contains("dtau")) c.dtau = number(p["dtau"], "physics.dtau");
    if (!(c.dtau > 0.0)) throw UsageError("config: 'physics.dtau' must be positive");
    if (p.contains("analytic")) c.analytic = boolean(p["analytic"], "physics.analytic");
  }

  if (j.contains("numerics")) {
    const Json& p = j["numerics"];
    allow_keys(p, "numerics",
               {"L", "n_points", "dt", "method", "stride", "allow_general_initial",
                "omega_shift", "eta_max", "attractive_cap", "steps_per_period",
                "norm_tolerance"});
    if (p.contains("L")) c.L = number(p["L"], "numerics.L");
    if (!(c.L > 0.0)) throw UsageError("config: 'numerics.L' must be positive");
    if (p.contains("n_points")) c.n_points = count(p["n_points"], "numerics.n_points");
    (void)Grid1D(c.L, c.n_points);  // power of two >= 64
    if (p.contains("dt")) c.dt = number(p["dt"], "numerics.dt");
    if (c.dt < 0.0) throw UsageError("config: 'numerics.dt' must be >= 0 (0: default)");
    if (p.contains("method")) {
      if (!p["method"].is_string()) throw UsageError("config: 'numerics.method' must be a string");
      c.method = method_from_string(p["method"].get<std::string>());
    }
    if (p.contains("stride")) c.stride = count(p["stride"], "numerics.stride");
    if (p.contains("allow_general_initial")) {
      c.allow_general_initial = boolean(p["allow_general_initial"], "numerics.allow_general_initial");
    }
    if (p.contains("omega_shift")) c.omega_shift = boolean(p["omega_shift"], "numerics.omega_shift");
    if (p.contains("eta_max")) c.eta_max = number(p["eta_max"], "numerics.eta_max");
    if (!(c.eta_max > 0.0)) throw UsageError("config: 'numerics.eta_max' must be positive");
    if (p.contains("attractive_cap")) {
      c.attractive_cap = number(p["attractive_cap"], "numerics.attractive_cap");
      if (!(*c.attractive_cap >= 0.0)) throw UsageError("config: 'numerics.attractive_cap' must be >= 0");
    }
    if (p.contains("norm_tolerance")) {
      c.norm_tolerance = number(p["norm_tolerance"], "numerics.norm_tolerance");
      if (!(c.norm_tolerance >= 0.0)) throw UsageError("config: 'numerics.norm_tolerance' must be >= 0");
    }
    if (p.contains("steps_per_period")) {
      c.steps_per_period = number(p["steps_per_period"], "numerics.steps_per_period");
      if (!(c.steps_per_period >= 1.0)) {
        throw UsageError("config: 'numerics.steps_per_period' must be >= 1");
      }
    }
  }

  if (j.contains("output")) {
    const Json& p = j["output"];
    allow_keys(p, "output", {"directory", "formats"});
    if (p.contains("directory")) {
      if (!p["directory"].is_string()) throw UsageError("config: 'output.directory' must be a string");
      c.directory = p["directory"].get<std::string>();
    }
    if (p.contains("formats")) {
      if (!p["formats"].is_array()) throw UsageError("config: 'output.formats' must be a list");
      c.formats.clear();
      for (const auto& f : p["formats"]) {
        if (!f.is_string() || (f != "csv" && f != "json")) {
          throw UsageError("config: 'output.formats' entries must be \"csv\" or \"json\"");
        }
        c.formats.push_back(f.get<std::string>());
      }
    }
  }
  return c;
}

/// Complete, normalised configuration.  The output directory is left out:
/// it names where a run goes, not what it computes.
inline Json echo_config(const RunConfig& c) {
  using detail::list_or_scalar;
  Json pot = c.form == "quartic" ? Json{{"form", "quartic"}, {"V0", c.V0}, {"a", c.a}}
                                 : Json{{"form", "table"}, {"table", c.table}};
  Json phys{{"hbar", list_or_scalar(c.hbar)}, {"m", c.m},         {"z0", list_or_scalar(c.z0)},
            {"theta0", list_or_scalar(c.theta0)}, {"tau_end", c.tau_end}, {"dtau", c.dtau},
            {"analytic", c.analytic}};
  if (c.epsilon) phys["epsilon"] = *c.epsilon;
  if (!c.eta.empty()) phys["eta"] = list_or_scalar(c.eta);
  if (c.tau_prime) phys["tau_prime"] = *c.tau_prime;
  if (c.t_end) phys["t_end"] = *c.t_end; else phys["periods"] = c.periods;
  if (c.psi0.choice == InitialChoice::Custom) {
    phys["psi0"] = Json{{"c1", {c.psi0.c1.real(), c.psi0.c1.imag()}},
                        {"c2", {c.psi0.c2.real(), c.psi0.c2.imag()}}};
  } else {
    phys["psi0"] = detail::psi0_name(c.psi0.choice);
  }
  Json num{{"L", c.L},
           {"n_points", c.n_points},
           {"dt", c.dt},
           {"method", to_string(c.method)},
           {"stride", c.stride},
           {"allow_general_initial", c.allow_general_initial},
           {"omega_shift", c.omega_shift},
           {"eta_max", c.eta_max},
           {"steps_per_period", c.steps_per_period},
           {"norm_tolerance", c.norm_tolerance}};
  if (c.attractive_cap) num["attractive_cap"] = *c.attractive_cap;
  return Json{{"potential", pot}, {"physics", phys}, {"numerics", num},
              {"output", Json{{"formats", c.formats}}}};
}

inline PotentialSpec make_potential(const RunConfig& c) {
  if (c.form == "table") return PotentialSpec::from_csv(c.table);
  return PotentialSpec::quartic(c.V0, c.a);
}

/// Files in write order.
struct Artifacts {
  std::vector<std::pair<std::string, std::string>> files;
  std::vector<std::string> warnings;

  void add(std::string name, std::string content) {
    files.emplace_back(std::move(name), std::move(content));
  }
  const std::string* find(const std::string& name) const {
    for (const auto& [n, c] : files) {
      if (n == name) return &c;
    }
    return nullptr;
  }
};

namespace detail {

inline void add_json(Artifacts& out, const RunConfig& c, const std::string& name, const Json& j) {
  if (c.wants("json")) out.add(name, j.dump(2) + "\n");
}
inline void add_csv(Artifacts& out, const RunConfig& c, const std::string& name,
                    const io::CsvTable& t) {
  if (c.wants("csv")) out.add(name, t.str());
}

inline double single(const std::vector<double>& v, const std::string& name) {
  if (v.size() != 1) throw UsageError("config: '" + name + "' must be a single value here");
  return v.front();
}

inline std::shared_ptr<const DoubletBasis> build_basis(const RunConfig& c,
                                                       const PotentialSpec& spec, double hbar) {
  const Grid1D grid(c.L, c.n_points);
  return std::make_shared<const DoubletBasis>(
      lowest_doublet(assemble_hamiltonian(grid, spec, hbar, c.m)));
}

inline TwoModeState two_mode_start(double z0, double theta0) {
  return {std::polar(std::sqrt(0.5 * (1.0 + z0)), theta0), Complex(std::sqrt(0.5 * (1.0 - z0)))};
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline void cmd_spectrum(const RunConfig& c, Artifacts& out, std::size_t threads = 0) {
  const PotentialSpec spec = make_potential(c);
  const Grid1D grid(c.L, c.n_points);
  const auto rep = validate_potential(spec, grid);
  if (!rep.ok()) throw ValidationError("potential rejected: " + rep.failures());
  const double gamma = agmon_distance(spec);

  const auto bases = ordered_map(
      c.hbar, [&](double hb) { return detail::build_basis(c, spec, hb); }, threads);

  io::CsvTable t{{"hbar", "lambda1", "lambda2", "omega", "Omega", "gap3", "c", "overlap_sup",
                  "agmon_gamma"},
                 {}};
  Json rows = Json::array();
  for (const auto& b : bases) {
    const double ov = overlap_sup(*b);
    t.add({io::num(b->hbar()), io::num(b->lambda1), io::num(b->lambda2), io::num(b->omega),
           io::num(b->Omega), io::num(b->gap3), io::num(b->c), io::num(ov), io::num(gamma)});
    rows.push_back(Json{{"hbar", b->hbar()},
                        {"lambda1", b->lambda1},
                        {"lambda2", b->lambda2},
                        {"omega", b->omega},
                        {"Omega", b->Omega},
                        {"gap3", b->gap3},
                        {"c", b->c},
                        {"overlap_sup", ov},
                        {"agmon_gamma", gamma},
                        {"residual1", b->residual1},
                        {"residual2", b->residual2}});
  }
  Json summary{{"rows", rows}, {"agmon_gamma", gamma},
               {"agmon_gamma_normalized", std::sqrt(2.0 * c.m) * gamma}, {"fit", nullptr}};
  if (c.hbar.size() >= 4) {
    const auto fit = splitting_scan(spec, c.m, c.hbar, grid, threads);
    summary["fit"] = Json{{"slope", fit.slope},
                          {"intercept", fit.intercept},
                          {"r_squared", fit.r_squared},
                          {"rms_residual", fit.rms_residual},
                          {"gamma0", fit.gamma0},
                          {"gamma0_normalized", fit.gamma0_normalized},
                          {"slope_over_gamma0_normalized", -fit.slope / fit.gamma0_normalized},
                          {"all_converged", fit.all_converged},
                          {"strictly_decreasing", fit.strictly_decreasing}};
  }
  detail::add_csv(out, c, "spectrum.csv", t);
  detail::add_json(out, c, "spectrum.json", summary);
}

inline void cmd_evolve(const RunConfig& c, Artifacts& out, std::size_t = 0) {
  const double hb = detail::single(c.hbar, "physics.hbar");
  if (c.epsilon.has_value() == !c.eta.empty()) {
    throw UsageError("config: evolve needs exactly one of 'physics.epsilon' and 'physics.eta'");
  }
  const PotentialSpec spec = make_potential(c);
  const auto basis = detail::build_basis(c, spec, hb);

  EvolutionConfig cfg;
  cfg.basis = basis;
  cfg.epsilon = c.epsilon ? *c.epsilon : detail::single(c.eta, "physics.eta") * basis->omega / basis->c;
  cfg.method = c.method;
  cfg.dt = c.dt;
  cfg.stride = c.stride;
  cfg.omega_shift = c.omega_shift;
  cfg.allow_general_initial = c.allow_general_initial;
  cfg.eta_max = c.eta_max;
  cfg.attractive_cap = c.attractive_cap;
  cfg.norm_tolerance = c.norm_tolerance;
  cfg.t_end = c.t_end ? *c.t_end : c.periods * cfg.period();

  const Wavefunction psi0 = make_initial(*basis, c.psi0);
  const Trajectory tr = propagate(psi0, cfg);
  for (const auto& w : tr.warnings) out.warnings.push_back(w);

  // Two-mode run from the same doublet amplitudes, compared at the samples.
  const auto& s0 = tr.samples.front();
  const double n2 = std::norm(s0.aR) + std::norm(s0.aL);
  Json tm = nullptr;
  if (n2 > 0.0) {
    const TwoModeState b0{s0.aR / std::sqrt(n2), s0.aL / std::sqrt(n2)};
    const double eta = cfg.eta();
    const auto P = two_mode_params(b0, eta);
    const auto mr = classify_motion(P);
    TwoModeState b = b0;
    double tau = 0.0, dev = 0.0;
    const double cap = max_two_mode_step(eta);
    for (const auto& s : tr.samples) {
      const double span = s.tau - tau;
      if (span > 0.0) {
        const auto sub = static_cast<std::size_t>(std::ceil(span / cap - 1e-9));
        for (std::size_t k = 0; k < sub; ++k) b = rk4_step(b, eta, span / static_cast<double>(sub));
        tau = s.tau;
      }
      dev = std::max(dev, std::abs(s.z / n2 - b.imbalance()));
    }
    tm = Json{{"eta", eta},       {"z0", P.z0}, {"theta0", P.theta0}, {"k2", P.k2},
              {"A", P.A},         {"regime", to_string(mr.regime)},
              {"period_tau", io::jnum(mr.period)}, {"max_z_deviation", dev}};
  }

  Json summary{{"hbar", hb},
               {"omega", basis->omega},
               {"Omega", basis->Omega},
               {"c", basis->c},
               {"epsilon", cfg.epsilon},
               {"eta", cfg.eta()},
               {"beating_period", cfg.period()},
               {"t_end", cfg.t_end},
               {"dt", tr.dt},
               {"steps", tr.steps},
               {"method", to_string(tr.method)},
               {"norm_drift", tr.max_norm_drift()},
               {"energy_drift", tr.max_energy_drift()},
               {"completeness_defect", tr.max_completeness_defect()},
               {"warnings", tr.warnings},
               {"two_mode", tm},
               {"regime", tm.is_null() ? Json(nullptr) : tm["regime"]}};
  detail::add_csv(out, c, "trajectory.csv", io::trajectory_table(tr));
  detail::add_json(out, c, "evolve.json", summary);
}

inline void cmd_twomode(const RunConfig& c, Artifacts& out, std::size_t = 0) {
  const double z0 = detail::single(c.z0, "physics.z0");
  const double th = detail::single(c.theta0, "physics.theta0");
  if (c.eta.empty()) throw UsageError("config: twomode needs 'physics.eta'");
  if (c.epsilon) throw UsageError("config: twomode takes 'physics.eta', not 'physics.epsilon'");
  const double eta = detail::single(c.eta, "physics.eta");

  const TwoModeState s0 = detail::two_mode_start(z0, th);
  const auto P = two_mode_params(s0, eta);
  const auto ode = integrate_two_mode(s0, eta, c.tau_end, c.dtau);
  detail::add_json(out, c, "params.json", io::params_json(P));
  detail::add_csv(out, c, "twomode_ode.csv", io::two_mode_table(ode));

  Json summary{{"regime", to_string(P.regime)}, {"k2", P.k2}, {"tau_end", c.tau_end},
               {"dtau", ode.size() > 1 ? ode[1].tau : c.dtau}, {"steps", ode.size() - 1},
               {"max_norm_defect", 0.0}, {"max_discrepancy", nullptr},
               {"critical_eta", nullptr}};
  double nd = 0.0;
  for (const auto& s : ode) nd = std::max(nd, std::abs(s.state.norm2() - 1.0));
  summary["max_norm_defect"] = nd;
  if (const auto ce = critical_eta(z0, th)) summary["critical_eta"] = *ce;

  if (c.analytic) {
    io::CsvTable t{{"tau", "z"}, {}};
    double dev = 0.0;
    try {
      for (const auto& s : ode) {
        const double z = imbalance_analytic(s.tau, P);
        dev = std::max(dev, std::abs(z - s.state.imbalance()));
        t.add({io::num(s.tau), io::num(z)});
      }
    } catch (const SeparatrixError&) {
      detail::add_json(out, c, "twomode.json", summary);
      throw;
    }
    summary["max_discrepancy"] = dev;
    detail::add_csv(out, c, "twomode_analytic.csv", t);
  }
  detail::add_json(out, c, "twomode.json", summary);
}

inline void cmd_stability(const RunConfig& c, Artifacts& out, std::size_t threads = 0) {
  if (!c.tau_prime) throw UsageError("config: stability needs 'physics.tau_prime'");
  if (c.eta.empty()) throw UsageError("config: stability needs 'physics.eta'");
  if (c.epsilon) throw UsageError("config: stability holds eta fixed; 'physics.epsilon' not allowed");
  const double eta = detail::single(c.eta, "physics.eta");
  StabilityOptions opt;
  opt.half_width = c.L;
  opt.n_points = c.n_points;
  opt.mass = c.m;
  opt.method = c.method;
  opt.steps_per_period = c.steps_per_period;
  opt.threads = threads;
  opt.keep_trajectories = c.wants("csv");
  const auto rep =
      stability_experiment(make_potential(c), c.hbar, eta, *c.tau_prime, c.psi0, opt);

  Json rows = Json::array();
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    const auto& r = rep.rows[i];
    char name[48];
    std::snprintf(name, sizeof name, "trajectory_%02zu.csv", i);
    Json row{{"hbar", r.hbar},           {"omega", r.omega},
             {"eta", r.eta},             {"epsilon", r.epsilon},
             {"c", r.c},                 {"max_dev_R", r.max_dev_R},
             {"max_dev_L", r.max_dev_L}, {"max_psi_c", r.max_psi_c},
             {"tau_prime", r.tau_prime}, {"steps", r.steps},
             {"norm_drift", r.norm_drift}, {"energy_drift", r.energy_drift},
             {"csv", c.wants("csv") ? Json(name) : Json(nullptr)}};
    rows.push_back(row);
    if (c.wants("csv")) {
      Trajectory sub = rep.runs[i].pde;
      std::vector<TrajectorySample> kept;
      for (std::size_t k = 0; k < sub.samples.size(); ++k) {
        if (k % c.stride == 0 || k + 1 == sub.samples.size()) kept.push_back(sub.samples[k]);
      }
      sub.samples = std::move(kept);
      out.add(name, io::trajectory_table(sub).str());
    }
  }
  const bool monotone = rep.dev_R_decreasing && rep.dev_L_decreasing && rep.psi_c_decreasing;
  detail::add_json(out, c, "stability.json",
                   Json{{"rows", rows},
                        {"dev_R_decreasing", rep.dev_R_decreasing},
                        {"dev_L_decreasing", rep.dev_L_decreasing},
                        {"psi_c_decreasing", rep.psi_c_decreasing},
                        {"monotone", monotone},
                        {"psi_c_bound", rep.psi_c_bound},
                        {"psi_c_bound_ok", rep.psi_c_bound_ok},
                        {"config", echo_config(c)}});
}

struct SweepRow {
  double z0, theta0, eta, k2;
  Regime regime;
  double min_z, max_z;
};

inline void cmd_sweep(const RunConfig& c, Artifacts& out, std::size_t threads = 0) {
  if (c.eta.empty()) throw UsageError("config: sweep needs 'physics.eta' (value or list)");
  if (c.epsilon) throw UsageError("config: sweep takes 'physics.eta', not 'physics.epsilon'");
  struct Point { double z0, theta0, eta; };
  std::vector<Point> pts;
  for (double z : c.z0)
    for (double th : c.theta0)
      for (double e : c.eta) pts.push_back({z, th, e});

  const auto rows = ordered_map(
      pts,
      [&](const Point& p) {
        const TwoModeState s0 = detail::two_mode_start(p.z0, p.theta0);
        const auto P = two_mode_params(s0, p.eta);
        const auto traj =
            integrate_two_mode(s0, p.eta, c.tau_end, std::min(c.dtau, max_two_mode_step(p.eta)));
        double lo = 1.0, hi = -1.0;
        for (const auto& s : traj) {
          lo = std::min(lo, s.state.imbalance());
          hi = std::max(hi, s.state.imbalance());
        }
        return SweepRow{p.z0, p.theta0, p.eta, P.k2, P.regime, lo, hi};
      },
      threads);

  io::CsvTable t{{"z0", "theta0", "eta", "k2", "regime", "min_z", "max_z"}, {}};
  for (const auto& r : rows) {
    t.add({io::num(r.z0), io::num(r.theta0), io::num(r.eta), io::num(r.k2), to_string(r.regime),
           io::num(r.min_z), io::num(r.max_z)});
  }
  Json crit = Json::array();
  for (double z : c.z0) {
    for (double th : c.theta0) {
      const auto ce = critical_eta(z, th);
      crit.push_back(Json{{"z0", z}, {"theta0", th}, {"critical_eta", ce ? Json(*ce) : Json(nullptr)}});
    }
  }
  detail::add_csv(out, c, "regime_map.csv", t);
  detail::add_json(out, c, "sweep.json",
                   Json{{"points", rows.size()}, {"tau_end", c.tau_end}, {"critical_eta", crit}});
}

// ---------------------------------------------------------------------------

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> n{"spectrum", "evolve", "twomode", "stability", "sweep"};
  return n;
}

inline void dispatch(const std::string& cmd, const RunConfig& c, Artifacts& out,
                     std::size_t threads) {
  if (cmd == "spectrum") return cmd_spectrum(c, out, threads);
  if (cmd == "evolve") return cmd_evolve(c, out, threads);
  if (cmd == "twomode") return cmd_twomode(c, out, threads);
  if (cmd == "stability") return cmd_stability(c, out, threads);
  if (cmd == "sweep") return cmd_sweep(c, out, threads);
  throw UsageError("unknown command '" + cmd + "'");
}

inline int exit_code_for(const std::exception_ptr& e, std::string& message) {
  try {
    std::rethrow_exception(e);
  } catch (const IntegrationError& x) {
    std::ostringstream msg;
    msg << x.what() << " (t = " << io::num(x.time()) << ")";
    message = msg.str();
    return kIntegrator;
  } catch (const SeparatrixError& x) {
    message = x.what();
    return kSeparatrix;
  } catch (const UsageError& x) {
    message = x.what();
    return kConfig;
  } catch (const ValidationError& x) {
    message = x.what();
    return kConfig;
  } catch (const DomainError& x) {
    message = x.what();
    return kConfig;
  } catch (const SolverError& x) {
    message = x.what();
    return kSolver;
  } catch (const ModelError& x) {
    message = x.what();
    return kSolver;
  } catch (const ConsistencyError& x) {
    message = x.what();
    return kSolver;
  } catch (const std::exception& x) {
    message = x.what();
    return kOther;
  }
}

/// Full run: parse, echo, compute, write.  Returns the exit code.
inline int run(const std::string& cmd, const std::filesystem::path& config_path,
               const std::optional<std::filesystem::path>& out_dir, std::ostream& err) {
  Artifacts out;
  std::filesystem::path dir;
  int code = kOk;
  std::string message;
  try {
    const Json j = io::read_json(config_path);
    const RunConfig c = parse_config(j, config_path.parent_path());
    dir = out_dir ? *out_dir : std::filesystem::path(c.directory);
    out.add("config.json", echo_config(c).dump(2) + "\n");
    dispatch(cmd, c, out, default_thread_count());
  } catch (...) {
    code = exit_code_for(std::current_exception(), message);
  }
  if (dir.empty() && out_dir) dir = *out_dir;
  try {
    if (!dir.empty()) {
      for (const auto& [name, content] : out.files) io::write_text(dir / name, content);
    }
  } catch (const std::exception& e) {
    if (code == kOk) {
      code = kConfig;
      message = e.what();
    }
  }
  for (const auto& w : out.warnings) err << "warning: " << w << "\n";
  if (code != kOk) err << "error: " << message << "\n";
  return code;
}

}  // namespace dwgp::cli
