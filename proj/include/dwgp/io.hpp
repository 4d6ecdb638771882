#pragma once

// CSV / JSON artifacts.  Numbers in CSV are %.17g (round-trip exact); JSON
// goes through nlohmann::json, whose shortest representation also
// round-trips.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dwgp/errors.hpp"
#include "dwgp/gpe.hpp"
#include "dwgp/twomode.hpp"

namespace dwgp::io {

using Json = nlohmann::json;

inline std::string num(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// NaN and infinities become null.
inline Json jnum(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row) {
    if (row.size() != header.size()) throw UsageError("CsvTable: row width mismatch");
    rows.push_back(std::move(row));
  }

  std::string str() const {
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += cells[i];
      }
      out += '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
    return out;
  }
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot write " + path.string());
  f << text;
  if (!f) throw UsageError("write failed: " + path.string());
}

inline void write_csv(const std::filesystem::path& path, const CsvTable& t) {
  write_text(path, t.str());
}

inline void write_json(const std::filesystem::path& path, const Json& j) {
  write_text(path, j.dump(2) + "\n");
}

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot open config " + path.string());
  try {
    return Json::parse(f);
  } catch (const Json::parse_error& e) {
    throw UsageError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

inline CsvTable trajectory_table(const Trajectory& tr) {
  CsvTable t{{"t", "norm", "energy", "re_aR", "im_aR", "re_aL", "im_aL", "psi_c_norm", "z",
              "center_of_mass"},
             {}};
  for (const auto& s : tr.samples) {
    t.add({num(s.t), num(s.norm), num(s.energy), num(s.aR.real()), num(s.aR.imag()),
           num(s.aL.real()), num(s.aL.imag()), num(s.psi_c_norm), num(s.z),
           num(s.center_of_mass)});
  }
  return t;
}

inline CsvTable two_mode_table(const std::vector<TwoModeSample>& samples) {
  CsvTable t{{"tau", "re_bR", "im_bR", "re_bL", "im_bL", "z", "norm_defect"}, {}};
  for (const auto& s : samples) {
    t.add({num(s.tau), num(s.state.bR.real()), num(s.state.bR.imag()), num(s.state.bL.real()),
           num(s.state.bL.imag()), num(s.state.imbalance()), num(s.state.norm2() - 1.0)});
  }
  return t;
}

inline Json params_json(const TwoModeParams& p) {
  return Json{{"eta", p.eta},           {"z0", p.z0}, {"theta0", p.theta0},
              {"I", p.I},               {"A", p.A},   {"k2", p.k2},
              {"tau0", jnum(p.tau0)},   {"regime", to_string(p.regime)}};
}

}  // namespace dwgp::io
