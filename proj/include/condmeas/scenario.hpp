#pragma once

// Declarative scenario files. A scenario is a JSON document:
//
//   {
//     "name": "example",
//     "system": {
//       "dim": 2,
//       "observable": "pauli3" | [[c, c], [c, c]],
//       "state": {"vector": [c, ...]} | {"matrix": [[c, ...], ...]} | {"bloch": [r1, r2, r3]},
//       "post_selection": "none" | {"vector": [c, ...]} | {"matrix": [[c, ...], ...]}
//     },
//     "detector": {
//       "hg_modes": [0, 1, 2] | "superposition": [c, ...] | "samples": [c, ...],
//       "sigma": 2.0, "hbar": 1.0,
//       "grid": {"points": 4096, "x_min": -40.0, "x_max": 40.0}
//     },
//     "coupling": {"g": 2.0} | {"sweep": {"min": 0, "max": 20, "count": 41, "spacing": "linear" | "log"}},
//     "outputs": {"report": "report.json", "csv": "sweep.csv", "paths": "both", "max_order": 2},
//     "tolerance": 1e-6
//   }
//
// Complex numbers are [re, im] pairs; a bare number is read as a real value.

#include <array>
#include <cmath>
#include <complex>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "condmeas/errors.hpp"
#include "condmeas/hilbert.hpp"

namespace condmeas::scenario {

using json = nlohmann::json;
using ComplexList = std::vector<cplx>;
using ComplexRows = std::vector<ComplexList>;

/// Malformed input file (bad JSON); carries the line and column.
class ParseError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Unreadable or unwritable file.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

struct SystemSpec {
  int dim = 2;
  std::optional<std::string> observable_preset;
  ComplexRows observable;
  std::optional<ComplexList> state_vector;
  std::optional<ComplexRows> state_matrix;
  std::optional<std::array<double, 3>> state_bloch;
  std::optional<ComplexList> post_vector;
  std::optional<ComplexRows> post_matrix;

  bool operator==(const SystemSpec&) const = default;
};

struct GridSpec {
  std::optional<int> points;
  std::optional<double> x_min;
  std::optional<double> x_max;

  bool operator==(const GridSpec&) const = default;
};

struct DetectorSpec {
  std::vector<int> hg_modes;
  std::optional<ComplexList> superposition;
  std::optional<ComplexList> samples;
  double sigma = 1.0;
  double hbar = 1.0;
  GridSpec grid;

  bool operator==(const DetectorSpec&) const = default;
};

struct SweepSpec {
  double min = 0.0;
  double max = 0.0;
  int count = 2;
  std::string spacing = "linear";

  bool operator==(const SweepSpec&) const = default;
};

struct CouplingSpec {
  std::optional<double> g;
  std::optional<SweepSpec> sweep;

  bool operator==(const CouplingSpec&) const = default;
};

struct OutputSpec {
  std::string report;
  std::string csv;
  std::string paths = "both";
  int max_order = 2;

  bool operator==(const OutputSpec&) const = default;
};

struct Scenario {
  std::string name;
  SystemSpec system;
  DetectorSpec detector;
  CouplingSpec coupling;
  OutputSpec outputs;
  double tolerance = 1e-6;

  bool operator==(const Scenario&) const = default;
};

namespace detail {

[[noreturn]] inline void fail(const std::string& field, const std::string& msg) {
  throw ValidationError(field + ": " + msg);
}

inline double number(const json& j, const std::string& field) {
  if (!j.is_number()) fail(field, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) fail(field, "expected a finite number");
  return v;
}

inline int integer(const json& j, const std::string& field) {
  if (!j.is_number_integer()) fail(field, "expected an integer");
  return j.get<int>();
}

inline cplx complex_value(const json& j, const std::string& field) {
  if (j.is_number()) return {number(j, field), 0.0};
  if (!j.is_array() || j.size() != 2) fail(field, "expected a complex number [re, im]");
  return {number(j[0], field + "[0]"), number(j[1], field + "[1]")};
}

inline ComplexList complex_list(const json& j, const std::string& field) {
  if (!j.is_array() || j.empty()) fail(field, "expected a non-empty array of complex numbers");
  ComplexList out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(complex_value(j[i], field + "[" + std::to_string(i) + "]"));
  return out;
}

inline ComplexRows complex_rows(const json& j, const std::string& field) {
  if (!j.is_array() || j.empty()) fail(field, "expected a matrix (array of rows)");
  ComplexRows out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(complex_list(j[i], field + "[" + std::to_string(i) + "]"));
  for (const auto& row : out)
    if (row.size() != out.size()) fail(field, "matrix must be square");
  return out;
}

inline json to_json(cplx z) { return json::array({z.real(), z.imag()}); }

inline json to_json(const ComplexList& v) {
  json out = json::array();
  for (const auto& z : v) out.push_back(to_json(z));
  return out;
}

inline json to_json(const ComplexRows& m) {
  json out = json::array();
  for (const auto& row : m) out.push_back(to_json(row));
  return out;
}

inline void only_keys(const json& j, const std::string& field, std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || it.key() == k;
    if (!ok) fail(field + "." + it.key(), "unknown field");
  }
}

/// Exactly one of the listed keys must be present.
inline std::string one_of(const json& j, const std::string& field, std::initializer_list<const char*> keys) {
  std::string found;
  for (const char* k : keys) {
    if (!j.contains(k)) continue;
    if (!found.empty()) fail(field, "fields '" + found + "' and '" + k + "' are mutually exclusive");
    found = k;
  }
  if (found.empty()) {
    std::string names;
    for (const char* k : keys) names += std::string(names.empty() ? "" : ", ") + k;
    fail(field, "expected one of: " + names);
  }
  return found;
}

inline CMatrix to_matrix(const ComplexRows& rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  CMatrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < n; ++k) m(i, k) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
  return m;
}

inline CVector to_vector(const ComplexList& v) {
  CVector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
  return out;
}

}  // namespace detail

inline SystemSpec parse_system(const json& j) {
  using namespace detail;
  const std::string f = "system";
  if (!j.is_object()) fail(f, "expected an object");
  only_keys(j, f, {"dim", "observable", "state", "post_selection"});
  SystemSpec s;
  if (!j.contains("dim")) fail(f + ".dim", "missing");
  s.dim = integer(j["dim"], f + ".dim");
  if (s.dim < 2 || s.dim > hilbert::kMaxSystemDim) fail(f + ".dim", "must lie in [2, 16]");

  if (!j.contains("observable")) fail(f + ".observable", "missing");
  const json& obs = j["observable"];
  if (obs.is_string()) {
    const std::string name = obs.get<std::string>();
    if (name != "pauli1" && name != "pauli2" && name != "pauli3")
      fail(f + ".observable", "unknown preset '" + name + "' (expected pauli1, pauli2 or pauli3)");
    if (s.dim != 2) fail(f + ".observable", "Pauli presets require dim 2");
    s.observable_preset = name;
  } else {
    s.observable = complex_rows(obs, f + ".observable");
  }

  if (!j.contains("state")) fail(f + ".state", "missing");
  const json& st = j["state"];
  if (!st.is_object()) fail(f + ".state", "expected an object");
  const std::string kind = one_of(st, f + ".state", {"vector", "matrix", "bloch"});
  only_keys(st, f + ".state", {"vector", "matrix", "bloch"});
  if (kind == "vector") s.state_vector = complex_list(st["vector"], f + ".state.vector");
  if (kind == "matrix") s.state_matrix = complex_rows(st["matrix"], f + ".state.matrix");
  if (kind == "bloch") {
    const json& b = st["bloch"];
    if (!b.is_array() || b.size() != 3) fail(f + ".state.bloch", "expected [r1, r2, r3]");
    s.state_bloch = std::array<double, 3>{number(b[0], f + ".state.bloch[0]"), number(b[1], f + ".state.bloch[1]"),
                                          number(b[2], f + ".state.bloch[2]")};
  }

  if (j.contains("post_selection")) {
    const json& ps = j["post_selection"];
    if (ps.is_string()) {
      if (ps.get<std::string>() != "none") fail(f + ".post_selection", "expected \"none\" or an object");
    } else {
      if (!ps.is_object()) fail(f + ".post_selection", "expected \"none\" or an object");
      const std::string pk = one_of(ps, f + ".post_selection", {"vector", "matrix"});
      only_keys(ps, f + ".post_selection", {"vector", "matrix"});
      if (pk == "vector") s.post_vector = complex_list(ps["vector"], f + ".post_selection.vector");
      if (pk == "matrix") s.post_matrix = complex_rows(ps["matrix"], f + ".post_selection.matrix");
    }
  }
  return s;
}

inline DetectorSpec parse_detector(const json& j) {
  using namespace detail;
  const std::string f = "detector";
  if (!j.is_object()) fail(f, "expected an object");
  only_keys(j, f, {"hg_modes", "superposition", "samples", "sigma", "hbar", "grid"});
  DetectorSpec d;
  const std::string kind = one_of(j, f, {"hg_modes", "superposition", "samples"});
  if (kind == "hg_modes") {
    const json& modes = j["hg_modes"];
    if (!modes.is_array() || modes.empty()) fail(f + ".hg_modes", "expected a non-empty array of mode orders");
    for (std::size_t i = 0; i < modes.size(); ++i) {
      const int m = integer(modes[i], f + ".hg_modes[" + std::to_string(i) + "]");
      if (m < 0 || m > 20) fail(f + ".hg_modes[" + std::to_string(i) + "]", "mode order must lie in [0, 20]");
      d.hg_modes.push_back(m);
    }
  }
  if (kind == "superposition") d.superposition = complex_list(j["superposition"], f + ".superposition");
  if (kind == "samples") d.samples = complex_list(j["samples"], f + ".samples");
  if (j.contains("sigma")) d.sigma = number(j["sigma"], f + ".sigma");
  if (!(d.sigma > 0.0)) fail(f + ".sigma", "must be positive");
  if (j.contains("hbar")) d.hbar = number(j["hbar"], f + ".hbar");
  if (!(d.hbar > 0.0)) fail(f + ".hbar", "must be positive");
  if (j.contains("grid")) {
    const json& g = j["grid"];
    if (!g.is_object()) fail(f + ".grid", "expected an object");
    only_keys(g, f + ".grid", {"points", "x_min", "x_max"});
    if (g.contains("points")) d.grid.points = integer(g["points"], f + ".grid.points");
    if (g.contains("x_min")) d.grid.x_min = number(g["x_min"], f + ".grid.x_min");
    if (g.contains("x_max")) d.grid.x_max = number(g["x_max"], f + ".grid.x_max");
    if (d.grid.x_min.has_value() != d.grid.x_max.has_value())
      fail(f + ".grid", "x_min and x_max must be given together");
  }
  if (d.samples) {
    if (!d.grid.x_min) fail(f + ".grid", "explicit samples need x_min and x_max");
    if (d.grid.points && *d.grid.points != static_cast<int>(d.samples->size()))
      fail(f + ".grid.points", "must equal the number of samples");
  }
  return d;
}

inline CouplingSpec parse_coupling(const json& j) {
  using namespace detail;
  const std::string f = "coupling";
  if (!j.is_object()) fail(f, "expected an object");
  only_keys(j, f, {"g", "sweep"});
  CouplingSpec c;
  const std::string kind = one_of(j, f, {"g", "sweep"});
  if (kind == "g") c.g = number(j["g"], f + ".g");
  if (kind == "sweep") {
    const json& s = j["sweep"];
    if (!s.is_object()) fail(f + ".sweep", "expected an object");
    only_keys(s, f + ".sweep", {"min", "max", "count", "spacing"});
    SweepSpec sw;
    for (const char* key : {"min", "max", "count"})
      if (!s.contains(key)) fail(f + ".sweep." + key, "missing");
    sw.min = number(s["min"], f + ".sweep.min");
    sw.max = number(s["max"], f + ".sweep.max");
    sw.count = integer(s["count"], f + ".sweep.count");
    if (sw.count < 2) fail(f + ".sweep.count", "a sweep needs at least 2 points");
    if (s.contains("spacing")) {
      if (!s["spacing"].is_string()) fail(f + ".sweep.spacing", "expected \"linear\" or \"log\"");
      sw.spacing = s["spacing"].get<std::string>();
    }
    if (sw.spacing != "linear" && sw.spacing != "log") fail(f + ".sweep.spacing", "expected \"linear\" or \"log\"");
    if (sw.spacing == "log" && !(sw.min > 0.0 && sw.max > 0.0))
      fail(f + ".sweep", "log spacing needs positive min and max");
    c.sweep = sw;
  }
  return c;
}

inline OutputSpec parse_outputs(const json& j) {
  using namespace detail;
  const std::string f = "outputs";
  if (!j.is_object()) fail(f, "expected an object");
  only_keys(j, f, {"report", "csv", "paths", "max_order"});
  OutputSpec o;
  auto str = [&](const char* key) {
    if (!j[key].is_string()) fail(f + "." + key, "expected a string");
    return j[key].get<std::string>();
  };
  if (j.contains("report")) o.report = str("report");
  if (j.contains("csv")) o.csv = str("csv");
  if (j.contains("paths")) o.paths = str("paths");
  if (o.paths != "grid" && o.paths != "closed" && o.paths != "both")
    fail(f + ".paths", "expected grid, closed or both");
  if (j.contains("max_order")) o.max_order = integer(j["max_order"], f + ".max_order");
  if (o.max_order < 1 || o.max_order > 4) fail(f + ".max_order", "must lie in [1, 4]");
  return o;
}

inline Scenario from_json(const json& j) {
  using namespace detail;
  if (!j.is_object()) fail("scenario", "top level must be an object");
  only_keys(j, "scenario", {"name", "system", "detector", "coupling", "outputs", "tolerance"});
  Scenario s;
  if (j.contains("name")) {
    if (!j["name"].is_string()) fail("name", "expected a string");
    s.name = j["name"].get<std::string>();
  }
  for (const char* key : {"system", "detector", "coupling"})
    if (!j.contains(key)) fail(key, "missing");
  s.system = parse_system(j["system"]);
  s.detector = parse_detector(j["detector"]);
  s.coupling = parse_coupling(j["coupling"]);
  if (j.contains("outputs")) s.outputs = parse_outputs(j["outputs"]);
  if (j.contains("tolerance")) s.tolerance = number(j["tolerance"], "tolerance");
  if (!(s.tolerance > 0.0)) fail("tolerance", "must be positive");
  return s;
}

inline json to_json(const Scenario& s) {
  using detail::to_json;
  json sys;
  sys["dim"] = s.system.dim;
  if (s.system.observable_preset)
    sys["observable"] = *s.system.observable_preset;
  else
    sys["observable"] = to_json(s.system.observable);
  if (s.system.state_vector) sys["state"] = {{"vector", to_json(*s.system.state_vector)}};
  if (s.system.state_matrix) sys["state"] = {{"matrix", to_json(*s.system.state_matrix)}};
  if (s.system.state_bloch) sys["state"] = {{"bloch", *s.system.state_bloch}};
  if (s.system.post_vector)
    sys["post_selection"] = {{"vector", to_json(*s.system.post_vector)}};
  else if (s.system.post_matrix)
    sys["post_selection"] = {{"matrix", to_json(*s.system.post_matrix)}};
  else
    sys["post_selection"] = "none";

  json det;
  if (!s.detector.hg_modes.empty()) det["hg_modes"] = s.detector.hg_modes;
  if (s.detector.superposition) det["superposition"] = to_json(*s.detector.superposition);
  if (s.detector.samples) det["samples"] = to_json(*s.detector.samples);
  det["sigma"] = s.detector.sigma;
  det["hbar"] = s.detector.hbar;
  json grid = json::object();
  if (s.detector.grid.points) grid["points"] = *s.detector.grid.points;
  if (s.detector.grid.x_min) grid["x_min"] = *s.detector.grid.x_min;
  if (s.detector.grid.x_max) grid["x_max"] = *s.detector.grid.x_max;
  if (!grid.empty()) det["grid"] = grid;

  json coup;
  if (s.coupling.g) coup["g"] = *s.coupling.g;
  if (s.coupling.sweep)
    coup["sweep"] = {{"min", s.coupling.sweep->min},
                     {"max", s.coupling.sweep->max},
                     {"count", s.coupling.sweep->count},
                     {"spacing", s.coupling.sweep->spacing}};

  json out = {{"paths", s.outputs.paths}, {"max_order", s.outputs.max_order}};
  if (!s.outputs.report.empty()) out["report"] = s.outputs.report;
  if (!s.outputs.csv.empty()) out["csv"] = s.outputs.csv;

  json j = {{"system", sys}, {"detector", det}, {"coupling", coup}, {"outputs", out}, {"tolerance", s.tolerance}};
  if (!s.name.empty()) j["name"] = s.name;
  return j;
}

inline Scenario parse_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    // e.byte is 1-based; translate to line and column
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::string detail = e.what();
    const auto pos = detail.find(": ", detail.find("parse error"));
    if (pos != std::string::npos) detail = detail.substr(pos + 2);
    std::ostringstream os;
    os << "parse error at line " << line << ", column " << col << ": " << detail;
    throw ParseError(os.str());
  }
  return from_json(j);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline Scenario load(const std::string& path) { return parse_text(read_file(path)); }

inline std::string serialize(const Scenario& s) { return to_json(s).dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// construction of validated operators
// ---------------------------------------------------------------------------

struct SystemSetup {
  hilbert::SystemOperator observable;
  hilbert::SystemState state;
  hilbert::SystemOperator post;
  bool post_selected = false;
};

inline SystemSetup build_system(const SystemSpec& s) {
  using detail::fail;
  auto check_dim = [&](Eigen::Index n, const std::string& field) {
    if (n != s.dim) fail(field, "dimension " + std::to_string(n) + " differs from system.dim " + std::to_string(s.dim));
  };
  std::optional<hilbert::SystemOperator> a;
  if (s.observable_preset) {
    a = hilbert::pauli(s.observable_preset->back() - '0');
  } else {
    const CMatrix m = detail::to_matrix(s.observable);
    check_dim(m.rows(), "system.observable");
    a = hilbert::SystemOperator::hermitian(m, "system.observable");
  }

  std::optional<hilbert::SystemState> rho;
  if (s.state_vector) {
    check_dim(static_cast<Eigen::Index>(s.state_vector->size()), "system.state.vector");
    rho = hilbert::SystemState::from_vector(detail::to_vector(*s.state_vector), "system.state.vector");
  } else if (s.state_matrix) {
    const CMatrix m = detail::to_matrix(*s.state_matrix);
    check_dim(m.rows(), "system.state.matrix");
    rho = hilbert::SystemState::from_matrix(m, "system.state.matrix");
  } else if (s.state_bloch) {
    if (s.dim != 2) fail("system.state.bloch", "Bloch vectors require dim 2");
    const auto& b = *s.state_bloch;
    rho = hilbert::SystemState::from_bloch(b[0], b[1], b[2], "system.state.bloch");
  } else {
    fail("system.state", "missing");
  }

  std::optional<hilbert::SystemOperator> post;
  bool selected = true;
  if (s.post_vector) {
    check_dim(static_cast<Eigen::Index>(s.post_vector->size()), "system.post_selection.vector");
    post = hilbert::SystemOperator::projector(detail::to_vector(*s.post_vector), "system.post_selection.vector");
  } else if (s.post_matrix) {
    const CMatrix m = detail::to_matrix(*s.post_matrix);
    check_dim(m.rows(), "system.post_selection.matrix");
    post = hilbert::SystemOperator::hermitian(m, "system.post_selection.matrix");
    Eigen::SelfAdjointEigenSolver<CMatrix> solver(post->matrix(), Eigen::EigenvaluesOnly);
    if (solver.eigenvalues().minCoeff() < -1e-12 || solver.eigenvalues().maxCoeff() > 1.0 + 1e-12)
      fail("system.post_selection.matrix", "must satisfy 0 <= P_f <= 1");
  } else {
    post = hilbert::SystemOperator::identity(s.dim);
    selected = false;
  }
  return SystemSetup{*a, *rho, *post, selected};
}

}  // namespace condmeas::scenario
