#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "geomflow/metrics.hpp"
#include "geomflow/refmesh.hpp"
#include "geomflow/schemes.hpp"
#include "geomflow/snapshot.hpp"

namespace geomflow {

/// Process exit codes of the command line driver.
enum class ExitCode : int { ok = 0, failure = 1, config = 2, degeneracy = 3, nonconvergence = 4, solver = 5 };

/// A configuration with one or more problems; what() lists all of them.
class ConfigError : public ParseError {
 public:
  explicit ConfigError(std::vector<std::string> problems)
      : ParseError(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& p) {
    std::string s = "invalid configuration:";
    for (const auto& e : p) s += "\n  " + e;
    return s;
  }
  std::vector<std::string> problems_;
};

struct GeometrySpec {
  std::string shape = "circle";  // circle ellipse flower sphere ellipsoid torus file
  double radius = 1.0;
  double a = 2.0, b = 1.0, c = 1.0;
  double major = 2.0, minor = 1.0;
  double amplitude = 0.2;
  int petals = 5;
  // level-0 grid: curves take elements or h0; surfaces take elements+vertices
  // (structured mesher) or base+refinements
  int elements = 0;
  int vertices = 0;
  double h0 = 0.0;
  std::string base = "icosahedron";
  int refinements = 2;
  std::string file;
  int dim = 0;  // only read for shape = file
};

struct RunSpec {
  double final_time = 0.0;  // 0: use steps
  int steps = -1;
  int snapshots = 10;
  int snapshot_samples = 10;
  int snapshot_depth = -1;  // -1: degree + 1
  std::uint64_t seed = 0;
};

enum class EocReference { automatic, exact, interlevel };

struct EocSpec {
  int levels = 4;
  EocReference reference = EocReference::automatic;
  int neighbors = 8;
  int distance_quad_order = 0;  // 0: the scheme's order
  bool identical_levels = false;
};

struct ExperimentConfig {
  GeometrySpec geometry;
  SchemeConfig scheme;
  RunSpec run;
  EocSpec eoc;
};

// --- parsing ------------------------------------------------------------------

namespace detail {

inline const std::map<std::string, std::set<std::string>>& config_schema() {
  static const std::map<std::string, std::set<std::string>> schema = {
      {"geometry",
       {"shape", "radius", "a", "b", "c", "major", "minor", "amplitude", "petals", "elements", "vertices", "h0", "base",
        "refinements", "file", "dim"}},
      {"scheme", {"flow", "variant", "degree", "tau", "quad_order", "lumped", "picard_tol", "picard_max_iter"}},
      {"run", {"final_time", "steps", "snapshots", "snapshot_samples", "snapshot_depth", "seed"}},
      {"eoc", {"levels", "reference", "neighbors", "distance_quad_order", "identical_levels"}},
  };
  return schema;
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

class FieldReader {
 public:
  FieldReader(const boost::property_tree::ptree& tree, std::vector<std::string>& errs) : tree_(tree), errs_(errs) {}

  void read(const std::string& section, const std::string& key, double& out) {
    if (auto s = raw(section, key)) {
      try {
        std::size_t pos = 0;
        const double v = std::stod(*s, &pos);
        if (pos != s->size() || !std::isfinite(v)) throw std::invalid_argument("");
        out = v;
      } catch (const std::exception&) {
        errs_.push_back(section + "." + key + ": expected a number, got '" + *s + "'");
      }
    }
  }

  void read(const std::string& section, const std::string& key, int& out) {
    if (auto s = raw(section, key)) {
      try {
        std::size_t pos = 0;
        const long v = std::stol(*s, &pos);
        if (pos != s->size() || v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
          throw std::invalid_argument("");
        out = static_cast<int>(v);
      } catch (const std::exception&) {
        errs_.push_back(section + "." + key + ": expected an integer, got '" + *s + "'");
      }
    }
  }

  void read(const std::string& section, const std::string& key, std::uint64_t& out) {
    if (auto s = raw(section, key)) {
      try {
        std::size_t pos = 0;
        if (!s->empty() && (*s)[0] == '-') throw std::invalid_argument("");
        out = std::stoull(*s, &pos);
        if (pos != s->size()) throw std::invalid_argument("");
      } catch (const std::exception&) {
        errs_.push_back(section + "." + key + ": expected a non-negative integer, got '" + *s + "'");
      }
    }
  }

  void read(const std::string& section, const std::string& key, bool& out) {
    if (auto s = raw(section, key)) {
      if (*s == "true" || *s == "yes" || *s == "1") {
        out = true;
      } else if (*s == "false" || *s == "no" || *s == "0") {
        out = false;
      } else {
        errs_.push_back(section + "." + key + ": expected true or false, got '" + *s + "'");
      }
    }
  }

  void read(const std::string& section, const std::string& key, std::string& out) {
    if (auto s = raw(section, key)) out = *s;
  }

  template <class Enum>
  void read_enum(const std::string& section, const std::string& key, Enum& out,
                 const std::vector<std::pair<std::string, Enum>>& names) {
    auto s = raw(section, key);
    if (!s) return;
    for (const auto& [name, value] : names)
      if (*s == name) {
        out = value;
        return;
      }
    std::string opts;
    for (const auto& n : names) opts += (opts.empty() ? "" : ", ") + n.first;
    errs_.push_back(section + "." + key + ": unknown value '" + *s + "' (expected one of " + opts + ")");
  }

  bool has(const std::string& section, const std::string& key) const { return raw(section, key).has_value(); }

 private:
  std::optional<std::string> raw(const std::string& section, const std::string& key) const {
    const auto sec = tree_.get_child_optional(section);
    if (!sec) return std::nullopt;
    const auto v = sec->get_child_optional(key);
    if (!v) return std::nullopt;
    return trim(v->data());
  }

  const boost::property_tree::ptree& tree_;
  std::vector<std::string>& errs_;
};

inline const std::vector<std::pair<std::string, Flow>>& flow_names() {
  static const std::vector<std::pair<std::string, Flow>> n = {{"mcf", Flow::mcf}, {"sd", Flow::sd}};
  return n;
}

inline const std::vector<std::pair<std::string, Variant>>& variant_names() {
  static const std::vector<std::pair<std::string, Variant>> n = {{"bgn_exact", Variant::bgn_exact},
                                                                 {"bgn_quadrature", Variant::bgn_quadrature},
                                                                 {"sp", Variant::sp},
                                                                 {"dziuk", Variant::dziuk}};
  return n;
}

inline const std::vector<std::pair<std::string, EocReference>>& reference_names() {
  static const std::vector<std::pair<std::string, EocReference>> n = {
      {"auto", EocReference::automatic}, {"exact", EocReference::exact}, {"interlevel", EocReference::interlevel}};
  return n;
}

template <class Enum>
std::string name_of(Enum v, const std::vector<std::pair<std::string, Enum>>& names) {
  for (const auto& [n, e] : names)
    if (e == v) return n;
  return "?";
}

}  // namespace detail

inline bool is_curve_shape(const std::string& s) { return s == "circle" || s == "ellipse" || s == "flower"; }
inline bool is_surface_shape(const std::string& s) { return s == "sphere" || s == "ellipsoid" || s == "torus"; }

inline int geometry_dim(const GeometrySpec& g) {
  if (is_curve_shape(g.shape)) return 1;
  if (is_surface_shape(g.shape)) return 2;
  return g.dim;
}

inline Shape make_shape(const GeometrySpec& g) {
  if (g.shape == "circle") return Shape::circle(g.radius);
  if (g.shape == "ellipse") return Shape::ellipse(g.a, g.b);
  if (g.shape == "flower") return Shape::flower(g.amplitude, g.petals);
  if (g.shape == "sphere") return Shape::sphere(g.radius);
  if (g.shape == "ellipsoid") return Shape::ellipsoid(g.a, g.b, g.c);
  if (g.shape == "torus") return Shape::torus(g.major, g.minor);
  throw InvalidArgument("no analytic shape for '" + g.shape + "'");
}

/// Semantic problems of a parsed configuration (empty when runnable).
inline std::vector<std::string> config_problems(const ExperimentConfig& cfg) {
  std::vector<std::string> errs;
  const auto& g = cfg.geometry;
  if (!is_curve_shape(g.shape) && !is_surface_shape(g.shape) && g.shape != "file")
    errs.push_back("geometry.shape: unknown shape '" + g.shape +
                   "' (expected circle, ellipse, flower, sphere, ellipsoid, torus or file)");
  if (g.shape == "file") {
    if (g.file.empty()) errs.push_back("geometry.file: required for shape = file");
    if (g.dim != 1 && g.dim != 2) errs.push_back("geometry.dim: must be 1 (curve) or 2 (surface) for shape = file");
  }
  if ((g.shape == "circle" || g.shape == "sphere") && !(g.radius > 0)) errs.push_back("geometry.radius: must be > 0");
  if ((g.shape == "ellipse" || g.shape == "ellipsoid") && !(g.a > 0 && g.b > 0 && g.c > 0))
    errs.push_back("geometry.a/b/c: semi-axes must be > 0");
  if (g.shape == "torus" && !(g.minor > 0 && g.major > g.minor))
    errs.push_back("geometry.major/minor: need major > minor > 0");
  if (g.shape == "flower" && !(std::abs(g.amplitude) < 1 && g.petals >= 1))
    errs.push_back("geometry.amplitude/petals: need |amplitude| < 1 and petals >= 1");
  if (is_curve_shape(g.shape)) {
    if (g.elements != 0 && g.elements < 3) errs.push_back("geometry.elements: a closed curve needs >= 3 elements");
    if (g.h0 < 0) errs.push_back("geometry.h0: must be > 0");
    if (g.elements > 0 && g.h0 > 0) errs.push_back("geometry: give either elements or h0, not both");
  }
  if (is_surface_shape(g.shape)) {
    if ((g.elements > 0) != (g.vertices > 0))
      errs.push_back("geometry.elements/vertices: a surface target needs both counts");
    if (g.base != "icosahedron" && g.base != "octahedron")
      errs.push_back("geometry.base: expected icosahedron or octahedron, got '" + g.base + "'");
    if (g.refinements < 0) errs.push_back("geometry.refinements: must be >= 0");
    if (g.shape == "torus" && g.elements == 0)
      errs.push_back("geometry.elements/vertices: the torus needs a target (e.g. 720 / 360)");
  }

  const int dim = geometry_dim(g);
  if (dim == 1) {
    for (auto& e : config_errors<1>(cfg.scheme)) errs.push_back("scheme: " + e);
  } else if (dim == 2) {
    for (auto& e : config_errors<2>(cfg.scheme)) errs.push_back("scheme: " + e);
  }

  const auto& r = cfg.run;
  if (r.final_time > 0 && r.steps >= 0) errs.push_back("run: give either final_time or steps, not both");
  if (!(r.final_time > 0) && r.steps < 0) errs.push_back("run: one of final_time (> 0) or steps (>= 0) is required");
  if (r.final_time < 0) errs.push_back("run.final_time: must be > 0");
  if (r.snapshots < 0) errs.push_back("run.snapshots: must be >= 0");
  if (r.snapshot_samples < 1) errs.push_back("run.snapshot_samples: must be >= 1");
  if (r.snapshot_depth < -1 || r.snapshot_depth > 8) errs.push_back("run.snapshot_depth: must be in [0, 8]");

  const auto& e = cfg.eoc;
  if (e.levels < 2) errs.push_back("eoc.levels: need at least 2 levels");
  if (e.neighbors < 1) errs.push_back("eoc.neighbors: must be >= 1");
  if (e.distance_quad_order < 0) errs.push_back("eoc.distance_quad_order: must be >= 0");
  if (e.reference == EocReference::exact &&
      !(cfg.scheme.flow == Flow::mcf && (g.shape == "circle" || g.shape == "sphere")))
    errs.push_back("eoc.reference: the exact solution is only known for mcf of a circle or sphere");
  return errs;
}

/// Parses an INI configuration; collects every problem before throwing.
inline ExperimentConfig parse_config(std::istream& in, const std::string& source = "<config>") {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError({source + ":" + std::to_string(e.line()) + ": " + e.message()});
  }
  std::vector<std::string> errs;
  const auto& schema = detail::config_schema();
  for (const auto& [section, child] : tree) {
    if (child.empty()) {
      errs.push_back("key '" + section + "' outside of a section");
      continue;
    }
    const auto it = schema.find(section);
    if (it == schema.end()) {
      errs.push_back("unknown section [" + section + "]");
      continue;
    }
    for (const auto& [key, value] : child)
      if (!it->second.count(key)) errs.push_back("unknown key '" + section + "." + key + "'");
  }

  ExperimentConfig cfg;
  detail::FieldReader rd(tree, errs);
  auto& g = cfg.geometry;
  rd.read("geometry", "shape", g.shape);
  rd.read("geometry", "radius", g.radius);
  rd.read("geometry", "a", g.a);
  rd.read("geometry", "b", g.b);
  rd.read("geometry", "c", g.c);
  rd.read("geometry", "major", g.major);
  rd.read("geometry", "minor", g.minor);
  rd.read("geometry", "amplitude", g.amplitude);
  rd.read("geometry", "petals", g.petals);
  rd.read("geometry", "elements", g.elements);
  rd.read("geometry", "vertices", g.vertices);
  rd.read("geometry", "h0", g.h0);
  rd.read("geometry", "base", g.base);
  rd.read("geometry", "refinements", g.refinements);
  rd.read("geometry", "file", g.file);
  rd.read("geometry", "dim", g.dim);
  if (g.shape == "ellipsoid" && !rd.has("geometry", "a")) g.a = 2.0;
  if (is_curve_shape(g.shape) && g.elements == 0 && g.h0 == 0.0) g.elements = 128;
  if (is_surface_shape(g.shape) && g.elements > 0 && !rd.has("geometry", "refinements")) g.refinements = 0;

  auto& s = cfg.scheme;
  rd.read_enum("scheme", "flow", s.flow, detail::flow_names());
  rd.read_enum("scheme", "variant", s.variant, detail::variant_names());
  rd.read("scheme", "degree", s.degree);
  rd.read("scheme", "tau", s.tau);
  rd.read("scheme", "quad_order", s.quad_order);
  rd.read("scheme", "lumped", s.lumped);
  rd.read("scheme", "picard_tol", s.picard_tol);
  rd.read("scheme", "picard_max_iter", s.picard_max_iter);

  auto& r = cfg.run;
  rd.read("run", "final_time", r.final_time);
  rd.read("run", "steps", r.steps);
  rd.read("run", "snapshots", r.snapshots);
  rd.read("run", "snapshot_samples", r.snapshot_samples);
  rd.read("run", "snapshot_depth", r.snapshot_depth);
  rd.read("run", "seed", r.seed);

  auto& e = cfg.eoc;
  rd.read("eoc", "levels", e.levels);
  rd.read_enum("eoc", "reference", e.reference, detail::reference_names());
  rd.read("eoc", "neighbors", e.neighbors);
  rd.read("eoc", "distance_quad_order", e.distance_quad_order);
  rd.read("eoc", "identical_levels", e.identical_levels);

  // materialize the quadrature default so the echo reproduces the run
  if (s.quad_order == 0 && s.degree >= 1) s.quad_order = effective_quad_order(s);

  for (auto& p : config_problems(cfg)) errs.push_back(std::move(p));
  if (!errs.empty()) {
    for (auto& m : errs) m = source + ": " + m;
    throw ConfigError(std::move(errs));
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot open configuration file '" + path + "'"});
  return parse_config(in, path);
}

// --- levels -------------------------------------------------------------------

/// Time stepping of one level: tau_k = tau_0 / 2^(k (l + 1)), with the step
/// count rounded up so that steps * tau hits the final time exactly.
struct StepPlan {
  int steps = 0;
  double tau = 0.0;
  bool adjusted = false;
};

inline StepPlan plan_steps(const ExperimentConfig& cfg, int level) {
  const double scale = std::ldexp(1.0, level * (cfg.scheme.degree + 1));
  StepPlan p;
  if (cfg.run.final_time > 0) {
    const double want = cfg.run.final_time / cfg.scheme.tau * scale;
    p.steps = std::max(1, static_cast<int>(std::ceil(want - 1e-9 * want)));
    p.tau = cfg.run.final_time / p.steps;
    p.adjusted = std::abs(p.tau - cfg.scheme.tau / scale) > 1e-14 * p.tau;
  } else {
    p.steps = static_cast<int>(cfg.run.steps * scale);
    p.tau = cfg.scheme.tau / scale;
  }
  return p;
}

inline int initial_curve_elements(const GeometrySpec& g) {
  if (g.elements > 0) return g.elements;
  return build_polygon_h(make_shape(g), g.h0).num_elements();
}

/// Reference grid of refinement level k.
template <int Dim>
ReferenceGrid<Dim> build_level(const GeometrySpec& g, int level) {
  if (g.shape == "file") {
    auto grid = read_off_file<Dim>(g.file);
    for (int k = 0; k < level; ++k) grid = refine_uniform(grid, false);
    return grid;
  }
  const Shape shape = make_shape(g);
  if constexpr (Dim == 1) {
    return build_polygon(shape, initial_curve_elements(g) << level);
  } else {
    if (g.elements > 0) {
      auto grid = build_triangulation(shape, {g.elements, g.vertices});
      for (int k = 0; k < g.refinements + level; ++k) grid = refine_uniform(grid);
      return grid;
    }
    const auto base = g.base == "octahedron" ? Polyhedron::octahedron : Polyhedron::icosahedron;
    return build_sphere_like(shape, base, g.refinements + level);
  }
}

// --- echo ---------------------------------------------------------------------

inline std::string format_double(double v) { return detail::fmt17(v); }

/// Shortest text that reads back to the same double.
inline std::string format_shortest(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// Fully resolved configuration in the input format.
inline std::string echo_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  const auto& g = cfg.geometry;
  const auto f = [](double v) { return format_shortest(v); };
  os << "[geometry]\nshape = " << g.shape << "\n";
  if (g.shape == "circle" || g.shape == "sphere") os << "radius = " << f(g.radius) << "\n";
  if (g.shape == "ellipse") os << "a = " << f(g.a) << "\nb = " << f(g.b) << "\n";
  if (g.shape == "ellipsoid") os << "a = " << f(g.a) << "\nb = " << f(g.b) << "\nc = " << f(g.c) << "\n";
  if (g.shape == "flower") os << "amplitude = " << f(g.amplitude) << "\npetals = " << g.petals << "\n";
  if (g.shape == "torus") os << "major = " << f(g.major) << "\nminor = " << f(g.minor) << "\n";
  if (g.shape == "file") os << "file = " << g.file << "\ndim = " << g.dim << "\n";
  if (is_curve_shape(g.shape)) {
    if (g.elements > 0) {
      os << "elements = " << g.elements << "\n";
    } else {
      os << "h0 = " << f(g.h0) << "\n; resolved: " << initial_curve_elements(g) << " elements\n";
    }
  }
  if (is_surface_shape(g.shape)) {
    if (g.elements > 0) os << "elements = " << g.elements << "\nvertices = " << g.vertices << "\n";
    else os << "base = " << g.base << "\n";
    os << "refinements = " << g.refinements << "\n";
  }

  const auto& s = cfg.scheme;
  os << "\n[scheme]\nflow = " << to_string(s.flow) << "\nvariant = " << to_string(s.variant)
     << "\ndegree = " << s.degree << "\ntau = " << f(s.tau) << "\nquad_order = " << s.quad_order << "\n";
  if (s.variant == Variant::bgn_exact)
    os << "; exact integration realised as quadrature of order " << effective_quad_order(s) << "\n";
  os << "lumped = " << (s.lumped ? "true" : "false") << "\npicard_tol = " << f(s.picard_tol)
     << "\npicard_max_iter = " << s.picard_max_iter << "\n";

  const auto& r = cfg.run;
  os << "\n[run]\n";
  if (r.final_time > 0) os << "final_time = " << f(r.final_time) << "\n";
  else os << "steps = " << r.steps << "\n";
  const auto plan = plan_steps(cfg, 0);
  os << "; level 0: " << plan.steps << " steps of tau = " << f(plan.tau) << (plan.adjusted ? " (adjusted)" : "") << "\n";
  os << "snapshots = " << r.snapshots << "\nsnapshot_samples = " << r.snapshot_samples
     << "\nsnapshot_depth = " << (r.snapshot_depth < 0 ? s.degree + 1 : r.snapshot_depth) << "\nseed = " << r.seed
     << "\n";

  const auto& e = cfg.eoc;
  os << "\n[eoc]\nlevels = " << e.levels << "\nreference = " << detail::name_of(e.reference, detail::reference_names())
     << "\nneighbors = " << e.neighbors << "\ndistance_quad_order = "
     << (e.distance_quad_order > 0 ? e.distance_quad_order : std::max(effective_quad_order(s), 2 * s.degree))
     << "\nidentical_levels = " << (e.identical_levels ? "true" : "false") << "\n";
  return os.str();
}

// --- single run -----------------------------------------------------------------

inline const char* csv_header() {
  return "step,time,energy,energy_norm,enclosed,enclosed_rel_loss,mesh_quality,picard_iters";
}

inline std::string csv_row(const DiagnosticsRecord& d) {
  const auto f = [](double v) { return format_double(v); };
  return std::to_string(d.step) + "," + f(d.time) + "," + f(d.energy) + "," + f(d.energy_norm) + "," + f(d.enclosed) +
         "," + f(d.enclosed_rel_loss) + "," + f(d.mesh_quality) + "," + std::to_string(d.picard_iters);
}

/// Steps at which snapshots are written: `count` values spread uniformly over
/// [0, steps], both ends included.
inline std::vector<int> snapshot_steps(int steps, int count) {
  std::vector<int> out;
  if (count <= 0) return out;
  if (count == 1) return {steps};
  for (int i = 0; i < count; ++i) {
    const int s = static_cast<int>(std::llround(double(i) * steps / (count - 1)));
    if (out.empty() || out.back() != s) out.push_back(s);
  }
  return out;
}

struct RunOutcome {
  ExitCode code = ExitCode::ok;
  std::string message;
  std::vector<DiagnosticsRecord> records;
};

namespace detail {

inline ExitCode classify(const std::exception& e) {
  if (dynamic_cast<const DegeneracyError*>(&e)) return ExitCode::degeneracy;
  if (dynamic_cast<const NonConvergenceError*>(&e)) return ExitCode::nonconvergence;
  if (dynamic_cast<const WellPosednessError*>(&e) || dynamic_cast<const NumericalFailure*>(&e))
    return ExitCode::solver;
  if (dynamic_cast<const ParseError*>(&e) || dynamic_cast<const InvalidArgument*>(&e)) return ExitCode::config;
  return ExitCode::failure;
}

template <int Dim>
void write_snapshot(const std::filesystem::path& dir, const ParametrizedGrid<Dim>& grid, const DiagnosticsRecord& d,
                    const ExperimentConfig& cfg, const QuadratureRule<Dim>& rule) {
  char name[64];
  std::snprintf(name, sizeof name, "snapshot_%06d.%s", d.step, Dim == 1 ? "txt" : "vtk");
  std::ofstream os(dir / name);
  if constexpr (Dim == 1) {
    (void)rule;
    write_polyline(os, grid, cfg.run.snapshot_samples, d.time);
  } else {
    write_vtk(os, grid, rule, cfg.run.snapshot_depth, d.time);
  }
}

template <int Dim>
RunOutcome run_single_dim(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, bool quiet) {
  RunOutcome outcome;
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream echo(out_dir / "config.resolved.ini");
    echo << echo_config(cfg);
  }
  std::ofstream csv(out_dir / "diagnostics.csv");
  csv << csv_header() << "\n";
  const auto plan = plan_steps(cfg, 0);
  SchemeConfig scheme = cfg.scheme;
  scheme.tau = plan.tau;
  const auto shots = snapshot_steps(plan.steps, cfg.run.snapshots);
  const auto rule = scheme_rule<Dim>(scheme);
  const auto t0 = std::chrono::steady_clock::now();
  const int report_every = std::max(1, plan.steps / 10);
  StepObserver<Dim> observer = [&](const ParametrizedGrid<Dim>& grid, const DiagnosticsRecord& d) {
    csv << csv_row(d) << "\n";
    csv.flush();
    outcome.records.push_back(d);
    if (std::binary_search(shots.begin(), shots.end(), d.step)) write_snapshot(out_dir, grid, d, cfg, rule);
    if (!quiet && d.step > 0 && (d.step % report_every == 0 || d.step == plan.steps)) {
      const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::fprintf(stderr, "step %d/%d t=%.6g energy_norm=%.10f enclosed_rel_loss=%.3e quality=%.4g (%.1fs)\n",
                   d.step, plan.steps, d.time, d.energy_norm, d.enclosed_rel_loss, d.mesh_quality, el);
    }
  };
  try {
    const auto grid = interpolate_shape(build_level<Dim>(cfg.geometry, 0), scheme.degree);
    if (!quiet)
      std::fprintf(stderr, "%s/%s degree %d: %d elements, %d nodes, %d steps of tau=%.6g\n",
                   to_string(scheme.flow).c_str(), to_string(scheme.variant).c_str(), scheme.degree,
                   grid.num_elements(), grid.num_dofs(), plan.steps, plan.tau);
    evolve(grid, scheme, plan.steps, {observer});
  } catch (const std::exception& e) {
    outcome.code = classify(e);
    outcome.message = e.what();
  }
  return outcome;
}

}  // namespace detail

/// Runs one evolution and writes diagnostics.csv, snapshots and the resolved
/// configuration into out_dir. Errors are reported in the outcome.
inline RunOutcome run_single(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, bool quiet = false) {
  return geometry_dim(cfg.geometry) == 1 ? detail::run_single_dim<1>(cfg, out_dir, quiet)
                                         : detail::run_single_dim<2>(cfg, out_dir, quiet);
}

// --- convergence study ------------------------------------------------------------

struct EocRow {
  int level = 0;
  int elements = 0;
  double h = 0.0;
  double tau = 0.0;
  int steps = 0;
  std::optional<double> error;  // empty: not available (last level of an inter-level study, or failed)
  std::optional<double> order;  // empty: first row or undefined ("n/a")
  std::string note;
};

struct EocTable {
  std::string reference;  // "exact" or "interlevel"
  std::vector<EocRow> rows;
  bool complete = true;
  ExitCode code = ExitCode::ok;
};

/// Convergence order between two consecutive errors; empty when undefined.
inline std::optional<double> eoc_order(std::optional<double> coarse, std::optional<double> fine) {
  if (!coarse || !fine || !(*coarse > 0) || !(*fine > 0)) return std::nullopt;
  return std::log(*coarse / *fine) / std::log(2.0);
}

inline int worker_count(int jobs) {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("GEOMFLOW_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) n = cap;
  }
  return std::clamp(n, 1, std::max(1, jobs));
}

namespace detail {

inline EocReference resolve_reference(const ExperimentConfig& cfg) {
  if (cfg.eoc.reference != EocReference::automatic) return cfg.eoc.reference;
  const auto& s = cfg.geometry.shape;
  return (cfg.scheme.flow == Flow::mcf && (s == "circle" || s == "sphere")) ? EocReference::exact
                                                                            : EocReference::interlevel;
}

template <int Dim>
EocTable run_eoc_dim(const ExperimentConfig& cfg, bool quiet) {
  const int levels = cfg.eoc.levels;
  const auto reference = resolve_reference(cfg);
  EocTable table;
  table.reference = reference == EocReference::exact ? "exact" : "interlevel";
  table.rows.resize(levels);
  std::vector<std::optional<ParametrizedGrid<Dim>>> finals(levels);
  std::vector<std::string> failures(levels);
  std::vector<ExitCode> codes(levels, ExitCode::ok);

  const int order = cfg.eoc.distance_quad_order > 0 ? cfg.eoc.distance_quad_order
                                                    : std::max(effective_quad_order(cfg.scheme), 2 * cfg.scheme.degree);
  const auto dist_rule = quadrature_rule<Dim>(order);

  std::mutex log_mutex;
  auto run_level = [&](int k) {
    const int lk = cfg.eoc.identical_levels ? 0 : k;
    auto& row = table.rows[k];
    row.level = k;
    const auto plan = plan_steps(cfg, lk);
    row.tau = plan.tau;
    row.steps = plan.steps;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      auto ref = build_level<Dim>(cfg.geometry, lk);
      row.h = ref.h();
      row.elements = ref.num_elements();
      SchemeConfig scheme = cfg.scheme;
      scheme.tau = plan.tau;
      finals[k] = evolve(interpolate_shape(std::move(ref), scheme.degree), scheme, plan.steps).final_grid;
    } catch (const std::exception& e) {
      failures[k] = e.what();
      codes[k] = classify(e);
    }
    if (!quiet) {
      std::lock_guard<std::mutex> lock(log_mutex);
      const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::fprintf(stderr, "level %d: %d elements, %d steps of tau=%.6g %s (%.1fs)\n", k, row.elements, plan.steps,
                   plan.tau, failures[k].empty() ? "done" : "FAILED", el);
    }
  };

  const int workers = worker_count(levels);
  if (workers == 1) {
    for (int k = 0; k < levels; ++k) run_level(k);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (int k = next++; k < levels; k = next++) run_level(k);
      });
    for (auto& t : pool) t.join();
  }

  for (int k = 0; k < levels; ++k) {
    auto& row = table.rows[k];
    if (!failures[k].empty()) {
      row.note = "run failed: " + failures[k];
      table.complete = false;
      if (table.code == ExitCode::ok) table.code = codes[k];
      continue;
    }
    if (reference == EocReference::exact) {
      const double c = cfg.scheme.flow == Flow::mcf && cfg.geometry.shape == "sphere" ? 4.0 : 2.0;
      const double r2 = cfg.geometry.radius * cfg.geometry.radius - c * row.tau * row.steps;
      if (!(r2 > 0)) {
        row.note = "exact solution has vanished";
        table.complete = false;
        continue;
      }
      row.error = linf_error_exact(*finals[k], std::sqrt(r2), dist_rule);
    } else if (k + 1 < levels) {
      if (finals[k + 1]) row.error = l2_projected_distance(*finals[k], *finals[k + 1], dist_rule, cfg.eoc.neighbors);
    } else {
      row.note = "finest level (reference for the previous row)";
    }
  }
  // distances below the rounding resolution of the coordinates are zero
  for (int k = 0; k < levels; ++k) {
    auto& row = table.rows[k];
    if (!row.error || !finals[k]) continue;
    const double extent = finals[k]->coords().cwiseAbs().maxCoeff();
    double resolution = 64 * std::numeric_limits<double>::epsilon() * std::max(extent, 1.0);
    if (reference == EocReference::interlevel) resolution *= std::sqrt(energy(*finals[k], dist_rule));
    if (*row.error <= resolution) {
      row.error = 0.0;
      row.note = "zero up to rounding";
    }
  }
  for (int k = 1; k < levels; ++k) table.rows[k].order = eoc_order(table.rows[k - 1].error, table.rows[k].error);
  return table;
}

}  // namespace detail

/// Runs every refinement level and measures errors (against the exact
/// solution or against the next finer level) and convergence orders.
inline EocTable run_eoc(const ExperimentConfig& cfg, bool quiet = false) {
  return geometry_dim(cfg.geometry) == 1 ? detail::run_eoc_dim<1>(cfg, quiet) : detail::run_eoc_dim<2>(cfg, quiet);
}

inline std::string format_eoc_table(const EocTable& t) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-5s %-9s %-10s %-11s %-8s %-11s %-6s\n", "level", "elements", "h", "tau",
                "steps", t.reference == "exact" ? "E_linf" : "E_l2", "order");
  os << line;
  for (const auto& r : t.rows) {
    char e[32] = "-", o[32] = "-";
    if (r.error) std::snprintf(e, sizeof e, "%.3e", *r.error);
    if (r.level > 0) {
      if (r.order) std::snprintf(o, sizeof o, "%.2f", *r.order);
      else std::snprintf(o, sizeof o, "n/a");
    }
    std::snprintf(line, sizeof line, "%-5d %-9d %-10.4g %-11.4e %-8d %-11s %-6s", r.level, r.elements, r.h, r.tau,
                  r.steps, e, o);
    os << line;
    if (!r.note.empty()) os << "  # " << r.note;
    os << "\n";
  }
  if (!t.complete) os << "# table incomplete: some levels failed\n";
  return os.str();
}

inline void write_eoc_csv(std::ostream& os, const EocTable& t) {
  os << "level,elements,h,tau,steps,error,order\n";
  for (const auto& r : t.rows) {
    os << r.level << ',' << r.elements << ',' << format_double(r.h) << ',' << format_double(r.tau) << ',' << r.steps
       << ',' << (r.error ? format_double(*r.error) : std::string("n/a")) << ','
       << (r.order ? format_double(*r.order) : std::string("n/a")) << '\n';
  }
}

}  // namespace geomflow
