#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>

#include <nlohmann/json.hpp>

#include "flobloch/action_angle.hpp"
#include "flobloch/effective_model.hpp"
#include "flobloch/error.hpp"
#include "flobloch/estimation.hpp"
#include "flobloch/physical_propagator.hpp"

namespace flobloch {

using json = nlohmann::json;

enum class Mode { Bands, EvolveReduced, EvolvePhysical, Instrument };

inline std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::Bands: return "bands";
    case Mode::EvolveReduced: return "evolve_reduced";
    case Mode::EvolvePhysical: return "evolve_physical";
    case Mode::Instrument: return "instrument";
  }
  return "?";
}

inline std::optional<Mode> parse_mode(std::string_view s) {
  // accept both the config spelling and the CLI spelling
  if (s == "bands") return Mode::Bands;
  if (s == "evolve_reduced" || s == "evolve-reduced") return Mode::EvolveReduced;
  if (s == "evolve_physical" || s == "evolve-physical") return Mode::EvolvePhysical;
  if (s == "instrument") return Mode::Instrument;
  return std::nullopt;
}

enum class Dim { None, Mass, Length, Time, Rate, Energy, Force, Charge, Field, EnergyLength, AngleMass, Action };

// Natural units: ħ = 1, mass unit and frequency unit from the SI block,
// charge unit = the SI block's charge (default e).
struct UnitScale {
  bool si = false;
  double hbar = 1.054571817e-34;
  double mass = 1.0;
  double rate = 1.0;
  double charge = 1.602176634e-19;

  // SI value of one natural unit of dimension d (1 when not SI).
  double factor(Dim d) const {
    if (!si) return 1.0;
    const double length = std::sqrt(hbar / (mass * rate));
    const double energy = hbar * rate;
    switch (d) {
      case Dim::None: return 1.0;
      case Dim::Mass: return mass;
      case Dim::Length: return length;
      case Dim::Time: return 1.0 / rate;
      case Dim::Rate: return rate;
      case Dim::Energy: return energy;
      case Dim::Force: return energy / length;
      case Dim::Charge: return charge;
      case Dim::Field: return mass * rate / charge;
      case Dim::EnergyLength: return energy * length;
      case Dim::AngleMass: return hbar / rate;
      case Dim::Action: return hbar;
    }
    return 1.0;
  }
  double to_natural(double v, Dim d) const { return v / factor(d); }
  double to_si(double v, Dim d) const { return v * factor(d); }
};

inline Dim instrument_dim(const Instrument& inst) {
  static constexpr Dim d[] = {Dim::Force, Dim::Rate, Dim::Field, Dim::EnergyLength};
  return d[inst.index()];
}

namespace detail {

inline std::string pointer_escape(const std::string& key) {
  std::string out;
  for (char c : key) {
    if (c == '~') out += "~0";
    else if (c == '/') out += "~1";
    else out += c;
  }
  return out;
}

// Walks one JSON object, converting numbers to natural units, recording
// defaults in the echo, and rejecting keys nobody asked for.
class Reader {
 public:
  Reader(const json& j, std::string ptr, json& echo, const UnitScale& units)
      : j_(j), ptr_(std::move(ptr)), echo_(echo), units_(units) {
    if (!j_.is_object()) fail(ptr_.empty() ? "/" : ptr_, "expected an object");
    if (!echo_.is_object()) echo_ = json::object();
  }

  [[noreturn]] static void fail(const std::string& where, const std::string& what) {
    throw Error(ErrorKind::Parse, what + " at " + where);
  }

  std::string at(const std::string& key) const { return ptr_ + "/" + pointer_escape(key); }
  const std::string& pointer() const { return ptr_; }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  double number(const std::string& key, Dim d = Dim::None) {
    seen_.insert(key);
    if (!j_.contains(key)) fail(at(key), "missing required number");
    const json& v = j_.at(key);
    if (!v.is_number()) fail(at(key), "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) fail(at(key), "number must be finite");
    echo_[key] = v;
    return units_.to_natural(x, d);
  }
  double number_or(const std::string& key, double natural_default, Dim d = Dim::None) {
    if (has(key)) return number(key, d);
    echo_[key] = units_.to_si(natural_default, d);
    return natural_default;
  }
  std::optional<double> optional_number(const std::string& key, Dim d = Dim::None) {
    if (has(key)) return number(key, d);
    return std::nullopt;
  }
  long integer(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) fail(at(key), "missing required integer");
    const json& v = j_.at(key);
    if (!v.is_number_integer()) fail(at(key), "expected an integer");
    echo_[key] = v;
    return v.get<long>();
  }
  long integer_or(const std::string& key, long def) {
    if (has(key)) return integer(key);
    echo_[key] = def;
    return def;
  }
  std::string string(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) fail(at(key), "missing required string");
    const json& v = j_.at(key);
    if (!v.is_string()) fail(at(key), "expected a string");
    echo_[key] = v;
    return v.get<std::string>();
  }
  std::string string_or(const std::string& key, const std::string& def) {
    if (has(key)) return string(key);
    echo_[key] = def;
    return def;
  }
  bool boolean_or(const std::string& key, bool def) {
    seen_.insert(key);
    if (!j_.contains(key)) {
      echo_[key] = def;
      return def;
    }
    const json& v = j_.at(key);
    if (!v.is_boolean()) fail(at(key), "expected a boolean");
    echo_[key] = v;
    return v.get<bool>();
  }
  Reader object(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) fail(at(key), "missing required object");
    return Reader(j_.at(key), at(key), echo_[key], units_);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) fail(at(it.key()), "unknown key \"" + it.key() + "\"");
  }

 private:
  const json& j_;
  std::string ptr_;
  json& echo_;
  const UnitScale& units_;
  std::set<std::string> seen_;
};

}  // namespace detail

struct DriveConfig {
  int n = 1;
  std::optional<double> omega;
  std::optional<double> V_n;     // direct lattice amplitude
  std::optional<double> lambda;  // amplitude of the profile V(x)
  std::string profile = "harmonic";  // "harmonic": λ cos nΘ(x); "linear": λ x
};

// A phase-lattice model given directly, without a well.
struct DirectModel {
  double M = 1.0;
  int n = 1;
  double V_n = 0.0;
  double f = 0.0;
  std::optional<double> Omega;  // orbit frequency, for lab-frame outputs
};

struct ReducedSimConfig {
  std::size_t N = 0;  // 0: next power of two >= max(256, 16n)
  std::optional<double> dt;
  std::optional<double> t_end;
  double periods = 3.2;  // run length in predicted T_B when t_end is absent
  int snapshot_every = 0;
  int density_every = 0;
  std::optional<double> center;  // lattice frame; default: a lattice ground site
  std::optional<double> width;
  bool write_density = false;
};

struct BandSimConfig {
  std::optional<double> q_min, q_max;
  int q_points = 201;
  int bands = 4;
  int m_max = 0;
};

struct PhysicalSimConfig {
  std::size_t N = 8192;  // square well: points on the odd-extension circle
  double dx = 0.02;      // triangular well
  std::optional<double> x_max;
  int steps_per_period = 320;
  double periods = 300.0;  // in T_D
  int log_every = 0;
  std::optional<double> x0;       // square well packet centre
  std::optional<double> sigma_x;  // square well packet width
  bool moving_right = true;
  double sigma_P = 1.4;            // triangular packet width in action (ħ)
  std::optional<double> Theta0;    // triangular packet angle
  std::optional<KickShape> shape;  // default: Dirac for the square well, pulse for the triangle
  std::string observable;          // "x" or "p"; default per well
};

struct EstimatorConfig {
  SpectralWindow window = SpectralWindow::Hann;
  bool refine = true;
  double noise = 0.0;     // white noise added to the series, relative to its std
  bool simulate = true;   // instrument mode: false uses the exact T_B
};

struct ScenarioConfig {
  Mode mode = Mode::EvolveReduced;
  std::string name;
  std::string output_dir = "out";
  std::uint64_t seed = 0;
  UnitScale units;
  std::optional<WellSpec> well;
  std::optional<double> E0;
  std::optional<DriveConfig> drive;
  std::optional<Instrument> probe;
  std::optional<DirectModel> direct;
  ReducedSimConfig rsim;
  BandSimConfig bsim;
  PhysicalSimConfig psim;
  EstimatorConfig est;
  json echo;  // the config as read, defaults filled, in its own units
};

// Everything derived from a config before any simulation.
struct ResolvedScenario {
  std::optional<ActionAngleMap> map;
  ReducedModel model;
  std::optional<ProbeSpec> probe;
  std::optional<double> Omega;
  double T_B = std::numeric_limits<double>::infinity();
};

namespace detail {

inline WellSpec read_well(Reader r) {
  const std::string kind = r.string("kind");
  WellSpec w;
  if (kind == "square") {
    w = WellSpec::infinite_square(r.number_or("m", 1.0, Dim::Mass), r.number("L", Dim::Length));
  } else if (kind == "triangular") {
    w = WellSpec::triangular(r.number_or("m", 1.0, Dim::Mass), r.number("eta", Dim::Force));
  } else if (kind == "quartic") {
    const double m = r.number_or("m", 1.0, Dim::Mass);
    const double b = r.number("b", Dim::Length);
    const double L = r.number("L", Dim::Length);
    w = WellSpec::quartic_bottom(m, b, L, r.number("Omega", Dim::Rate));
  } else {
    Reader::fail(r.at("kind"), "unknown well kind \"" + kind + "\" (square, triangular, quartic)");
  }
  r.finish();
  return w;
}

inline DriveConfig read_drive(Reader r) {
  DriveConfig d;
  const long n = r.integer("n");
  if (n < 1) Reader::fail(r.at("n"), "n must be >= 1");
  d.n = static_cast<int>(n);
  d.omega = r.optional_number("omega", Dim::Rate);
  d.V_n = r.optional_number("V_n", Dim::Energy);
  d.lambda = r.optional_number("lambda", Dim::Energy);
  if (d.lambda && r.has("profile")) d.profile = r.string("profile");
  if (d.profile != "harmonic" && d.profile != "linear")
    Reader::fail(r.at("profile"), "profile must be \"harmonic\" or \"linear\"");
  if (d.V_n.has_value() == d.lambda.has_value()) Reader::fail(r.pointer(), "give exactly one of V_n and lambda");
  r.finish();
  return d;
}

inline Instrument read_probe(Reader r) {
  const std::string kind = r.string("instrument");
  Instrument inst;
  if (kind == "force_meter") {
    inst = ForceMeter{r.number("F0", Dim::Force), r.number("tau", Dim::Time)};
  } else if (kind == "tachometer") {
    const double w = r.number("w_z", Dim::Rate);
    const double y0 = r.number("y0", Dim::Length);
    inst = Tachometer{w, y0, r.number("tau", Dim::Time)};
  } else if (kind == "magnetometer") {
    const double B = r.number("B_z", Dim::Field);
    const double Q = r.number("Q", Dim::Charge);
    const double y0 = r.number("y0", Dim::Length);
    inst = Magnetometer{B, Q, y0, r.number("tau", Dim::Time)};
  } else if (kind == "singular_amplitude") {
    const double a = r.number("a", Dim::EnergyLength);
    const double b = r.number("b", Dim::Length);
    inst = SingularAmplitude{a, b, r.number("tau", Dim::Time)};
  } else {
    Reader::fail(r.at("instrument"),
                 "unknown instrument \"" + kind + "\" (force_meter, tachometer, magnetometer, singular_amplitude)");
  }
  r.finish();
  return inst;
}

inline DirectModel read_direct(Reader r) {
  DirectModel d;
  d.M = r.number("M", Dim::AngleMass);
  const long n = r.integer("n");
  if (n < 1) Reader::fail(r.at("n"), "n must be >= 1");
  d.n = static_cast<int>(n);
  d.V_n = r.number("V_n", Dim::Energy);
  d.f = r.number_or("f", 0.0, Dim::Energy);
  d.Omega = r.optional_number("Omega", Dim::Rate);
  r.finish();
  return d;
}

inline int positive_int(Reader& r, const std::string& key, long def, long min = 1) {
  const long v = r.integer_or(key, def);
  if (v < min) Reader::fail(r.at(key), "must be >= " + std::to_string(min));
  return static_cast<int>(v);
}

inline void read_reduced_sim(Reader r, ReducedSimConfig& s) {
  const long N = r.integer_or("N", 0);
  if (N < 0) Reader::fail(r.at("N"), "must be >= 0");
  s.N = static_cast<std::size_t>(N);
  s.dt = r.optional_number("dt", Dim::Time);
  s.t_end = r.optional_number("t_end", Dim::Time);
  s.periods = r.number_or("periods", s.periods);
  s.snapshot_every = positive_int(r, "snapshot_every", 0, 0);
  s.density_every = positive_int(r, "density_every", 0, 0);
  s.center = r.optional_number("center");
  s.width = r.optional_number("width");
  s.write_density = r.boolean_or("write_density", false);
  r.finish();
}

inline void read_band_sim(Reader r, BandSimConfig& s) {
  s.q_min = r.optional_number("q_min");
  s.q_max = r.optional_number("q_max");
  s.q_points = positive_int(r, "q_points", s.q_points, 2);
  s.bands = positive_int(r, "bands", s.bands);
  s.m_max = positive_int(r, "m_max", 0, 0);
  r.finish();
}

inline void read_physical_sim(Reader r, PhysicalSimConfig& s) {
  s.N = static_cast<std::size_t>(positive_int(r, "N", static_cast<long>(s.N), 16));
  s.dx = r.number_or("dx", s.dx, Dim::Length);
  s.x_max = r.optional_number("x_max", Dim::Length);
  s.steps_per_period = positive_int(r, "steps_per_period", s.steps_per_period);
  s.periods = r.number_or("periods", s.periods);
  s.log_every = positive_int(r, "log_every", 0, 0);
  s.x0 = r.optional_number("x0", Dim::Length);
  s.sigma_x = r.optional_number("sigma_x", Dim::Length);
  s.moving_right = r.boolean_or("moving_right", true);
  s.sigma_P = r.number_or("sigma_P", s.sigma_P);
  s.Theta0 = r.optional_number("Theta0");
  if (r.has("kick_shape")) {
    const std::string k = r.string("kick_shape");
    if (k == "dirac") s.shape = KickShape::DiracPhase;
    else if (k == "square_pulse") s.shape = KickShape::SquarePulse;
    else Reader::fail(r.at("kick_shape"), "kick_shape must be \"dirac\" or \"square_pulse\"");
  }
  if (r.has("observable")) {
    s.observable = r.string("observable");
    if (s.observable != "x" && s.observable != "p") Reader::fail(r.at("observable"), "observable must be \"x\" or \"p\"");
  }
  r.finish();
}

inline void read_estimator(Reader r, EstimatorConfig& e) {
  const std::string w = r.string_or("window", "hann");
  if (w == "hann") e.window = SpectralWindow::Hann;
  else if (w == "rectangular") e.window = SpectralWindow::Rectangular;
  else Reader::fail(r.at("window"), "window must be \"hann\" or \"rectangular\"");
  e.refine = r.boolean_or("refine", true);
  e.noise = r.number_or("noise", 0.0);
  if (e.noise < 0) Reader::fail(r.at("noise"), "noise must be >= 0");
  e.simulate = r.boolean_or("simulate", true);
  r.finish();
}

inline std::function<double(double)> drive_profile(const DriveConfig& d, const ActionAngleMap& map) {
  const double lam = d.lambda ? *d.lambda : 2.0 * *d.V_n;
  if (d.profile == "linear") return [lam](double x) { return lam * x; };
  return harmonic_drive_profile(map, d.n, lam);
}

// Re-raises a library error met during parse-time checks as a validation error.
template <class F>
auto validated(const std::string& what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Parse) throw;
    throw Error(ErrorKind::Validation, what + ": " + e.message() + " [" + std::string(to_string(e.kind())) + "]");
  }
}

}  // namespace detail

// Map, reduced model, probe and predicted T_B for a config.
inline ResolvedScenario resolve(const ScenarioConfig& c) {
  ResolvedScenario r;
  if (c.direct) {
    r.model.M = c.direct->M;
    r.model.n = c.direct->n;
    r.model.V_n = std::abs(c.direct->V_n);
    r.model.phase = c.direct->V_n < 0 ? pi : 0.0;
    r.model.f = c.direct->f;
    r.Omega = c.direct->Omega;
    detail::validated("model", [&] { r.model.validate(); });
  } else {
    r.map.emplace(detail::validated("well", [&] {
      c.well->validate();
      return ActionAngleMap(*c.well, *c.E0);
    }));
    r.Omega = r.map->Omega();
    DriveSpec spec;
    spec.n = c.drive->n;
    spec.omega = c.drive->omega;
    if (c.drive->V_n) spec.V_n = c.drive->V_n;
    else spec.profile = detail::drive_profile(*c.drive, *r.map);
    r.model = detail::validated("drive", [&] { return secular_reduce(*r.map, spec); });
    if (c.probe) {
      r.probe = make_probe(*c.probe, *r.map);
      r.model.f = detail::validated("probe", [&] { return probe_to_force(*r.probe, *r.map); });
    }
  }
  r.T_B = r.model.bloch_period();
  return r;
}

inline ScenarioConfig parse_config(const json& doc, std::optional<Mode> forced_mode = std::nullopt) {
  if (!doc.is_object()) throw Error(ErrorKind::Parse, "expected an object at /");
  ScenarioConfig c;
  c.echo = json::object();
  if (doc.contains("si")) {
    UnitScale probe_units;  // the SI block itself is read in SI
    detail::Reader si(doc.at("si"), "/si", c.echo["si"], probe_units);
    c.units.si = true;
    c.units.mass = si.number("mass");
    c.units.rate = si.number("frequency");
    c.units.hbar = si.number_or("hbar", c.units.hbar);
    c.units.charge = si.number_or("charge", c.units.charge);
    if (!(c.units.mass > 0) || !(c.units.rate > 0) || !(c.units.hbar > 0) || !(c.units.charge > 0))
      detail::Reader::fail("/si", "unit scales must be positive");
    si.finish();
  }
  detail::Reader r(doc, "", c.echo, c.units);
  r.has("si");

  const std::string mode_str = forced_mode && !doc.contains("mode") ? std::string(to_string(*forced_mode))
                                                                     : r.string("mode");
  c.echo["mode"] = mode_str;
  const auto mode = parse_mode(mode_str);
  if (!mode) detail::Reader::fail("/mode", "unknown mode \"" + mode_str + "\"");
  if (forced_mode && *mode != *forced_mode)
    throw Error(ErrorKind::Configuration, "config mode \"" + mode_str + "\" does not match the subcommand \"" +
                                              std::string(to_string(*forced_mode)) + "\"");
  c.mode = *mode;
  c.name = r.string_or("name", "");
  c.output_dir = r.string_or("output_dir", "out");
  const long seed = r.integer_or("seed", 0);
  if (seed < 0) detail::Reader::fail("/seed", "seed must be >= 0");
  c.seed = static_cast<std::uint64_t>(seed);

  if (r.has("reduced")) c.direct = detail::read_direct(r.object("reduced"));
  if (r.has("well")) c.well = detail::read_well(r.object("well"));
  if (r.has("E0")) c.E0 = r.number("E0", Dim::Energy);
  if (r.has("drive")) c.drive = detail::read_drive(r.object("drive"));
  if (r.has("probe")) c.probe = detail::read_probe(r.object("probe"));

  if (c.direct && (c.well || c.E0 || c.drive || c.probe))
    throw Error(ErrorKind::Configuration, "\"reduced\" replaces well, E0, drive and probe; do not combine them");
  if (!c.direct) {
    if (!c.well) detail::Reader::fail("/well", "missing required object (or give /reduced)");
    if (!c.E0) detail::Reader::fail("/E0", "missing required number");
    if (!c.drive) detail::Reader::fail("/drive", "missing required object");
  }
  if ((c.mode == Mode::EvolvePhysical || c.mode == Mode::Instrument) && !c.probe)
    throw Error(ErrorKind::Configuration, std::string(to_string(c.mode)) + " mode needs a probe");

  if (r.has("sim")) {
    auto s = r.object("sim");
    switch (c.mode) {
      case Mode::Bands: detail::read_band_sim(std::move(s), c.bsim); break;
      case Mode::EvolveReduced:
      case Mode::Instrument: detail::read_reduced_sim(std::move(s), c.rsim); break;
      case Mode::EvolvePhysical: detail::read_physical_sim(std::move(s), c.psim); break;
    }
  }
  if (r.has("estimator")) detail::read_estimator(r.object("estimator"), c.est);
  r.finish();

  // Physics checks, reported as validation errors.
  const ResolvedScenario res = resolve(c);
  if (c.mode == Mode::EvolvePhysical) {
    const WellKind k = c.well->kind;
    if (k == WellKind::QuarticBottom)
      throw Error(ErrorKind::Validation, "the physical propagator covers the square and triangular wells only");
    if (!c.drive->lambda && c.drive->profile != "harmonic")
      throw Error(ErrorKind::Validation, "a physical drive needs lambda");
  }
  if ((c.mode == Mode::EvolveReduced || c.mode == Mode::Instrument) && !c.rsim.t_end && !std::isfinite(res.T_B))
    throw Error(ErrorKind::Validation, "f = 0: give sim.t_end, the run length cannot be set in Bloch periods");
  if (c.rsim.width && !(*c.rsim.width > 0 && *c.rsim.width < pi / 2))
    throw Error(ErrorKind::Validation, "sim.width must lie in (0, pi/2)");
  return c;
}

inline ScenarioConfig parse_config(const std::string& text, std::optional<Mode> forced_mode = std::nullopt) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Parse, std::string("malformed JSON: ") + e.what());
  }
  return parse_config(doc, forced_mode);
}

}  // namespace flobloch
