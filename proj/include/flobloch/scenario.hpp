#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "flobloch/action_angle.hpp"
#include "flobloch/artifacts.hpp"
#include "flobloch/band_solver.hpp"
#include "flobloch/config.hpp"
#include "flobloch/effective_model.hpp"
#include "flobloch/error.hpp"
#include "flobloch/estimation.hpp"
#include "flobloch/physical_propagator.hpp"
#include "flobloch/reduced_propagator.hpp"

namespace flobloch {

struct RunResult {
  json manifest;
  std::vector<std::string> files;
  double T_B_predicted = std::numeric_limits<double>::infinity();
  std::optional<PeriodEstimate> estimate;
  std::optional<InstrumentReading> reading;
};

namespace detail {

// Prefixes errors from one pipeline stage with the stage name.
template <class F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.kind(), std::string(name) + ": " + e.message());
  }
}

inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json derived_block(const ResolvedScenario& r, const UnitScale& u, bool si) {
  auto cv = [&](double v, Dim d) { return finite_or_null(si ? u.to_si(v, d) : v); };
  json d;
  d["M"] = cv(r.model.M, Dim::AngleMass);
  d["n"] = r.model.n;
  d["V_n"] = cv(r.model.V_n, Dim::Energy);
  d["lattice_phase"] = r.model.phase;
  d["f"] = cv(r.model.f, Dim::Energy);
  d["T_B_predicted"] = cv(r.T_B, Dim::Time);
  d["recoil_energy"] = cv(r.model.recoil_energy(), Dim::Energy);
  if (r.Omega) d["Omega"] = cv(*r.Omega, Dim::Rate);
  if (r.map) {
    d["E0"] = cv(r.map->E0(), Dim::Energy);
    d["J0"] = cv(r.map->J0(), Dim::Action);
    d["M_eff"] = cv(r.map->M_eff(), Dim::AngleMass);
    d["T_D"] = cv(r.map->period(), Dim::Time);
  }
  return d;
}

inline std::vector<double> add_noise(std::vector<double> y, double rel, std::uint64_t seed) {
  if (rel <= 0 || y.empty()) return y;
  double mean = 0.0, var = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  for (double v : y) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(y.size()));
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(0.0, rel * sd);
  for (double& v : y) v += nd(gen);
  return y;
}

inline EstimatorOptions estimator_options(const EstimatorConfig& e) {
  EstimatorOptions o;
  o.window = e.window;
  o.refine = e.refine;
  return o;
}

inline std::string to_csv(const std::function<void(std::ostream&)>& writer) {
  std::ostringstream os;
  writer(os);
  return os.str();
}

struct ReducedRun {
  EvolutionLog log;
  std::optional<EvolutionLog> lab;
  PeriodEstimate estimate;
  std::optional<double> drift;
  double dt = 0.0;
  std::size_t N = 0;
};

inline std::size_t default_grid(int n) {
  std::size_t N = 256;
  while (N < 16 * static_cast<std::size_t>(n)) N <<= 1;
  return N;
}

inline ReducedRun run_reduced(const ScenarioConfig& c, const ResolvedScenario& res, ArtifactSet& out, json& results) {
  const ReducedModel& m = res.model;
  const ReducedSimConfig& s = c.rsim;
  ReducedRun run;
  run.N = s.N ? s.N : default_grid(m.n);
  run.dt = s.dt ? *s.dt : max_reduced_dt(m);
  const double t_req = s.t_end ? *s.t_end : s.periods * res.T_B;
  ReducedRunOptions opt;
  opt.dt = run.dt;
  opt.snapshot_every =
      s.snapshot_every > 0
          ? s.snapshot_every
          : std::max(1, static_cast<int>(std::isfinite(res.T_B)
                                             ? std::lround(res.T_B / (500.0 * run.dt))
                                             : std::lround(std::abs(t_req / run.dt) / 2000.0)));
  // whole number of sampling intervals, so the logged series is uniform
  const double samples = std::ceil(std::abs(t_req / (run.dt * opt.snapshot_every)) - 1e-9);
  const double t_end = samples * opt.snapshot_every * run.dt;
  opt.t_end = t_end;
  opt.density_every = s.density_every > 0 ? s.density_every : std::max(1, static_cast<int>(samples / 240.0));
  const double site = two_pi / m.n;
  const double center = s.center ? *s.center : (m.M > 0 ? 0.5 * site : 0.0);
  const double width = s.width ? *s.width : std::min(0.5, 5.0 * site);

  AngularState st = stage("reduced_propagator", [&] { return init_gaussian(center, width, run.N); });
  run.log = stage("reduced_propagator", [&] { return evolve_reduced(st, m, opt); });

  // Bloch period from the unwrapped rotating-frame circular mean.
  std::vector<double> u = unwrap(run.log.circ_mean);
  u = add_noise(std::move(u), c.est.noise, c.seed);
  run.estimate =
      stage("estimation", [&] { return estimate_period(run.log.times, u, estimator_options(c.est)); });

  out.write("reduced.csv", to_csv([&](std::ostream& os) { write_reduced_csv(os, run.log); }));
  CarpetAxes ax;
  ax.x_label = "angle theta (lattice frame, rad)";
  ax.y_label = "t (natural units)";
  ax.x_max = two_pi;
  if (run.log.density_snapshots.size() >= 2) {
    ax.y_min = run.log.density_times.front();
    ax.y_max = run.log.density_times.back();
    ax.title = "|psi(theta, t)|^2, rotating frame";
    out.write("carpet.svg", emit_carpet(block_average(run.log.density_snapshots, 240, 256), ax));
    if (s.write_density)
      out.write("density.csv", to_csv([&](std::ostream& os) {
                  write_density_csv(os, run.log.density_times, run.log.density_snapshots);
                }));
  }
  if (res.Omega) {
    run.lab = to_lab_frame(run.log, *res.Omega);
    out.write("reduced_lab.csv", to_csv([&](std::ostream& os) { write_reduced_csv(os, *run.lab); }));
    if (run.lab->density_snapshots.size() >= 2) {
      ax.x_label = "angle Theta (lab frame, rad)";
      ax.title = "|psi(Theta, t)|^2, lab frame";
      out.write("carpet_lab.svg", emit_carpet(block_average(run.lab->density_snapshots, 240, 256), ax));
    }
    try {
      run.drift = drift_per_period(*run.lab, run.estimate.T_B);
    } catch (const Error&) {
      // too short for a drift estimate; the manifest says so by omission
    }
  }
  results["grid_N"] = run.N;
  results["dt"] = run.dt;
  results["t_end"] = t_end;
  results["initial_center"] = center;
  results["initial_width"] = width;
  results["norm_drift"] = run.log.norm_drift;
  results["T_B_measured"] = run.estimate.T_B;
  results["T_B_sigma"] = run.estimate.sigma;
  results["estimate_method"] = std::string(to_string(run.estimate.method));
  if (run.drift) results["lab_drift_per_period"] = *run.drift;
  if (std::isfinite(res.T_B)) results["T_B_relative_error"] = (run.estimate.T_B - res.T_B) / res.T_B;
  return run;
}

inline void run_bands(const ScenarioConfig& c, const ResolvedScenario& res, ArtifactSet& out, json& results) {
  const ReducedModel& m = res.model;
  const double half = 0.5 * m.n;
  const double q0 = c.bsim.q_min.value_or(-half), q1 = c.bsim.q_max.value_or(half);
  if (!(q1 > q0)) throw Error(ErrorKind::Validation, "sim.q_max must exceed sim.q_min");
  std::vector<double> q(static_cast<std::size_t>(c.bsim.q_points));
  for (std::size_t i = 0; i < q.size(); ++i)
    q[i] = q0 + (q1 - q0) * static_cast<double>(i) / static_cast<double>(q.size() - 1);
  const int B = std::max(2, c.bsim.bands);
  const BandStructure bands = stage("band_solver", [&] { return solve_bands(m, q, B, c.bsim.m_max); });
  out.write("bands.csv", to_csv([&](std::ostream& os) { write_band_csv(os, bands); }));
  const BandStructure edge = stage("band_solver", [&] { return solve_bands(m, {half, 0.0}, B, bands.m_max); });
  results["m_max"] = bands.m_max;
  results["zone_edge_gap"] = std::abs(edge.energy(0, 1) - edge.energy(0, 0));
  results["band0_width"] = std::abs(edge.energy(0, 0) - edge.energy(1, 0));
}

inline void run_physical(const ScenarioConfig& c, const ResolvedScenario& res, ArtifactSet& out, json& results,
                         std::optional<PeriodEstimate>& estimate) {
  const ActionAngleMap& map = *res.map;
  const WellSpec& w = map.well();
  const PhysicalSimConfig& s = c.psim;
  const int n = res.model.n;
  PhysicalDrive drive;
  drive.profile = drive_profile(*c.drive, map);
  drive.omega = c.drive->omega.value_or(n * map.Omega());
  const double T_D = map.period();
  const double tau = instrument_tau(*c.probe);

  PhysicalRunOptions opt;
  opt.steps_per_period = s.steps_per_period;
  opt.t_end = s.periods * T_D;
  opt.log_every = s.log_every;
  KickSchedule k;
  k.T_D = T_D;
  k.tau = tau;

  const double site = two_pi / n;
  LineState st;
  PhysicalLog log;
  std::string observable = s.observable;
  if (w.kind == WellKind::InfiniteSquare) {
    // Ground sites of the phase lattice sit at odd multiples of π/n
    // (shifted by the lattice phase); default to the one nearest 1.45π.
    const double shift = -res.model.phase / n;
    double theta = s.Theta0.value_or(shift + site * (std::round((1.45 * pi - shift) / site - 0.5) + 0.5));
    const auto pt = map.from_angle(wrap_angle(theta));
    const double x0 = s.x0.value_or(pt.x);
    const bool right = s.x0 ? s.moving_right : pt.p > 0;
    const double sig = s.sigma_x.value_or(1.6 * w.L / n);
    st = stage("physical_propagator",
               [&] { return square_packet(1.0, w.m, w.L, map.E0(), x0, sig, s.N, right); });
    k.shape = s.shape.value_or(KickShape::DiracPhase);
    k.law = KickLaw::OppositeToMotion;
    k.strength = std::get<ForceMeter>(*c.probe).F0 * tau;
    opt.kicks = k;
    log = stage("physical_propagator", [&] { return evolve_square_well(st, drive, opt, T_D); });
    if (observable.empty()) observable = "x";
    results["initial_x0"] = x0;
    results["initial_sigma_x"] = sig;
    results["symmetry_error"] = log.symmetry_error;
  } else {
    const double theta = s.Theta0.value_or(pi);
    const double x_max = s.x_max.value_or(1.5 * map.E0() / w.eta);
    st = stage("physical_propagator", [&] {
      return triangular_action_packet(1.0, w.m, w.eta, map.E0(), s.sigma_P, theta, s.dx, x_max);
    });
    k.shape = s.shape.value_or(KickShape::SquarePulse);
    k.law = KickLaw::TranslationKick;
    k.strength = translation_per_kick(*c.probe, w.m).total();
    opt.kicks = k;
    log = stage("physical_propagator", [&] { return evolve_triangular_well(st, map.E0(), drive, opt, T_D); });
    if (observable.empty()) observable = "p";
    results["initial_Theta0"] = theta;
    results["x_max"] = x_max;
    results["tail_norm"] = log.tail_norm;
  }
  results["kick_strength"] = k.strength;
  results["norm_drift"] = log.norm_drift;
  results["kick_leakage"] = log.kick_leakage;
  results["observable"] = observable;

  if (!log.times.empty()) out.write("physical.csv", to_csv([&](std::ostream& os) { write_physical_csv(os, log); }));
  out.write("strobe.csv", to_csv([&](std::ostream& os) { write_strobe_csv(os, log); }));
  auto series = add_noise(observable == "x" ? log.strobe_x : log.strobe_p, c.est.noise, c.seed);
  estimate = stage("estimation", [&] { return estimate_period(log.strobe_times, series, estimator_options(c.est)); });
  results["T_B_measured"] = estimate->T_B;
  results["T_B_sigma"] = estimate->sigma;
  results["estimate_method"] = std::string(to_string(estimate->method));
  results["T_B_relative_error"] = (estimate->T_B - res.T_B) / res.T_B;
}

inline json reading_json(const InstrumentReading& r, const UnitScale& u, const Instrument& configured) {
  const bool si = u.si;
  const Dim d = instrument_dim(configured);
  json j;
  j["instrument"] = r.kind;
  j["quantity"] = r.quantity;
  j["value"] = si ? u.to_si(r.value, d) : r.value;
  j["unit"] = r.unit;
  j["configured_value"] = si ? u.to_si(std::abs(flobloch::instrument_value(configured)), d) : std::abs(flobloch::instrument_value(configured));
  j["relative_error"] = (r.value - std::abs(flobloch::instrument_value(configured))) / std::abs(flobloch::instrument_value(configured));
  j["f_effective"] = si ? u.to_si(r.f_effective, Dim::Energy) : r.f_effective;
  j["f_unit"] = si ? "J" : "natural";
  j["T_B"] = si ? u.to_si(r.T_B, Dim::Time) : r.T_B;
  j["T_B_unit"] = si ? "s" : "natural";
  j["relative_uncertainty"] = r.relative_uncertainty;
  return j;
}

}  // namespace detail

// Runs one scenario into out_dir. Files are written atomically; on failure
// the files of this run are removed and the error is rethrown.
inline RunResult run_scenario(const ScenarioConfig& c, const fs::path& out_dir) {
  const ResolvedScenario res = resolve(c);
  ArtifactSet out(out_dir);
  RunResult rr;
  rr.T_B_predicted = res.T_B;
  json results = json::object();
  try {
    switch (c.mode) {
      case Mode::Bands: detail::run_bands(c, res, out, results); break;
      case Mode::EvolveReduced: rr.estimate = detail::run_reduced(c, res, out, results).estimate; break;
      case Mode::EvolvePhysical: detail::run_physical(c, res, out, results, rr.estimate); break;
      case Mode::Instrument: {
        double T = res.T_B, sigma = 0.0;
        if (c.est.simulate) {
          rr.estimate = detail::run_reduced(c, res, out, results).estimate;
          T = rr.estimate->T_B;
          sigma = rr.estimate->sigma;
        }
        const UnitSystem us = c.units.si ? UnitSystem::SI : UnitSystem::Natural;
        rr.reading = detail::stage("estimation", [&] {
          return invert_instrument(*res.probe, *res.map, res.model.n, T, sigma, res.model.hbar, us);
        });
        const json rj = detail::reading_json(*rr.reading, c.units, *c.probe);
        out.write("reading.json", rj.dump(2) + "\n");
        results["reading"] = rj;
        results["T_B_source"] = c.est.simulate ? "simulation" : "exact";
        break;
      }
    }
    json& m = rr.manifest;
    m["config"] = c.echo;
    m["units"] = c.units.si ? "SI (computed in natural units: hbar = 1, SI block scales)" : "natural (hbar = 1)";
    m["derived"] = detail::derived_block(res, c.units, false);
    if (c.units.si) m["derived_si"] = detail::derived_block(res, c.units, true);
    m["results"] = results;
    json files = json::array();
    for (const auto& f : out.files()) files.push_back(f);
    m["files"] = files;
    out.write("manifest.json", m.dump(2) + "\n");
    rr.files = out.files();
  } catch (...) {
    out.discard();
    throw;
  }
  return rr;
}

// One row of a sweep summary.
struct SweepRow {
  std::size_t index = 0;
  std::string name;
  std::string mode;
  bool ok = false;
  double T_B_predicted = std::numeric_limits<double>::quiet_NaN();
  double T_B_measured = std::numeric_limits<double>::quiet_NaN();
  double sigma = std::numeric_limits<double>::quiet_NaN();
  double value = std::numeric_limits<double>::quiet_NaN();
  std::string unit;
  std::string message;
};

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string o = "\"";
  for (char ch : s) {
    if (ch == '"') o += '"';
    o += ch == '\n' ? ' ' : ch;
  }
  return o + "\"";
}

inline std::string csv_num_or_empty(double v) { return std::isnan(v) ? "" : csv_number(v); }

}  // namespace detail

inline std::string sweep_summary_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "index,name,mode,status,T_B_predicted,T_B_measured,T_B_sigma,value,unit,message\n";
  for (const auto& r : rows)
    os << r.index << ',' << detail::csv_field(r.name) << ',' << r.mode << ',' << (r.ok ? "ok" : "error") << ','
       << detail::csv_num_or_empty(r.T_B_predicted) << ',' << detail::csv_num_or_empty(r.T_B_measured) << ','
       << detail::csv_num_or_empty(r.sigma) << ',' << detail::csv_num_or_empty(r.value) << ','
       << detail::csv_field(r.unit) << ',' << detail::csv_field(r.message) << '\n';
  return os.str();
}

// Runs every config (a JSON document each) with at most `parallelism`
// concurrent runs. Each run writes to out_root / its output_dir; failures
// are recorded per row. Rows come back in input order.
inline std::vector<SweepRow> sweep(const std::vector<json>& docs, int parallelism, const fs::path& out_root) {
  std::vector<SweepRow> rows(docs.size());
  std::vector<std::optional<ScenarioConfig>> cfgs(docs.size());
  std::set<std::string> dirs;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    rows[i].index = i;
    if (docs[i].is_object()) {
      // kept even when the config is rejected, so the summary row is identifiable
      if (docs[i].contains("name") && docs[i]["name"].is_string()) rows[i].name = docs[i]["name"];
      if (docs[i].contains("mode") && docs[i]["mode"].is_string()) rows[i].mode = docs[i]["mode"];
    }
    try {
      cfgs[i] = parse_config(docs[i]);
      rows[i].name = cfgs[i]->name;
      rows[i].mode = std::string(to_string(cfgs[i]->mode));
      if (!docs[i].contains("output_dir")) cfgs[i]->output_dir = "run_" + std::to_string(i);
      if (!dirs.insert(fs::path(cfgs[i]->output_dir).lexically_normal().string()).second)
        throw Error(ErrorKind::Configuration, "output_dir \"" + cfgs[i]->output_dir + "\" is used by an earlier run");
    } catch (const std::exception& e) {
      cfgs[i].reset();
      rows[i].message = e.what();
    }
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < docs.size(); i = next++) {
      if (!cfgs[i]) continue;
      try {
        const RunResult r = run_scenario(*cfgs[i], out_root / cfgs[i]->output_dir);
        rows[i].ok = true;
        rows[i].T_B_predicted = std::isfinite(r.T_B_predicted) ? r.T_B_predicted : rows[i].T_B_predicted;
        if (r.estimate) {
          rows[i].T_B_measured = r.estimate->T_B;
          rows[i].sigma = r.estimate->sigma;
        }
        if (r.reading) {
          rows[i].value = r.reading->value;
          rows[i].unit = r.reading->unit;
        }
      } catch (const std::exception& e) {
        rows[i].message = e.what();
      }
    }
  };
  const int k = std::max(1, std::min<int>(parallelism, static_cast<int>(std::max<std::size_t>(1, docs.size()))));
  {
    std::vector<std::jthread> pool;
    for (int t = 1; t < k; ++t) pool.emplace_back(worker);
    worker();
  }
  return rows;
}

// Expands a sweep document {"base": {...}, "runs": [{...}, ...]} into one
// config per run; each run is merge-patched onto the base.
inline std::vector<json> expand_sweep(const json& doc) {
  if (!doc.is_object()) throw Error(ErrorKind::Parse, "expected an object at /");
  for (auto it = doc.begin(); it != doc.end(); ++it)
    if (it.key() != "base" && it.key() != "runs")
      throw Error(ErrorKind::Parse, "unknown key \"" + it.key() + "\" at /" + detail::pointer_escape(it.key()));
  if (!doc.contains("runs") || !doc.at("runs").is_array())
    throw Error(ErrorKind::Parse, "expected an array at /runs");
  json base = doc.value("base", json::object());
  if (!base.is_object()) throw Error(ErrorKind::Parse, "expected an object at /base");
  std::vector<json> out;
  for (const auto& run : doc.at("runs")) {
    json merged = base;
    merged.merge_patch(run);
    out.push_back(std::move(merged));
  }
  return out;
}

}  // namespace flobloch
