#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <optional>
#include <sstream>
#include <string_view>
#include <variant>
#include <vector>

#include "flobloch/action_angle.hpp"
#include "flobloch/error.hpp"
#include "flobloch/fft.hpp"

namespace flobloch {

// Fourier coefficients V_l of V(x(Θ)) along the reference orbit, l in [-l_max, l_max].
struct FourierSpectrum {
  int l_max = 0;
  std::vector<cplx> coefficients;  // index l + l_max
  std::size_t nodes = 0;           // quadrature nodes of the accepted estimate
  double aliasing_estimate = 0.0;  // max |V_l(N) - V_l(N/2)|

  cplx operator[](int l) const {
    if (l < -l_max || l > l_max) return {0.0, 0.0};
    return coefficients[static_cast<std::size_t>(l + l_max)];
  }
  double max_magnitude() const {
    double m = 0.0;
    for (const auto& c : coefficients) m = std::max(m, std::abs(c));
    return m;
  }
};

namespace detail {

inline std::vector<cplx> orbit_coefficients(const ActionAngleMap& map,
                                            const std::function<double(double)>& V,
                                            std::size_t nodes, int l_max) {
  std::vector<cplx> samples(nodes);
  for (std::size_t j = 0; j < nodes; ++j) {
    const double theta = two_pi * static_cast<double>(j) / static_cast<double>(nodes);
    const double v = V(map.from_angle(theta).x);
    if (!std::isfinite(v))
      throw Error(ErrorKind::Domain, "drive profile is not finite on the orbit");
    samples[j] = v;
  }
  Fft fft(nodes);
  fft.forward(samples);
  std::vector<cplx> out(static_cast<std::size_t>(2 * l_max + 1));
  const double inv = 1.0 / static_cast<double>(nodes);
  for (int l = -l_max; l <= l_max; ++l) {
    const std::size_t bin = l >= 0 ? static_cast<std::size_t>(l)
                                   : nodes - static_cast<std::size_t>(-l);
    out[static_cast<std::size_t>(l + l_max)] = samples[bin] * inv;
  }
  return out;
}

}  // namespace detail

// Periodic-trapezoid Fourier analysis of V along the orbit. The node count
// starts at 64*l_max (power of two) and doubles until successive estimates
// agree to 1e-8 of the largest coefficient.
inline FourierSpectrum trajectory_fourier_components(const ActionAngleMap& map,
                                                     const std::function<double(double)>& V,
                                                     int l_max,
                                                     std::size_t max_nodes = std::size_t{1} << 22) {
  if (l_max < 1) throw Error(ErrorKind::Parameter, "l_max must be >= 1");
  std::size_t nodes = 64;
  while (nodes < 64 * static_cast<std::size_t>(l_max)) nodes <<= 1;

  auto coarse = detail::orbit_coefficients(map, V, nodes, l_max);
  while (true) {
    const std::size_t fine_nodes = nodes << 1;
    if (fine_nodes > max_nodes) break;
    auto fine = detail::orbit_coefficients(map, V, fine_nodes, l_max);
    double diff = 0.0, peak = 0.0;
    for (std::size_t i = 0; i < fine.size(); ++i) {
      diff = std::max(diff, std::abs(fine[i] - coarse[i]));
      peak = std::max(peak, std::abs(fine[i]));
    }
    if (diff <= 1e-8 * peak || peak == 0.0) {
      FourierSpectrum s;
      s.l_max = l_max;
      s.coefficients = std::move(fine);
      s.nodes = fine_nodes;
      s.aliasing_estimate = diff;
      return s;
    }
    coarse = std::move(fine);
    nodes = fine_nodes;
  }
  std::ostringstream msg;
  msg << "orbit Fourier coefficients not converged to 1e-8 within " << max_nodes << " nodes";
  throw Error(ErrorKind::Resolution, msg.str());
}

// Weak single-frequency perturbation V(x) cos(ωt), resonant at ω = nΩ.
struct DriveSpec {
  int n = 1;
  std::optional<double> omega;                // checked against n*Omega when present
  std::optional<double> V_n;                  // direct lattice amplitude
  std::function<double(double)> profile;      // V(x), used when V_n is absent
  int l_max = 0;                              // 0 selects 8n

  static DriveSpec direct(int n, double V_n) {
    DriveSpec d;
    d.n = n;
    d.V_n = V_n;
    return d;
  }
  static DriveSpec sampled(int n, std::function<double(double)> V) {
    DriveSpec d;
    d.n = n;
    d.profile = std::move(V);
    return d;
  }
};

// V(x) = amplitude * cos(n Θ(x)): its orbit spectrum is the single harmonic
// n with V_n = amplitude/2, so nothing else in the drive is off-resonant.
inline std::function<double(double)> harmonic_drive_profile(const ActionAngleMap& map, int n,
                                                            double amplitude) {
  return [map, n, amplitude](double x) {
    return amplitude * std::cos(static_cast<double>(n) * map.reflection_angle(x));
  };
}

// Secular phase-lattice Hamiltonian H = P²/2M + V_n cos nϑ + fϑ.
struct ReducedModel {
  double M = 1.0;
  int n = 1;
  double V_n = 0.0;
  double f = 0.0;
  double hbar = 1.0;
  double phase = 0.0;  // arg of the complex orbit coefficient absorbed into the ϑ origin

  void validate() const {
    if (n < 1) throw Error(ErrorKind::Parameter, "lattice harmonic n must be >= 1");
    if (!(hbar > 0.0)) throw Error(ErrorKind::Parameter, "hbar must be positive");
    if (M == 0.0 || !std::isfinite(M)) throw Error(ErrorKind::Parameter, "M must be finite and nonzero");
    if (!std::isfinite(V_n) || !std::isfinite(f))
      throw Error(ErrorKind::Parameter, "V_n and f must be finite");
  }

  // ħ²n²/(2|M|)
  double recoil_energy() const {
    return hbar * hbar * static_cast<double>(n) * static_cast<double>(n) / (2.0 * std::abs(M));
  }
  // n sqrt(|V_n|/|M|), small-oscillation frequency at a lattice minimum.
  double harmonic_frequency() const {
    return static_cast<double>(n) * std::sqrt(std::abs(V_n) / std::abs(M));
  }
  // T_B = ħn/|f|; infinite when f = 0.
  double bloch_period() const {
    if (f == 0.0) return std::numeric_limits<double>::infinity();
    return hbar * static_cast<double>(n) / std::abs(f);
  }
};

inline ReducedModel secular_reduce(const ActionAngleMap& map, const DriveSpec& drive,
                                   double hbar = 1.0) {
  if (drive.n < 1) throw Error(ErrorKind::Parameter, "drive harmonic n must be >= 1");
  const double resonant = static_cast<double>(drive.n) * map.Omega();
  if (drive.omega && std::abs(*drive.omega - resonant) > 1e-9 * resonant) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "drive frequency " << *drive.omega << " is not n*Omega = " << resonant;
    throw Error(ErrorKind::Resonance, msg.str());
  }

  ReducedModel model;
  model.M = map.angle_mass();
  model.n = drive.n;
  model.hbar = hbar;

  if (drive.V_n) {
    model.V_n = std::abs(*drive.V_n);
    model.phase = *drive.V_n < 0 ? pi : 0.0;
  } else {
    if (!drive.profile) throw Error(ErrorKind::Parameter, "drive needs V_n or a profile");
    const int l_max = drive.l_max > 0 ? std::max(drive.l_max, drive.n) : 8 * drive.n;
    const FourierSpectrum spec = trajectory_fourier_components(map, drive.profile, l_max);
    const cplx vn = spec[drive.n];
    double scale = 0.0;
    for (int l = 1; l <= l_max; ++l) scale = std::max(scale, std::abs(spec[l]));
    if (!(std::abs(vn) > 1e-12 * std::max(scale, 1e-300))) {
      std::ostringstream msg;
      msg << "orbit coefficient V_" << drive.n << " = " << std::abs(vn)
          << " vanishes; the drive opens no lattice at this harmonic";
      throw Error(ErrorKind::DegenerateLattice, msg.str());
    }
    model.V_n = std::abs(vn);
    model.phase = std::arg(vn);
  }
  model.validate();
  return model;
}

// ---------------------------------------------------------------------------
// Probes

struct ForceMeter {
  double F0 = 0.0;
  double tau = 0.0;
};
struct Tachometer {
  double w_z = 0.0;
  double y0 = 0.0;
  double tau = 0.0;
};
struct Magnetometer {
  double B_z = 0.0;
  double Q = 0.0;
  double y0 = 0.0;
  double tau = 0.0;
};
struct SingularAmplitude {
  double a = 0.0;
  double b = 0.0;
  double tau = 0.0;
};

using Instrument = std::variant<ForceMeter, Tachometer, Magnetometer, SingularAmplitude>;

inline std::string_view instrument_name(const Instrument& inst) {
  constexpr std::string_view names[] = {"force_meter", "tachometer", "magnetometer",
                                        "singular_amplitude"};
  return names[inst.index()];
}

inline double instrument_tau(const Instrument& inst) {
  return std::visit([](const auto& i) { return i.tau; }, inst);
}

// Kick train of period T_D (= 2π/Ω) carrying one instrument.
struct ProbeSpec {
  Instrument instrument;
  double T_D = 0.0;
};

inline ProbeSpec make_probe(const Instrument& inst, const ActionAngleMap& map) {
  return ProbeSpec{inst, map.period()};
}

// Leading O(τ/T_D) correction of replacing square pulses by a Dirac comb.
inline double pulse_width_ratio(const ProbeSpec& probe) {
  return instrument_tau(probe.instrument) / probe.T_D;
}

inline WellKind required_well(const Instrument& inst) {
  switch (inst.index()) {
    case 0: return WellKind::InfiniteSquare;
    case 3: return WellKind::QuarticBottom;
    default: return WellKind::Triangular;
  }
}

inline void validate_probe(const ProbeSpec& probe, const ActionAngleMap& map) {
  const double tau = instrument_tau(probe.instrument);
  if (!(tau > 0.0)) throw Error(ErrorKind::Parameter, "pulse duration tau must be positive");
  if (std::abs(probe.T_D - map.period()) > 1e-9 * map.period()) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "kick spacing T_D = " << probe.T_D << " must equal 2pi/Omega = " << map.period();
    throw Error(ErrorKind::Validation, msg.str());
  }
  if (tau > probe.T_D / 10.0 * (1.0 + 1e-12)) {
    std::ostringstream msg;
    msg << "comb approximation needs tau <= T_D/10 = " << probe.T_D / 10.0 << ", got tau = " << tau;
    throw Error(ErrorKind::Validation, msg.str());
  }
  if (required_well(probe.instrument) != map.kind()) {
    std::ostringstream msg;
    msg << instrument_name(probe.instrument) << " needs a " << to_string(required_well(probe.instrument))
        << " well, got " << to_string(map.kind());
    throw Error(ErrorKind::Configuration, msg.str());
  }
  if (const auto* s = std::get_if<SingularAmplitude>(&probe.instrument)) {
    if (std::abs(s->b - map.well().b) > 1e-12 * map.well().b)
      throw Error(ErrorKind::Configuration, "singular-amplitude b must match the quartic well's b");
  }
}

// Effective Floquet-Bloch force f of a kick train (signed).
inline double probe_to_force(const ProbeSpec& probe, const ActionAngleMap& map) {
  validate_probe(probe, map);
  const WellSpec& w = map.well();
  struct Visitor {
    const WellSpec& w;
    const ActionAngleMap& map;
    double T_D;
    double operator()(const ForceMeter& p) const { return w.L * p.F0 * p.tau / (pi * T_D); }
    double operator()(const Tachometer& p) const { return -p.w_z * w.eta * p.y0 * p.tau / pi; }
    double operator()(const Magnetometer& p) const {
      return -p.Q * p.B_z * w.eta * p.y0 * p.tau / (two_pi * w.m);
    }
    double operator()(const SingularAmplitude& p) const {
      return p.a * p.tau * map.Omega() / (two_pi * p.b);
    }
  };
  return std::visit(Visitor{w, map, probe.T_D}, probe.instrument);
}

// Translation of x produced by one rotation (or Larmor) kick. The y p_x term
// moves x by w y0 τ; over a rectangular y pulse the -w p_y x term contributes
// an equal shift through the impulses of p_y at the pulse edges.
struct TranslationKick {
  double from_y_px = 0.0;
  double from_py_x = 0.0;
  double total() const { return from_y_px + from_py_x; }
  // Size of the p_y x contribution relative to the y p_x one.
  double cross_term_ratio() const { return from_y_px == 0.0 ? 0.0 : from_py_x / from_y_px; }
};

inline TranslationKick translation_per_kick(const Instrument& inst, double m) {
  double w = 0.0, y0 = 0.0, tau = 0.0;
  if (const auto* t = std::get_if<Tachometer>(&inst)) {
    w = t->w_z;
    y0 = t->y0;
    tau = t->tau;
  } else if (const auto* g = std::get_if<Magnetometer>(&inst)) {
    w = g->Q * g->B_z / (2.0 * m);
    y0 = g->y0;
    tau = g->tau;
  } else {
    throw Error(ErrorKind::Configuration, "translation kicks exist only for rotation/magnetic probes");
  }
  return TranslationKick{w * y0 * tau, w * y0 * tau};
}

// Doubly truncated Fourier form of Θ·Σ_l T_D δ(t - l T_D):
//   [π - Σ_{k<=K} 2 sin(kΘ)/k] · Σ_{|l|<=K} e^{i l Ω t}.
// With `centered` the π offset is dropped, giving the (Θ - π) probe.
inline double comb_partial_sum(double Theta, double t, int K, double Omega, bool centered = false) {
  if (K < 1) throw Error(ErrorKind::Parameter, "K must be >= 1");
  double saw = centered ? 0.0 : pi;
  double comb = 1.0;
  for (int k = 1; k <= K; ++k) {
    saw -= 2.0 * std::sin(k * Theta) / k;
    comb += 2.0 * std::cos(k * Omega * t);
  }
  return saw * comb;
}

}  // namespace flobloch
