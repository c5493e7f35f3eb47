#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <vector>

#include "flobloch/action_angle.hpp"
#include "flobloch/effective_model.hpp"
#include "flobloch/error.hpp"
#include "flobloch/fft.hpp"
#include "flobloch/tridiagonal.hpp"

namespace flobloch {

enum class LineDomain { SquareWellOddExtension, HalfLineDirichlet };

// Wavefunction on a uniform grid.
//  SquareWellOddExtension: x_j = -L + j dx on the circle [-L, L), dx = 2L/N;
//    physical amplitudes on [0, L] are sqrt(2) times these.
//  HalfLineDirichlet: x_j = j dx, j = 0..N-1, with ψ_0 = ψ_{N-1} = 0.
// Normalization Σ|ψ|² dx = 1 in both cases.
struct LineState {
  LineDomain domain = LineDomain::SquareWellOddExtension;
  double hbar = 1.0;
  double m = 1.0;
  double L = 1.0;     // square well width (half circumference)
  double eta = 0.0;   // triangular slope
  double dx = 0.0;
  double t = 0.0;
  std::vector<cplx> amps;

  std::size_t size() const noexcept { return amps.size(); }
  double x(std::size_t j) const {
    return domain == LineDomain::SquareWellOddExtension ? -L + dx * static_cast<double>(j)
                                                        : dx * static_cast<double>(j);
  }
  double norm() const {
    double s = 0.0;
    for (const auto& a : amps) s += std::norm(a);
    return s * dx;
  }
};

enum class KickShape { DiracPhase, SquarePulse };
enum class KickLaw { OppositeToMotion, TranslationKick, InverseXKick };

// Kicks at t = l T_D, l >= 1. `strength` is the impulse F0 τ for
// OppositeToMotion and the displacement per kick for TranslationKick.
struct KickSchedule {
  double T_D = 0.0;
  double tau = 0.0;
  KickShape shape = KickShape::DiracPhase;
  KickLaw law = KickLaw::OppositeToMotion;
  double strength = 0.0;

  void validate() const {
    if (!(T_D > 0)) throw Error(ErrorKind::Parameter, "kick spacing T_D must be positive");
    if (!(tau > 0)) throw Error(ErrorKind::Parameter, "kick duration tau must be positive");
    if (tau > T_D / 10.0 * (1.0 + 1e-12))
      throw Error(ErrorKind::Validation, "kick duration tau must not exceed T_D/10");
    if (law == KickLaw::InverseXKick)
      throw Error(ErrorKind::Configuration, "inverse-x kicks are simulated at the reduced level only");
  }
};

struct PhysicalObservables {
  double mean_x = 0.0;
  double mean_p = 0.0;
  double energy = 0.0;  // ⟨H0⟩, no drive, no probe
};

struct PhysicalLog {
  double dt = 0.0;
  std::vector<double> times, mean_x, mean_p, energy, norm;
  // sampled once per kick period, immediately before each kick
  std::vector<double> strobe_times, strobe_x, strobe_p;
  double symmetry_error = 0.0;
  double tail_norm = 0.0;
  double norm_drift = 0.0;
  double kick_leakage = 0.0;  // norm removed by the wall projection after kicks (renormalized)
};

// Time-dependent drive V(x) cos(ω t).
struct PhysicalDrive {
  std::function<double(double)> profile;  // V(x) on the physical domain
  double omega = 0.0;
  bool active() const { return static_cast<bool>(profile); }
};

struct PhysicalRunOptions {
  int steps_per_period = 0;  // steps per kick period T_D
  double t_end = 0.0;
  int log_every = 0;         // 0: only stroboscopic samples
  std::optional<KickSchedule> kicks;
  double norm_tolerance = 1e-8;
};

namespace detail {

inline double kinetic_energy_spectral(const LineState& s, const Fft& fft, std::vector<cplx>& work) {
  const std::size_t N = s.size();
  work.assign(s.amps.begin(), s.amps.end());
  fft.forward(work);
  double e = 0.0, w = 0.0;
  for (std::size_t j = 0; j < N; ++j) {
    const double k = pi / s.L * static_cast<double>(fft_wavenumber(j, N));
    e += std::norm(work[j]) * s.hbar * s.hbar * k * k / (2.0 * s.m);
    w += std::norm(work[j]);
  }
  return e / w;
}

inline double square_symmetry_error(const LineState& s) {
  const std::size_t N = s.size();
  double worst = std::max(std::abs(s.amps[0]), std::abs(s.amps[N / 2]));
  double peak = 0.0;
  for (std::size_t j = 1; j < N; ++j) {
    worst = std::max(worst, std::abs(s.amps[j] + s.amps[N - j]));
    peak = std::max(peak, std::abs(s.amps[j]));
  }
  return worst / std::max(peak, 1e-300);
}

}  // namespace detail

// ⟨x⟩ by quadrature, ⟨p⟩ from the momentum representation, ⟨H0⟩.
inline PhysicalObservables physical_observables(const LineState& s) {
  const std::size_t N = s.size();
  PhysicalObservables o;
  const double nrm = s.norm();
  if (s.domain == LineDomain::SquareWellOddExtension) {
    const Fft fft(N);
    std::vector<cplx> spec(s.amps.begin(), s.amps.end());
    fft.forward(spec);
    double xsum = 0.0;
    for (std::size_t j = 0; j < N; ++j) xsum += std::abs(s.x(j)) * std::norm(s.amps[j]);
    o.mean_x = xsum * s.dx / nrm;
    // p on [0, L]: 2 Re ∫_0^L ψ* (-iħ ψ') dx with ψ' from the spectrum
    std::vector<cplx> dpsi(N);
    for (std::size_t j = 0; j < N; ++j) {
      const double k = pi / s.L * static_cast<double>(fft_wavenumber(j, N));
      dpsi[j] = spec[j] * cplx{0.0, k} / static_cast<double>(N);
    }
    fft.backward(dpsi);
    double p = 0.0;
    for (std::size_t j = N / 2; j < N; ++j) {
      const double w = (j == N / 2) ? 0.5 : 1.0;  // trapezoid end at x = 0
      p += w * (std::conj(s.amps[j]) * cplx{0.0, -s.hbar} * dpsi[j]).real();
    }
    // the x = L end is node 0 and carries ψ = 0
    o.mean_p = 2.0 * p * s.dx / nrm;
    std::vector<cplx> work;
    o.energy = detail::kinetic_energy_spectral(s, fft, work);
  } else {
    double xsum = 0.0, psum = 0.0, kin = 0.0, pot = 0.0;
    const double c = s.hbar * s.hbar / (2.0 * s.m * s.dx * s.dx);
    for (std::size_t j = 1; j + 1 < N; ++j) {
      const double w = std::norm(s.amps[j]);
      xsum += s.x(j) * w;
      pot += s.eta * s.x(j) * w;
      const cplx d = (s.amps[j + 1] - s.amps[j - 1]) / (2.0 * s.dx);
      psum += (std::conj(s.amps[j]) * cplx{0.0, -s.hbar} * d).real();
      kin += (std::conj(s.amps[j]) * c * (2.0 * s.amps[j] - s.amps[j + 1] - s.amps[j - 1])).real();
    }
    o.mean_x = xsum * s.dx / nrm;
    o.mean_p = psum * s.dx / nrm;
    o.energy = (kin + pot) * s.dx / nrm;
  }
  return o;
}

// ---------------------------------------------------------------------------
// State preparation

// Square-well eigenstate sin(q π x / L), q >= 1, on the odd extension.
inline LineState square_eigenstate(double hbar, double m, double L, int q, std::size_t N) {
  if (q < 1) throw Error(ErrorKind::Parameter, "eigenstate index must be >= 1");
  if (!is_power_of_two(N) || static_cast<std::size_t>(q) >= N / 2)
    throw Error(ErrorKind::Resolution, "grid cannot represent the requested eigenstate");
  LineState s;
  s.domain = LineDomain::SquareWellOddExtension;
  s.hbar = hbar;
  s.m = m;
  s.L = L;
  s.dx = 2.0 * L / static_cast<double>(N);
  s.amps.resize(N);
  for (std::size_t j = 0; j < N; ++j) s.amps[j] = std::sin(q * pi * s.x(j) / L);
  const double sc = 1.0 / std::sqrt(s.norm());
  for (auto& a : s.amps) a *= sc;
  return s;
}

// Gaussian packet at x0 in (0, L) with momentum +p0 = sqrt(2 m E0) (or -p0
// when `moving_right` is false), odd-extended. Rejects packets whose energy
// mean or spread departs from E0 by more than 10%.
inline LineState square_packet(double hbar, double m, double L, double E0, double x0, double sigma_x,
                               std::size_t N, bool moving_right = true) {
  if (!is_power_of_two(N)) throw Error(ErrorKind::Parameter, "N must be a power of two");
  if (!(x0 > 0 && x0 < L) || !(sigma_x > 0)) throw Error(ErrorKind::Preparation, "packet must sit inside the well");
  const double p0 = (moving_right ? 1.0 : -1.0) * std::sqrt(2.0 * m * E0);
  LineState s;
  s.domain = LineDomain::SquareWellOddExtension;
  s.hbar = hbar;
  s.m = m;
  s.L = L;
  s.dx = 2.0 * L / static_cast<double>(N);
  s.amps.assign(N, cplx{0.0, 0.0});
  auto g = [&](double x) {
    cplx v{0.0, 0.0};
    for (int img = -1; img <= 1; ++img) {
      const double d = x + 2.0 * L * img - x0;
      v += std::exp(-d * d / (4.0 * sigma_x * sigma_x)) * std::polar(1.0, p0 * d / hbar);
    }
    return v;
  };
  for (std::size_t j = 0; j < N; ++j) s.amps[j] = g(s.x(j)) - g(-s.x(j));
  s.amps[0] = 0.0;
  s.amps[N / 2] = 0.0;
  const double sc = 1.0 / std::sqrt(s.norm());
  for (auto& a : s.amps) a *= sc;

  const Fft fft(N);
  std::vector<cplx> spec(s.amps.begin(), s.amps.end());
  fft.forward(spec);
  double e1 = 0.0, e2 = 0.0, w = 0.0;
  for (std::size_t j = 0; j < N; ++j) {
    const double k = pi / L * static_cast<double>(fft_wavenumber(j, N));
    const double e = hbar * hbar * k * k / (2.0 * m);
    e1 += std::norm(spec[j]) * e;
    e2 += std::norm(spec[j]) * e * e;
    w += std::norm(spec[j]);
  }
  e1 /= w;
  const double spread = std::sqrt(std::max(0.0, e2 / w - e1 * e1));
  if (std::abs(e1 - E0) > 0.1 * E0 || spread > 0.1 * E0) {
    std::ostringstream msg;
    msg << "packet energy " << e1 << " +/- " << spread << " is not within 10% of E0 = " << E0;
    throw Error(ErrorKind::Preparation, msg.str());
  }
  return s;
}

// Half-line grid from 0 to x_max with N nodes (walls included).
inline LineState triangular_packet(double hbar, double m, double eta, double E0, double sigma_x, double dx,
                                   double x_max) {
  // Centred so the mean energy (potential plus the packet's zero-point
  // kinetic term) equals E0.
  const double xt = (E0 - hbar * hbar / (8.0 * m * sigma_x * sigma_x)) / eta;
  if (!(sigma_x > 0) || !(dx > 0) || !(x_max > xt)) throw Error(ErrorKind::Preparation, "bad packet or grid");
  LineState s;
  s.domain = LineDomain::HalfLineDirichlet;
  s.hbar = hbar;
  s.m = m;
  s.eta = eta;
  s.dx = dx;
  const std::size_t N = static_cast<std::size_t>(std::llround(x_max / dx)) + 1;
  s.amps.assign(N, cplx{0.0, 0.0});
  for (std::size_t j = 1; j + 1 < N; ++j) {
    const double d = s.x(j) - xt;
    s.amps[j] = std::exp(-d * d / (4.0 * sigma_x * sigma_x));
  }
  const double sc = 1.0 / std::sqrt(s.norm());
  for (auto& a : s.amps) a *= sc;
  const auto o = physical_observables(s);
  if (std::abs(o.energy - E0) > 0.1 * E0) {
    std::ostringstream msg;
    msg << "packet energy " << o.energy << " is not within 10% of E0 = " << E0;
    throw Error(ErrorKind::Preparation, msg.str());
  }
  if (std::abs(s.amps[1]) > 1e-6 || std::abs(s.amps[N - 2]) > 1e-6)
    throw Error(ErrorKind::Preparation, "packet overlaps a hard wall");
  return s;
}

// Triangular-well packet built in action space: eigenstates of the
// discretised (Numerov) Hamiltonian near E0, Gaussian weights of width
// sigma_P (in ħ) and relative phases that place the packet at angle Theta0.
// Levels are found by Rayleigh-quotient inverse iteration from the WKB
// estimates J(E_k) = 2πħ(k + 3/4).
inline LineState triangular_action_packet(double hbar, double m, double eta, double E0, double sigma_P,
                                          double Theta0, double dx, double x_max) {
  const double xt = E0 / eta;
  if (!(sigma_P > 0) || !(dx > 0) || !(x_max > xt)) throw Error(ErrorKind::Preparation, "bad packet or grid");
  LineState s;
  s.domain = LineDomain::HalfLineDirichlet;
  s.hbar = hbar;
  s.m = m;
  s.eta = eta;
  s.dx = dx;
  const std::size_t N = static_cast<std::size_t>(std::llround(x_max / dx)) + 1;
  const std::size_t n_in = N - 2;
  s.amps.assign(N, cplx{0.0, 0.0});

  const double c_off = -hbar * hbar / (2.0 * m * dx * dx);
  std::vector<double> hd(n_in), ho(n_in, 0.0);  // ho[i] couples i and i+1
  for (std::size_t i = 0; i < n_in; ++i) {
    const double v = eta * s.x(i + 1);
    hd[i] = -2.0 * c_off + 10.0 / 12.0 * v;
    if (i + 1 < n_in) ho[i] = c_off + (v + eta * s.x(i + 2)) / 24.0;
  }
  auto apply_B = [&](const std::vector<cplx>& x, std::vector<cplx>& y) {
    for (std::size_t i = 0; i < n_in; ++i) {
      cplx acc = 10.0 / 12.0 * x[i];
      if (i > 0) acc += x[i - 1] / 12.0;
      if (i + 1 < n_in) acc += x[i + 1] / 12.0;
      y[i] = acc;
    }
  };
  auto apply_H = [&](const std::vector<cplx>& x, std::vector<cplx>& y) {
    for (std::size_t i = 0; i < n_in; ++i) {
      cplx acc = hd[i] * x[i];
      if (i > 0) acc += ho[i - 1] * x[i - 1];
      if (i + 1 < n_in) acc += ho[i] * x[i + 1];
      y[i] = acc;
    }
  };
  auto dot = [&](const std::vector<cplx>& a, const std::vector<cplx>& b) {
    cplx acc{0.0, 0.0};
    for (std::size_t i = 0; i < n_in; ++i) acc += std::conj(a[i]) * b[i];
    return acc;
  };

  // WKB levels: J(E) = (4/3) √(2m) E^{3/2} / η.
  const double J_of_E0 = 4.0 / 3.0 * std::sqrt(2.0 * m) * std::pow(E0, 1.5) / eta;
  const long k0 = std::lround(J_of_E0 / (two_pi * hbar) - 0.75);
  const long spread = static_cast<long>(std::ceil(5.0 * sigma_P));
  if (k0 - spread < 0) throw Error(ErrorKind::Preparation, "action packet reaches the ground state");
  const std::size_t probe = std::min(n_in - 1, static_cast<std::size_t>(std::llround(
                                                    (xt + std::cbrt(hbar * hbar / (2.0 * m * eta))) / dx)));
  const double Omega0 = eta * pi / std::sqrt(2.0 * m * E0);

  std::vector<cplx> x(n_in), y(n_in), bx(n_in), hx(n_in);
  std::vector<cplx> lo(n_in), di(n_in), up(n_in);
  for (long k = k0 - spread; k <= k0 + spread; ++k) {
    const double Ek = std::pow(0.75 * two_pi * hbar * (static_cast<double>(k) + 0.75) * eta / std::sqrt(2.0 * m), 2.0 / 3.0);
    double sigma = Ek;
    for (std::size_t i = 0; i < n_in; ++i) x[i] = 1.0;
    double lambda = sigma;
    for (int it = 0; it < 8; ++it) {
      for (std::size_t i = 0; i < n_in; ++i) {
        di[i] = hd[i] - sigma * 10.0 / 12.0;
        lo[i] = i > 0 ? ho[i - 1] - sigma / 12.0 : 0.0;
        up[i] = i + 1 < n_in ? ho[i] - sigma / 12.0 : 0.0;
      }
      apply_B(x, bx);
      TridiagonalLU(lo, di, up).solve(bx);
      x = bx;
      apply_B(x, bx);
      const double nb = std::sqrt(std::real(dot(x, bx)));
      for (auto& v : x) v /= nb;
      apply_H(x, hx);
      apply_B(x, bx);
      lambda = std::real(dot(x, hx)) / std::real(dot(x, bx));
      if (std::abs(lambda - sigma) < 1e-13 * std::abs(lambda)) break;
      // Stay in the basin of level k: move the shift only while it is close.
      if (std::abs(lambda - Ek) < 0.25 * hbar * Omega0) sigma = lambda;
    }
    if (std::abs(lambda - Ek) > 0.25 * hbar * Omega0)
      throw Error(ErrorKind::Preparation, "inverse iteration converged to a neighbouring level");
    const double sign = std::real(x[probe]) >= 0 ? 1.0 : -1.0;
    const double d = static_cast<double>(k - k0);
    const cplx w = sign * std::exp(-d * d / (4.0 * sigma_P * sigma_P)) * std::polar(1.0, -d * (Theta0 - pi));
    for (std::size_t i = 0; i < n_in; ++i) s.amps[i + 1] += w * x[i];
  }
  const double sc = 1.0 / std::sqrt(s.norm());
  for (auto& a : s.amps) a *= sc;
  if (std::abs(s.amps[N - 2]) > 1e-6) throw Error(ErrorKind::Preparation, "packet overlaps the far wall");
  return s;
}

namespace detail {

inline void check_steps(const PhysicalRunOptions& opt, double T_D, double t0, long& steps, double& dt, long& base) {
  if (opt.steps_per_period < 1) throw Error(ErrorKind::Parameter, "steps_per_period must be >= 1");
  dt = T_D / opt.steps_per_period;
  const double span = opt.t_end - t0;
  if (!(span >= 0)) throw Error(ErrorKind::Parameter, "t_end precedes the state time");
  steps = std::lround(span / dt);
  if (std::abs(static_cast<double>(steps) * dt - span) > 1e-9 * std::max(span, dt))
    throw Error(ErrorKind::Parameter, "t_end must be a whole number of steps");
  // Kick and strobe phases are counted from t = 0.
  base = std::lround(t0 / dt);
  if (std::abs(static_cast<double>(base) * dt - t0) > 1e-9 * std::max(std::abs(t0), dt))
    throw Error(ErrorKind::Parameter, "state time must be a whole number of steps");
}

struct PulsePlan {
  long per_period = 0;
  long pulse_steps = 0;  // SquarePulse only
};

inline PulsePlan plan_pulses(const std::optional<KickSchedule>& k, int steps_per_period, double dt) {
  PulsePlan p;
  p.per_period = steps_per_period;
  if (k && k->shape == KickShape::SquarePulse) {
    p.pulse_steps = std::lround(k->tau / dt);
    if (p.pulse_steps < 1 || std::abs(static_cast<double>(p.pulse_steps) * dt - k->tau) > 1e-6 * k->tau)
      throw Error(ErrorKind::Kick, "square pulse duration must be a whole number of steps");
  }
  return p;
}

// Fraction of the kick to apply after step s (0-based, ending at (s+1) dt).
inline double kick_fraction(const std::optional<KickSchedule>& k, const PulsePlan& p, long s) {
  if (!k) return 0.0;
  if (k->shape == KickShape::DiracPhase) return ((s + 1) % p.per_period == 0) ? 1.0 : 0.0;
  // pulse l occupies steps [l P, l P + pulse_steps), l >= 1
  const long phase = s % p.per_period;
  return (s >= p.per_period && phase < p.pulse_steps) ? 1.0 / static_cast<double>(p.pulse_steps) : 0.0;
}

inline bool strobe_point(const std::optional<KickSchedule>& k, long s, long per_period) {
  (void)k;
  return (s + 1) % per_period == 0;
}

}  // namespace detail

// Spectral split-step for the square well on its odd extension:
// kinetic half step, drive phase over the whole step, kinetic half step.
// The sign(p) F0 x kick shifts positive and negative wavenumbers in
// opposite directions; for an impulse that is a multiple of πħ/L this is an
// exact index shift.
inline PhysicalLog evolve_square_well(LineState& s, const PhysicalDrive& drive, const PhysicalRunOptions& opt,
                                      double T_D) {
  if (s.domain != LineDomain::SquareWellOddExtension) throw Error(ErrorKind::Parameter, "state is not a square-well state");
  const std::size_t N = s.size();
  if (!is_power_of_two(N)) throw Error(ErrorKind::Parameter, "grid size must be a power of two");
  if (opt.kicks) {
    opt.kicks->validate();
    if (opt.kicks->law != KickLaw::OppositeToMotion)
      throw Error(ErrorKind::Configuration, "square-well kicks oppose the motion");
    if (std::abs(opt.kicks->T_D - T_D) > 1e-12 * T_D) throw Error(ErrorKind::Kick, "kick spacing differs from T_D");
  }
  long steps = 0;
  double dt = 0.0;
  long base = 0;
  detail::check_steps(opt, T_D, s.t, steps, dt, base);
  const auto plan = detail::plan_pulses(opt.kicks, opt.steps_per_period, dt);

  const Fft fft(N);
  const double invN = 1.0 / static_cast<double>(N);
  std::vector<double> kv(N), Vx(N, 0.0);
  std::vector<cplx> khalf(N), kfull(N);
  for (std::size_t j = 0; j < N; ++j) {
    kv[j] = pi / s.L * static_cast<double>(fft_wavenumber(j, N));
    const double ph = -s.hbar * kv[j] * kv[j] / (2.0 * s.m) * dt;
    khalf[j] = std::polar(1.0, 0.5 * ph);
    kfull[j] = std::polar(1.0, ph);
    if (drive.active()) Vx[j] = drive.profile(std::abs(s.x(j)));
  }
  std::vector<cplx> plus(N), minus(N), phase_plus(N), phase_minus(N);
  auto set_kick_phase = [&](double impulse) {
    const double kappa = impulse / s.hbar;
    for (std::size_t j = 0; j < N; ++j) {
      phase_plus[j] = std::polar(invN, -kappa * s.x(j));
      phase_minus[j] = std::polar(invN, kappa * s.x(j));
    }
  };
  double current_impulse = std::numeric_limits<double>::quiet_NaN();

  PhysicalLog log;
  log.dt = dt;
  auto& psi = s.amps;
  std::vector<cplx> xs(N);
  auto record = [&](bool full_sample, bool strobe) {
    // psi holds the spectrum here
    xs = psi;
    fft.backward(xs);
    for (auto& v : xs) v *= invN;
    LineState view = s;
    view.amps = xs;
    log.symmetry_error = std::max(log.symmetry_error, detail::square_symmetry_error(view));
    if (log.symmetry_error > 1e-8) {
      std::ostringstream msg;
      msg << "odd symmetry broken by " << log.symmetry_error << " at t = " << s.t;
      throw Error(ErrorKind::Symmetry, msg.str());
    }
    const auto o = physical_observables(view);
    const double nrm = view.norm();
    log.norm_drift = std::max(log.norm_drift, std::abs(1.0 - nrm));
    if (log.norm_drift > opt.norm_tolerance) {
      std::ostringstream msg;
      msg << "norm drifted by " << log.norm_drift << " at t = " << s.t;
      throw Error(ErrorKind::Stability, msg.str());
    }
    if (full_sample) {
      log.times.push_back(s.t);
      log.mean_x.push_back(o.mean_x);
      log.mean_p.push_back(o.mean_p);
      log.energy.push_back(o.energy);
      log.norm.push_back(nrm);
    }
    if (strobe) {
      log.strobe_times.push_back(s.t);
      log.strobe_x.push_back(o.mean_x);
      log.strobe_p.push_back(o.mean_p);
    }
  };
  auto kick = [&](double fraction) {
    const double impulse = opt.kicks->strength * fraction;
    if (impulse != current_impulse) {
      set_kick_phase(impulse);
      current_impulse = impulse;
    }
    for (std::size_t j = 0; j < N; ++j) {
      plus[j] = kv[j] > 0 ? psi[j] : cplx{0.0, 0.0};
      minus[j] = kv[j] < 0 ? psi[j] : cplx{0.0, 0.0};
    }
    fft.backward(plus);
    fft.backward(minus);
    double before = 0.0;
    for (std::size_t j = 0; j < N; ++j) {
      before += std::norm(plus[j] + minus[j]) * invN * invN;
      psi[j] = plus[j] * phase_plus[j] + minus[j] * phase_minus[j];
    }
    // e^{-iκy} jumps at the x = L wall unless κL/π is an integer; projecting
    // back onto odd functions restores ψ(L) = 0. The norm lost there (and in
    // the overlap of the two shifted halves) is logged and restored.
    psi[0] = 0.0;
    psi[N / 2] = 0.0;
    double kept = 0.0;
    for (std::size_t j = 1; j < N / 2; ++j) {
      const cplx odd = 0.5 * (psi[j] - psi[N - j]);
      psi[j] = odd;
      psi[N - j] = -odd;
      kept += 2.0 * std::norm(odd);
    }
    if (kept > 0) {
      log.kick_leakage += (before - kept) * s.dx;
      const double sc = std::sqrt(before / kept);
      for (auto& v : psi) v *= sc;
    }
    fft.forward(psi);
  };

  const double t0 = s.t;
  fft.forward(psi);
  record(opt.log_every > 0, true);
  bool pending_half = false;  // second kinetic half step owed
  for (long i = 0; i < steps; ++i) {
    const double ta = t0 + dt * static_cast<double>(i);
    const double tb = ta + dt;
    const auto& k_in = pending_half ? kfull : khalf;
    for (std::size_t j = 0; j < N; ++j) psi[j] *= k_in[j];
    fft.backward(psi);
    if (drive.active()) {
      const double integral = (std::sin(drive.omega * tb) - std::sin(drive.omega * ta)) / drive.omega;
      const double c = -integral / s.hbar;
      for (std::size_t j = 0; j < N; ++j) psi[j] *= std::polar(invN, c * Vx[j]);
    } else {
      for (auto& v : psi) v *= invN;
    }
    fft.forward(psi);
    pending_half = true;

    const double frac = detail::kick_fraction(opt.kicks, plan, base + i);
    const bool strobe = detail::strobe_point(opt.kicks, base + i, plan.per_period);
    const bool sample = opt.log_every > 0 && (i + 1) % opt.log_every == 0;
    const bool last = i + 1 == steps;
    if (frac > 0 || strobe || sample || last) {
      for (std::size_t j = 0; j < N; ++j) psi[j] *= khalf[j];
      pending_half = false;
      s.t = tb;
      if (strobe || sample) record(sample, strobe);
      if (frac > 0) kick(frac);
    }
  }
  if (pending_half)
    for (std::size_t j = 0; j < N; ++j) psi[j] *= khalf[j];
  s.t = t0 + dt * static_cast<double>(steps);
  fft.backward(psi);
  for (auto& v : psi) v *= invN;
  return log;
}

namespace detail {

// ψ(x) -> ψ(x - d) on the half line, zero-filled from the walls.
inline void translate_half_line(LineState& s, double d) {
  const std::size_t N = s.size();
  const double span = s.dx * static_cast<double>(N - 1);
  if (std::abs(d) >= span) {
    std::ostringstream msg;
    msg << "translation " << d << " exceeds the grid span " << span;
    throw Error(ErrorKind::Kick, msg.str());
  }
  const double cells = d / s.dx;
  const double whole = std::round(cells);
  std::vector<cplx> out(N, cplx{0.0, 0.0});
  if (std::abs(cells - whole) < 1e-9) {
    const long sh = static_cast<long>(whole);
    for (long j = 0; j < static_cast<long>(N); ++j) {
      const long src = j - sh;
      if (src >= 0 && src < static_cast<long>(N)) out[static_cast<std::size_t>(j)] = s.amps[static_cast<std::size_t>(src)];
    }
  } else {
    // Local 8-point Lagrange interpolation; samples beyond a wall come from
    // the odd reflection that the Dirichlet condition implies.
    const long last = static_cast<long>(N) - 1;
    auto reflected = [&](long i) -> cplx {
      const long r = i < 0 ? -i : (i > last ? 2 * last - i : i);
      if (r < 0 || r > last) return 0.0;
      const cplx v = s.amps[static_cast<std::size_t>(r)];
      return r == i ? v : -v;
    };
    for (long j = 1; j < last; ++j) {
      const double u = static_cast<double>(j) - cells;
      const long i0 = static_cast<long>(std::floor(u));
      const double fr = u - static_cast<double>(i0);
      cplx acc{0.0, 0.0};
      for (long a = -3; a <= 4; ++a) {
        double w = 1.0;
        for (long b = -3; b <= 4; ++b)
          if (b != a) w *= (fr - static_cast<double>(b)) / static_cast<double>(a - b);
        acc += w * reflected(i0 + a);
      }
      out[static_cast<std::size_t>(j)] = acc;
    }
  }
  out.front() = 0.0;
  out.back() = 0.0;
  s.amps = std::move(out);
}

inline double tail_norm(const LineState& s) {
  const std::size_t N = s.size();
  const std::size_t start = N - N / 10;
  double t = 0.0;
  for (std::size_t j = start; j < N; ++j) t += std::norm(s.amps[j]);
  return t * s.dx;
}

}  // namespace detail

// Crank–Nicolson (Numerov form) on H - E0 for the triangular well, drive
// taken at mid-step. Translation kicks are applied between steps.
inline PhysicalLog evolve_triangular_well(LineState& s, double E0, const PhysicalDrive& drive,
                                          const PhysicalRunOptions& opt, double T_D) {
  if (s.domain != LineDomain::HalfLineDirichlet) throw Error(ErrorKind::Parameter, "state is not a half-line state");
  if (opt.kicks) {
    opt.kicks->validate();
    if (opt.kicks->law != KickLaw::TranslationKick)
      throw Error(ErrorKind::Configuration, "triangular-well kicks are translations");
    if (std::abs(opt.kicks->T_D - T_D) > 1e-12 * T_D) throw Error(ErrorKind::Kick, "kick spacing differs from T_D");
  }
  long steps = 0;
  double dt = 0.0;
  long base = 0;
  detail::check_steps(opt, T_D, s.t, steps, dt, base);
  const auto plan = detail::plan_pulses(opt.kicks, opt.steps_per_period, dt);

  // Numerov form: B ψ' = -(i/ħ) H_N ψ with B = tridiag(1, 10, 1)/12 and
  // H_N = -ħ²/2m D2 + (BV + VB)/2; still tridiagonal, and the symmetric
  // potential term keeps the step unitary in the B-weighted norm.
  const std::size_t N = s.size();
  const std::size_t n_in = N - 2;
  const double hb = s.hbar;
  const double c_off = -hb * hb / (2.0 * s.m * s.dx * s.dx);
  std::vector<double> Vs(N), Vx(n_in, 0.0);
  for (std::size_t j = 0; j < N; ++j) Vs[j] = s.eta * s.x(j) - E0;
  for (std::size_t i = 0; i < n_in; ++i)
    if (drive.active()) Vx[i] = drive.profile(s.x(i + 1));
  const double kap = 0.5 * dt / hb;
  std::vector<cplx> rhs(n_in), gam(n_in);
  std::vector<double> Vt(N);
  // One CN step (B + iκH) ψ' = (B - iκH) ψ with the drive at value c and a
  // translation generator v·p (square-pulse kicks); the wall nodes stay
  // zero, so their couplings drop out. Fused Thomas sweep.
  auto step = [&](double c, double v) {
    const cplx pv{0.0, hb * v / (2.0 * s.dx)};
    for (std::size_t j = 0; j < N; ++j) Vt[j] = Vs[j];
    for (std::size_t k = 0; k < n_in; ++k) Vt[k + 1] += c * Vx[k];
    const cplx ik{0.0, kap};
    for (std::size_t k = 0; k < n_in; ++k) {
      const std::size_t j = k + 1;
      const cplx hd = -2.0 * c_off + 10.0 / 12.0 * Vt[j];
      const cplx hl = c_off + (Vt[j - 1] + Vt[j]) / 24.0 + pv;
      const cplx hu = c_off + (Vt[j] + Vt[j + 1]) / 24.0 - pv;
      const cplx r = (1.0 / 12.0 - ik * hl) * s.amps[j - 1] + (10.0 / 12.0 - ik * hd) * s.amps[j] +
                     (1.0 / 12.0 - ik * hu) * s.amps[j + 1];
      if (k == 0) {
        const cplx inv = 1.0 / (10.0 / 12.0 + ik * hd);
        rhs[k] = r * inv;
        gam[k] = (1.0 / 12.0 + ik * hu) * inv;
      } else {
        const cplx lo = 1.0 / 12.0 + ik * hl;
        const cplx inv = 1.0 / (10.0 / 12.0 + ik * hd - lo * gam[k - 1]);
        rhs[k] = (r - lo * rhs[k - 1]) * inv;
        gam[k] = (1.0 / 12.0 + ik * hu) * inv;
      }
    }
    for (std::size_t k = n_in - 1; k-- > 0;) rhs[k] -= gam[k] * rhs[k + 1];
    std::copy(rhs.begin(), rhs.end(), s.amps.begin() + 1);
  };
  auto b_norm = [&] {
    double acc = 0.0;
    for (std::size_t j = 1; j + 1 < N; ++j)
      acc += std::real(std::conj(s.amps[j]) * (10.0 * s.amps[j] + s.amps[j - 1] + s.amps[j + 1])) / 12.0;
    return acc * s.dx;
  };
  const double norm0 = b_norm();

  PhysicalLog log;
  log.dt = dt;
  auto record = [&](bool full_sample, bool strobe) {
    const double tail = detail::tail_norm(s);
    log.tail_norm = std::max(log.tail_norm, tail);
    if (tail > 1e-6) {
      std::ostringstream msg;
      msg << "wavepacket reached the far wall (tail norm " << tail << ") at t = " << s.t;
      throw Error(ErrorKind::Domain, msg.str());
    }
    const auto o = physical_observables(s);
    const double nrm = b_norm() / norm0;
    log.norm_drift = std::max(log.norm_drift, std::abs(1.0 - nrm));
    if (log.norm_drift > opt.norm_tolerance) {
      std::ostringstream msg;
      msg << "norm drifted by " << log.norm_drift << " at t = " << s.t;
      throw Error(ErrorKind::Stability, msg.str());
    }
    if (full_sample) {
      log.times.push_back(s.t);
      log.mean_x.push_back(o.mean_x);
      log.mean_p.push_back(o.mean_p);
      log.energy.push_back(o.energy);
      log.norm.push_back(nrm);
    }
    if (strobe) {
      log.strobe_times.push_back(s.t);
      log.strobe_x.push_back(o.mean_x);
      log.strobe_p.push_back(o.mean_p);
    }
  };

  const double t0 = s.t;
  record(opt.log_every > 0, true);
  for (long i = 0; i < steps; ++i) {
    const double tm = t0 + dt * (static_cast<double>(i) + 0.5);
    const bool pulsed = opt.kicks && opt.kicks->shape == KickShape::SquarePulse;
    const double v = pulsed ? opt.kicks->strength * detail::kick_fraction(opt.kicks, plan, base + i) / dt : 0.0;
    step(drive.active() ? std::cos(drive.omega * tm) : 0.0, v);
    s.t = t0 + dt * static_cast<double>(i + 1);

    const double frac =
        opt.kicks && opt.kicks->shape == KickShape::DiracPhase ? detail::kick_fraction(opt.kicks, plan, base + i) : 0.0;
    const bool strobe = detail::strobe_point(opt.kicks, base + i, plan.per_period);
    const bool sample = opt.log_every > 0 && (i + 1) % opt.log_every == 0;
    if (strobe || sample) record(sample, strobe);
    if (frac > 0) {
      // Sub-cell shifts are Fourier interpolations; whatever they change in
      // the B-norm is logged and restored.
      const double before = b_norm();
      detail::translate_half_line(s, opt.kicks->strength * frac);
      const double after = b_norm();
      log.kick_leakage += std::abs(before - after) / norm0;
      const double sc = std::sqrt(before / after);
      for (auto& v : s.amps) v *= sc;
    }
  }
  return log;
}

// CSV: t, mean_x, mean_p, energy, norm.
inline void write_physical_csv(std::ostream& os, const PhysicalLog& log) {
  const auto old = os.precision(17);
  os << "t,mean_x,mean_p,energy,norm\n";
  for (std::size_t i = 0; i < log.times.size(); ++i)
    os << log.times[i] << ',' << log.mean_x[i] << ',' << log.mean_p[i] << ',' << log.energy[i] << ',' << log.norm[i]
       << '\n';
  os.precision(old);
}

inline void write_strobe_csv(std::ostream& os, const PhysicalLog& log) {
  const auto old = os.precision(17);
  os << "t,mean_x,mean_p\n";
  for (std::size_t i = 0; i < log.strobe_times.size(); ++i)
    os << log.strobe_times[i] << ',' << log.strobe_x[i] << ',' << log.strobe_p[i] << '\n';
  os.precision(old);
}

}  // namespace flobloch
