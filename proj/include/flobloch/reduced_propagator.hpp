#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <ostream>
#include <sstream>
#include <tuple>
#include <utility>
#include <vector>

#include "flobloch/action_angle.hpp"
#include "flobloch/effective_model.hpp"
#include "flobloch/error.hpp"
#include "flobloch/fft.hpp"

namespace flobloch {

enum class Frame { Rotating, Lab };

// Wavefunction on N uniform nodes ϑ_j = 2πj/N, normalized as Σ|ψ|² 2π/N = 1.
// The linear force lives in the gauge: amps evolve under (ħk - f t)²/2M, and
// the physical momentum of plane wave k is ħk - f t.
struct AngularState {
  std::vector<cplx> amps;
  double t = 0.0;
  Frame frame = Frame::Rotating;
  double gauge_momentum_offset = 0.0;  // f t / ħ

  std::size_t size() const noexcept { return amps.size(); }
  double node(std::size_t j) const { return two_pi * static_cast<double>(j) / static_cast<double>(amps.size()); }
  double norm() const {
    double s = 0.0;
    for (const auto& a : amps) s += std::norm(a);
    return s * two_pi / static_cast<double>(amps.size());
  }
};

// arg ⟨e^{iϑ}⟩ wrapped to [0, 2π), and its modulus.
inline std::pair<double, double> circular_mean(const std::vector<cplx>& amps) {
  const std::size_t N = amps.size();
  cplx acc{0.0, 0.0};
  double total = 0.0;
  for (std::size_t j = 0; j < N; ++j) {
    const double th = two_pi * static_cast<double>(j) / static_cast<double>(N);
    const double w = std::norm(amps[j]);
    acc += w * cplx{std::cos(th), std::sin(th)};
    total += w;
  }
  return {wrap_angle(std::arg(acc)), std::abs(acc) / total};
}

inline AngularState init_gaussian(double center, double width, std::size_t N) {
  if (!(width > 0.0 && width < pi / 2.0))
    throw Error(ErrorKind::Parameter, "Gaussian width must lie in (0, pi/2)");
  if (!is_power_of_two(N)) throw Error(ErrorKind::Parameter, "N must be a power of two");
  // The nearest dropped image (k = ±2) is at least 2π away.
  const double tail = std::exp(-(two_pi * two_pi) / (4.0 * width * width));
  if (tail > 1e-12) {
    std::ostringstream msg;
    msg << "width " << width << " too large: wrapped-image tail " << tail << " exceeds 1e-12";
    throw Error(ErrorKind::Parameter, msg.str());
  }
  const double c = wrap_angle(center);
  AngularState s;
  s.amps.resize(N);
  for (std::size_t j = 0; j < N; ++j) {
    const double th = two_pi * static_cast<double>(j) / static_cast<double>(N);
    double v = 0.0;
    for (int k = -1; k <= 1; ++k) {
      const double d = th - c - two_pi * k;
      v += std::exp(-d * d / (4.0 * width * width));
    }
    s.amps[j] = v;
  }
  const double scale = 1.0 / std::sqrt(s.norm());
  for (auto& a : s.amps) a *= scale;
  return s;
}

struct EvolutionLog {
  Frame frame = Frame::Rotating;
  double dt = 0.0;
  std::vector<double> times;
  std::vector<double> circ_mean;        // arg ⟨e^{iϑ}⟩ in [0, 2π)
  std::vector<double> coherence;        // |⟨e^{iϑ}⟩|
  std::vector<double> mean_momentum;    // physical ⟨P⟩
  std::vector<double> energy;           // ⟨P²/2M + V_n cos nϑ⟩
  std::vector<double> norm;
  std::vector<double> density_times;
  std::vector<std::vector<double>> density_snapshots;
  double norm_drift = 0.0;
};

struct ReducedRunOptions {
  double dt = 0.0;               // negative runs backwards in time
  double t_end = 0.0;
  int snapshot_every = 1;        // steps between logged samples
  int density_every = 1;         // logged samples between density rows; 0 disables
  double norm_tolerance = 1e-8;
};

// Largest admissible |dt|: 0.02 min(2π/ω_h, ħ/V_n).
inline double max_reduced_dt(const ReducedModel& model) {
  double lim = std::numeric_limits<double>::infinity();
  const double wh = model.harmonic_frequency();
  if (wh > 0) lim = std::min(lim, two_pi / wh);
  if (model.V_n != 0) lim = std::min(lim, model.hbar / std::abs(model.V_n));
  return 0.02 * lim;
}

inline double default_reduced_dt(const ReducedModel& model) {
  const double wh = model.harmonic_frequency();
  return wh > 0 ? 1e-3 * two_pi / wh : std::numeric_limits<double>::infinity();
}

namespace detail {

struct ReducedObservables {
  double circ = 0.0, coherence = 0.0, momentum = 0.0, energy = 0.0, norm = 0.0;
};

inline ReducedObservables reduced_observables(const std::vector<cplx>& psi, const ReducedModel& model,
                                              double t, const Fft& fft, std::vector<cplx>& work) {
  const std::size_t N = psi.size();
  ReducedObservables o;
  std::tie(o.circ, o.coherence) = circular_mean(psi);
  double norm = 0.0, pot = 0.0;
  for (std::size_t j = 0; j < N; ++j) {
    const double th = two_pi * static_cast<double>(j) / static_cast<double>(N);
    const double w = std::norm(psi[j]);
    norm += w;
    pot += w * model.V_n * std::cos(model.n * th);
  }
  work.assign(psi.begin(), psi.end());
  fft.forward(work);
  double p1 = 0.0, p2 = 0.0, wsum = 0.0;
  for (std::size_t j = 0; j < N; ++j) {
    const double w = std::norm(work[j]);
    const double P = model.hbar * static_cast<double>(fft_wavenumber(j, N)) - model.f * t;
    p1 += w * P;
    p2 += w * P * P;
    wsum += w;
  }
  o.norm = norm * two_pi / static_cast<double>(N);
  o.momentum = p1 / wsum;
  o.energy = p2 / wsum / (2.0 * model.M) + pot / norm;
  return o;
}

}  // namespace detail

// Strang split-step: half lattice phase, exact kinetic phase for the
// linearly shifted momentum over the step, half lattice phase. Adjacent half
// lattice phases are fused unless a sample is taken between them.
inline EvolutionLog evolve_reduced(AngularState& state, const ReducedModel& model, const ReducedRunOptions& opt) {
  model.validate();
  const std::size_t N = state.size();
  if (!is_power_of_two(N)) throw Error(ErrorKind::Parameter, "grid size must be a power of two");
  if (N < 16 * static_cast<std::size_t>(model.n)) {
    std::ostringstream msg;
    msg << "grid N = " << N << " must be >= 16 n = " << 16 * model.n;
    throw Error(ErrorKind::Parameter, msg.str());
  }
  if (state.frame != Frame::Rotating) throw Error(ErrorKind::Parameter, "evolution runs in the rotating frame");
  if (opt.dt == 0.0 || !std::isfinite(opt.dt)) throw Error(ErrorKind::Parameter, "dt must be finite and nonzero");
  if (opt.snapshot_every < 1) throw Error(ErrorKind::Parameter, "snapshot_every must be >= 1");
  const double dt_max = max_reduced_dt(model);
  if (std::abs(opt.dt) > dt_max * (1.0 + 1e-12)) {
    std::ostringstream msg;
    msg << "|dt| = " << std::abs(opt.dt) << " exceeds 0.02 min(2pi/omega_h, hbar/V_n) = " << dt_max;
    throw Error(ErrorKind::Parameter, msg.str());
  }
  const double span = opt.t_end - state.t;
  if (span * opt.dt < 0) throw Error(ErrorKind::Parameter, "dt points away from t_end");
  const long steps = span == 0.0 ? 0L : std::max(1L, static_cast<long>(std::ceil(std::abs(span / opt.dt) - 1e-9)));
  const double dt = steps == 0 ? opt.dt : span / static_cast<double>(steps);

  const double hbar = model.hbar;
  const double alpha = hbar / (2.0 * model.M);  // kinetic phase per unit time per k²
  const double a = model.f / hbar;               // gauge shift rate
  const Fft fft(N);
  const double invN = 1.0 / static_cast<double>(N);

  std::vector<cplx> half(N), full(N);
  for (std::size_t j = 0; j < N; ++j) {
    const double th = two_pi * static_cast<double>(j) / static_cast<double>(N);
    const double ph = -model.V_n * std::cos(model.n * th) * dt / (2.0 * hbar);
    half[j] = std::polar(1.0, ph);
    full[j] = std::polar(1.0, 2.0 * ph);
  }
  // e^{-iα dt k²}/N is fixed; the cross term e^{2iα dt s k} is rebuilt each
  // step from exact polars every 64 wavenumbers times a table of residues.
  std::vector<cplx> kin_static(N);
  std::vector<double> kvals(N);
  for (std::size_t j = 0; j < N; ++j) {
    const double k = static_cast<double>(fft_wavenumber(j, N));
    kvals[j] = k;
    kin_static[j] = std::polar(invN, -alpha * dt * k * k);
  }
  constexpr std::size_t chunk = 64;
  std::vector<cplx> residue(chunk);

  const bool chunked = N >= 2 * chunk;
  auto apply_kinetic = [&](std::vector<cplx>& spec, double t_mid) {
    const double s = a * t_mid;
    const double theta = 2.0 * alpha * dt * s;  // phase per unit k
    const double constant = -alpha * (dt * s * s + a * a * dt * dt * dt / 12.0);
    if (!chunked) {
      for (std::size_t j = 0; j < N; ++j) spec[j] = cmul(spec[j], cmul(kin_static[j], std::polar(1.0, theta * kvals[j] + constant)));
      return;
    }
    residue[0] = std::polar(1.0, constant);
    const cplx z = std::polar(1.0, theta);
    for (std::size_t r = 1; r < chunk; ++r) residue[r] = cmul(residue[r - 1], z);
    // wavenumbers are consecutive inside each chunk; the Nyquist wrap falls
    // on a chunk boundary
    for (std::size_t base = 0; base < N; base += chunk) {
      const cplx anchor = std::polar(1.0, theta * kvals[base]);
      cplx* sp = spec.data() + base;
      const cplx* ks = kin_static.data() + base;
      for (std::size_t r = 0; r < chunk; ++r) sp[r] = cmul(sp[r], cmul(cmul(ks[r], anchor), residue[r]));
    }
  };

  EvolutionLog log;
  log.frame = Frame::Rotating;
  log.dt = dt;
  std::vector<cplx> work;
  std::size_t samples = 0;
  auto record = [&](double t) {
    const auto o = detail::reduced_observables(state.amps, model, t, fft, work);
    log.times.push_back(t);
    log.circ_mean.push_back(o.circ);
    log.coherence.push_back(o.coherence);
    log.mean_momentum.push_back(o.momentum);
    log.energy.push_back(o.energy);
    log.norm.push_back(o.norm);
    log.norm_drift = std::max(log.norm_drift, std::abs(1.0 - o.norm));
    if (opt.density_every > 0 && samples % static_cast<std::size_t>(opt.density_every) == 0) {
      std::vector<double> rho(N);
      for (std::size_t j = 0; j < N; ++j) rho[j] = std::norm(state.amps[j]);
      log.density_times.push_back(t);
      log.density_snapshots.push_back(std::move(rho));
    }
    ++samples;
    if (log.norm_drift > opt.norm_tolerance) {
      std::ostringstream msg;
      msg << "norm drifted by " << log.norm_drift << " at t = " << t << "; reduce dt (currently " << dt << ")";
      throw Error(ErrorKind::Stability, msg.str());
    }
  };

  const double t0 = state.t;
  record(t0);
  if (steps == 0) return log;
  auto& psi = state.amps;
  for (std::size_t j = 0; j < N; ++j) psi[j] = cmul(psi[j], half[j]);
  for (long s = 0; s < steps; ++s) {
    const double t_start = t0 + dt * static_cast<double>(s);
    fft.forward(psi);
    apply_kinetic(psi, t_start + 0.5 * dt);
    fft.backward(psi);
    const bool last = s + 1 == steps;
    const bool sample = last || (s + 1) % opt.snapshot_every == 0;
    if (sample) {
      for (std::size_t j = 0; j < N; ++j) psi[j] = cmul(psi[j], half[j]);
      state.t = t0 + dt * static_cast<double>(s + 1);
      state.gauge_momentum_offset = model.f * state.t / hbar;
      record(state.t);
      if (!last)
        for (std::size_t j = 0; j < N; ++j) psi[j] = cmul(psi[j], half[j]);
    } else {
      for (std::size_t j = 0; j < N; ++j) psi[j] = cmul(psi[j], full[j]);
    }
  }
  return log;
}

// Rotating-frame log to lab frame: Θ = ϑ + Ωt. Density rows are shifted
// spectrally so non-integer shifts stay exact for band-limited data.
inline EvolutionLog to_lab_frame(const EvolutionLog& log, double Omega) {
  if (log.frame != Frame::Rotating) throw Error(ErrorKind::Parameter, "log is already in the lab frame");
  EvolutionLog out = log;
  out.frame = Frame::Lab;
  for (std::size_t i = 0; i < out.times.size(); ++i)
    out.circ_mean[i] = wrap_angle(log.circ_mean[i] + Omega * log.times[i]);
  if (Omega == 0.0 || out.density_snapshots.empty()) return out;
  const std::size_t N = out.density_snapshots.front().size();
  const Fft fft(N);
  std::vector<cplx> buf(N);
  for (std::size_t r = 0; r < out.density_snapshots.size(); ++r) {
    auto& row = out.density_snapshots[r];
    const double shift = Omega * out.density_times[r];
    for (std::size_t j = 0; j < N; ++j) buf[j] = row[j];
    fft.forward(buf);
    for (std::size_t j = 0; j < N; ++j) {
      const long k = fft_wavenumber(j, N);
      // the Nyquist bin of a real signal is its own mirror; keep it real
      const double ph = (2 * std::abs(k) == static_cast<long>(N)) ? 0.0 : -static_cast<double>(k) * shift;
      buf[j] *= std::polar(1.0 / static_cast<double>(N), ph);
      if (2 * std::abs(k) == static_cast<long>(N)) buf[j] *= std::cos(static_cast<double>(k) * shift);
    }
    fft.backward(buf);
    for (std::size_t j = 0; j < N; ++j) row[j] = buf[j].real();
  }
  return out;
}

// Removes 2π jumps from an angle sequence.
inline std::vector<double> unwrap(const std::vector<double>& angles) {
  std::vector<double> out(angles.size());
  if (angles.empty()) return out;
  out[0] = angles[0];
  for (std::size_t i = 1; i < angles.size(); ++i) {
    double d = angles[i] - angles[i - 1];
    d -= two_pi * std::round(d / two_pi);
    out[i] = out[i - 1] + d;
  }
  return out;
}

// Mean of unwrapped circ_mean(t + T_B) - circ_mean(t) over all samples with
// t + T_B inside the log (linear interpolation at t + T_B).
inline double drift_per_period(const EvolutionLog& log, double T_B) {
  if (log.frame != Frame::Lab) throw Error(ErrorKind::Parameter, "drift is defined in the lab frame");
  if (log.times.size() < 2 || !std::isfinite(T_B) || !(T_B > 0)) {
    throw Error(ErrorKind::Coverage, "drift per period needs a finite Bloch period and a sampled log");
  }
  const double span = log.times.back() - log.times.front();
  if (span < 3.0 * T_B * (1.0 - 1e-9)) {
    std::ostringstream msg;
    msg << "log spans " << span << " < 3 T_B = " << 3.0 * T_B;
    throw Error(ErrorKind::Coverage, msg.str());
  }
  const auto u = unwrap(log.circ_mean);
  const auto& t = log.times;
  double sum = 0.0;
  std::size_t count = 0;
  std::size_t hi = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double target = t[i] + T_B;
    if (target > t.back()) break;
    while (hi + 1 < t.size() && t[hi + 1] < target) ++hi;
    const std::size_t j = std::min(hi + 1, t.size() - 1);
    const double w = t[j] == t[hi] ? 0.0 : (target - t[hi]) / (t[j] - t[hi]);
    sum += (1.0 - w) * u[hi] + w * u[j] - u[i];
    ++count;
  }
  return sum / static_cast<double>(count);
}

// CSV: t, circ_mean, mean_momentum, energy, norm.
inline void write_reduced_csv(std::ostream& os, const EvolutionLog& log) {
  const auto old = os.precision(17);
  os << "t,circ_mean,mean_momentum,energy,norm\n";
  for (std::size_t i = 0; i < log.times.size(); ++i)
    os << log.times[i] << ',' << log.circ_mean[i] << ',' << log.mean_momentum[i] << ',' << log.energy[i] << ','
       << log.norm[i] << '\n';
  os.precision(old);
}

// Dense density matrix: first column t, then one column per node.
inline void write_density_csv(std::ostream& os, const std::vector<double>& times,
                              const std::vector<std::vector<double>>& rows) {
  const auto old = os.precision(17);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    os << times[r];
    for (double v : rows[r]) os << ',' << v;
    os << '\n';
  }
  os.precision(old);
}

}  // namespace flobloch
