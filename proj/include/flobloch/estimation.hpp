#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <boost/math/tools/minima.hpp>

#include "flobloch/action_angle.hpp"
#include "flobloch/effective_model.hpp"
#include "flobloch/error.hpp"
#include "flobloch/fft.hpp"

namespace flobloch {

enum class EstimateMethod { Periodogram, SinusoidFit };
enum class SpectralWindow { Rectangular, Hann };

inline std::string_view to_string(EstimateMethod m) {
  return m == EstimateMethod::Periodogram ? "periodogram" : "sinusoid_fit";
}

struct PeriodEstimate {
  double T_B = 0.0;
  double sigma = 0.0;
  EstimateMethod method = EstimateMethod::Periodogram;
  long spectrum_peak_bin = 0;  // in the zero-padded spectrum
};

struct EstimatorOptions {
  SpectralWindow window = SpectralWindow::Hann;
  bool refine = true;
  // Boxcar over one fast period removes a carrier at that period; 0 skips it.
  double carrier_period = 0.0;
  double min_periods = 3.0;
  double detection_ratio = 5.0;
  int oversample = 8;
};

namespace detail {

inline double uniform_step(std::span<const double> t) {
  if (t.size() < 8) throw Error(ErrorKind::Coverage, "series needs at least 8 samples");
  const double dt = (t.back() - t.front()) / static_cast<double>(t.size() - 1);
  if (!(dt > 0)) throw Error(ErrorKind::Parameter, "series times must increase");
  for (std::size_t i = 1; i < t.size(); ++i)
    if (std::abs((t[i] - t[i - 1]) - dt) > 1e-6 * dt) throw Error(ErrorKind::Parameter, "series is not uniformly sampled");
  return dt;
}

inline void remove_linear_trend(std::span<const double> t, std::vector<double>& y) {
  const double n = static_cast<double>(y.size());
  double st = 0, sy = 0, stt = 0, sty = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    st += t[i];
    sy += y[i];
    stt += t[i] * t[i];
    sty += t[i] * y[i];
  }
  const double den = n * stt - st * st;
  const double slope = den != 0 ? (n * sty - st * sy) / den : 0.0;
  const double icpt = (sy - slope * st) / n;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= icpt + slope * t[i];
}

// Solves the K x K system m·x = rhs in place (partial pivoting); false if singular.
template <std::size_t K>
bool solve_small(std::array<std::array<double, K>, K>& m, std::array<double, K>& rhs) {
  for (std::size_t c = 0; c < K; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < K; ++r)
      if (std::abs(m[r][c]) > std::abs(m[piv][c])) piv = r;
    std::swap(m[c], m[piv]);
    std::swap(rhs[c], rhs[piv]);
    if (m[c][c] == 0) return false;
    for (std::size_t r = 0; r < K; ++r) {
      if (r == c) continue;
      const double fct = m[r][c] / m[c][c];
      for (std::size_t k = c; k < K; ++k) m[r][k] -= fct * m[c][k];
      rhs[r] -= fct * rhs[c];
    }
  }
  for (std::size_t c = 0; c < K; ++c) rhs[c] /= m[c][c];
  return true;
}

// Least squares for y ≈ A cos ωt + B sin ωt + C + D (t - tc); returns the
// residual sum.
inline double sinusoid_rss(std::span<const double> t, std::span<const double> y, double w, double tc,
                           std::array<double, 4>* coef = nullptr) {
  std::array<std::array<double, 4>, 4> a{};
  std::array<double, 4> rhs{};
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double b[4] = {std::cos(w * t[i]), std::sin(w * t[i]), 1.0, t[i] - tc};
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) a[r][c] += b[r] * b[c];
      rhs[r] += b[r] * y[i];
    }
  }
  if (!solve_small(a, rhs)) return std::numeric_limits<double>::infinity();
  double rss = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r =
        y[i] - (rhs[0] * std::cos(w * t[i]) + rhs[1] * std::sin(w * t[i]) + rhs[2] + rhs[3] * (t[i] - tc));
    rss += r * r;
  }
  if (coef) *coef = rhs;
  return rss;
}

// Variance of ω from the Gauss–Newton covariance of the five-parameter fit.
inline double omega_variance(std::span<const double> t, const std::array<double, 4>& c, double w, double tc,
                             double rss) {
  std::array<std::array<double, 5>, 5> m{};
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double cs = std::cos(w * t[i]), sn = std::sin(w * t[i]);
    const double g[5] = {cs, sn, 1.0, t[i] - tc, t[i] * (-c[0] * sn + c[1] * cs)};
    for (int r = 0; r < 5; ++r)
      for (int k = 0; k < 5; ++k) m[r][k] += g[r] * g[k];
  }
  std::array<double, 5> e{0, 0, 0, 0, 1};
  if (!solve_small(m, e)) return std::numeric_limits<double>::infinity();
  const double dof = static_cast<double>(t.size()) - 5.0;
  return rss / dof * e[4];
}

}  // namespace detail

// Period of the slow envelope of a uniformly sampled series.
inline PeriodEstimate estimate_period(std::span<const double> times, std::span<const double> values,
                                      const EstimatorOptions& opt = {}) {
  if (times.size() != values.size()) throw Error(ErrorKind::Parameter, "times and values differ in length");
  const double dt = detail::uniform_step(times);
  for (double v : values)
    if (!std::isfinite(v)) throw Error(ErrorKind::Numeric, "series contains non-finite values");

  std::vector<double> t(times.begin(), times.end());
  std::vector<double> y(values.begin(), values.end());
  if (opt.carrier_period > 0) {
    const auto w = static_cast<std::size_t>(std::max(1L, std::lround(opt.carrier_period / dt)));
    if (w >= y.size()) throw Error(ErrorKind::Coverage, "series shorter than one carrier period");
    std::vector<double> ty, yy;
    double acc = 0.0;
    for (std::size_t i = 0; i < w; ++i) acc += y[i];
    for (std::size_t i = w; i <= y.size(); ++i) {
      ty.push_back(0.5 * (t[i - w] + t[i - 1]));
      yy.push_back(acc / static_cast<double>(w));
      if (i < y.size()) acc += y[i] - y[i - w];
    }
    t = std::move(ty);
    y = std::move(yy);
    if (y.size() < 8) throw Error(ErrorKind::Coverage, "too few samples left after carrier removal");
  }
  const std::vector<double> raw = y;
  detail::remove_linear_trend(t, y);

  const std::size_t n = y.size();
  const double span = dt * static_cast<double>(n);
  std::size_t P = 1;
  while (P < static_cast<std::size_t>(opt.oversample) * n) P <<= 1;
  std::vector<cplx> buf(P, cplx{0.0, 0.0});
  for (std::size_t i = 0; i < n; ++i) {
    double w = 1.0;
    if (opt.window == SpectralWindow::Hann)
      w = 0.5 - 0.5 * std::cos(two_pi * (static_cast<double>(i) + 0.5) / static_cast<double>(n));
    buf[i] = w * y[i];
  }
  Fft(P).forward(buf);
  const std::size_t half = P / 2;
  std::vector<double> amp(half + 1);
  for (std::size_t k = 0; k <= half; ++k) amp[k] = std::abs(buf[k]);

  // Skip the detrended DC lobe: bins below one resolution cell.
  const std::size_t k_lo = std::max<std::size_t>(1, P / n);
  std::size_t k_pk = k_lo;
  for (std::size_t k = k_lo; k < half; ++k)
    if (amp[k] > amp[k_pk]) k_pk = k;
  std::vector<double> floor_amp(amp.begin() + static_cast<long>(k_lo), amp.begin() + static_cast<long>(half));
  std::nth_element(floor_amp.begin(), floor_amp.begin() + static_cast<long>(floor_amp.size() / 2), floor_amp.end());
  const double median = floor_amp[floor_amp.size() / 2];
  if (!(amp[k_pk] >= opt.detection_ratio * median) || amp[k_pk] == 0.0) {
    std::ostringstream msg;
    msg << "no significant spectral peak (peak/median amplitude " << (median > 0 ? amp[k_pk] / median : 0.0)
        << " < " << opt.detection_ratio << ")";
    throw Error(ErrorKind::Detection, msg.str());
  }

  double delta = 0.0;
  if (k_pk > 0 && k_pk < half) {
    const double a = amp[k_pk - 1], b = amp[k_pk], c = amp[k_pk + 1];
    const double den = a - 2.0 * b + c;
    if (den != 0) delta = std::clamp(0.5 * (a - c) / den, -0.5, 0.5);
  }
  const double freq = (static_cast<double>(k_pk) + delta) / (static_cast<double>(P) * dt);
  PeriodEstimate est;
  est.T_B = 1.0 / freq;
  est.spectrum_peak_bin = static_cast<long>(k_pk);
  est.method = EstimateMethod::Periodogram;
  est.sigma = 0.5 * est.T_B * est.T_B / span;

  if (est.T_B * opt.min_periods > span) {
    std::ostringstream msg;
    msg << "series spans " << span / est.T_B << " periods; at least " << opt.min_periods << " are needed";
    throw Error(ErrorKind::Coverage, msg.str());
  }

  if (opt.refine) {
    const double w0 = two_pi * freq;
    const double dw = two_pi / span;
    const double tc = 0.5 * (t.front() + t.back());
    auto rss = [&](double w) { return detail::sinusoid_rss(t, raw, w, tc); };
    const auto [w_fit, r_fit] = boost::math::tools::brent_find_minima(rss, w0 - dw, w0 + dw, 52);
    std::array<double, 4> c{};
    detail::sinusoid_rss(t, raw, w_fit, tc, &c);
    const double var = detail::omega_variance(t, c, w_fit, tc, r_fit);
    if (w_fit > 0 && std::isfinite(var) && var >= 0) {
      est.T_B = two_pi / w_fit;
      est.sigma = est.T_B * std::sqrt(var) / w_fit;
      est.method = EstimateMethod::SinusoidFit;
    }
  }
  if (!(est.sigma < est.T_B)) throw Error(ErrorKind::Detection, "period uncertainty exceeds the period");
  return est;
}

inline PeriodEstimate estimate_period(const std::vector<double>& times, const std::vector<double>& values,
                                      const EstimatorOptions& opt = {}) {
  return estimate_period(std::span<const double>(times), std::span<const double>(values), opt);
}

// |f| = ħn / T_B.
inline double infer_force(double T_B, int n, double hbar = 1.0) {
  if (!(T_B > 0)) throw Error(ErrorKind::Parameter, "T_B must be positive");
  return hbar * static_cast<double>(n) / T_B;
}

// Signed force from the direction of the early rotating-frame motion: the
// packet starts at a band extremum whose curvature has the sign of M, so it
// moves along the force -f when M > 0 and against it when M < 0.
inline double infer_signed_force(double T_B, int n, double hbar, double M, double early_displacement) {
  const double mag = infer_force(T_B, n, hbar);
  if (early_displacement == 0.0 || M == 0.0) return mag;
  const double s = (M > 0) == (early_displacement > 0) ? -1.0 : 1.0;
  return s * mag;
}

enum class UnitSystem { Natural, SI };

struct InstrumentReading {
  std::string kind;
  std::string quantity;
  double value = 0.0;
  std::string unit;
  double f_effective = 0.0;
  double T_B = 0.0;
  double relative_uncertainty = 0.0;
};

inline std::string_view instrument_quantity(const Instrument& inst) {
  static constexpr std::string_view names[] = {"F0", "w_z", "B_z", "a"};
  return names[inst.index()];
}

inline std::string_view instrument_unit(const Instrument& inst, UnitSystem units) {
  if (units == UnitSystem::Natural) return "natural";
  static constexpr std::string_view si[] = {"N", "rad/s", "T", "J*m"};
  return si[inst.index()];
}

namespace detail {

inline double& instrument_value(Instrument& inst) {
  return std::visit(
      [](auto& v) -> double& {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ForceMeter>) return v.F0;
        else if constexpr (std::is_same_v<T, Tachometer>) return v.w_z;
        else if constexpr (std::is_same_v<T, Magnetometer>) return v.B_z;
        else return v.a;
      },
      inst);
}

}  // namespace detail

inline double instrument_value(const Instrument& inst) {
  Instrument copy = inst;
  return detail::instrument_value(copy);
}

// Every instrument's force is linear in its measured quantity, so the
// inversion divides by the force per unit value. The geometry in `probe`
// (its measured value is ignored) must belong to `map`'s well.
inline InstrumentReading invert_instrument(const ProbeSpec& probe, const ActionAngleMap& map, int n, double T_B,
                                           double sigma_T = 0.0, double hbar = 1.0,
                                           UnitSystem units = UnitSystem::Natural) {
  ProbeSpec unit = probe;
  detail::instrument_value(unit.instrument) = 1.0;
  const double per_unit = probe_to_force(unit, map);
  if (per_unit == 0.0 || !std::isfinite(per_unit))
    throw Error(ErrorKind::Configuration, "instrument geometry gives no force");
  const double f = infer_force(T_B, n, hbar);
  InstrumentReading r;
  r.kind = std::string(instrument_name(probe.instrument));
  r.quantity = std::string(instrument_quantity(probe.instrument));
  r.unit = std::string(instrument_unit(probe.instrument, units));
  r.T_B = T_B;
  r.value = f / std::abs(per_unit);
  r.f_effective = f;
  r.relative_uncertainty = sigma_T / T_B;
  return r;
}

struct QuarticDesign {
  double b = 0.0;
  double L = 0.0;
  double Omega = 0.0;
  double m = 0.0;
  double E0_bound = 0.0;

  double potential(double x) const { return -m * Omega * Omega * std::pow(x, 4) / (2.0 * b * b); }
  // The quartic term dominates only for |E0| well below the bound.
  bool admits(double E0) const { return std::abs(E0) <= 0.1 * E0_bound; }
};

inline QuarticDesign design_quartic_well(double b, double Omega, double m, double L) {
  if (!(b > 0) || !(Omega > 0) || !(m > 0) || !(L > 0))
    throw Error(ErrorKind::Design, "quartic design inputs must be positive");
  if (!(L > 10.0 * b / pi)) {
    std::ostringstream msg;
    msg << "L = " << L << " must exceed 10 b/pi = " << 10.0 * b / pi;
    throw Error(ErrorKind::Design, msg.str());
  }
  return QuarticDesign{b, L, Omega, m, m * Omega * Omega * b * b / (2.0 * std::pow(pi, 4))};
}

}  // namespace flobloch
