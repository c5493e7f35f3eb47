#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "flobloch/error.hpp"

// Closed-form (and, for the quartic-bottom well, quadrature-backed)
// action-angle transformations for the three supported traps.
// 
// Conventions:
//  * the action is the full loop integral J = ∮ p dx, so dJ/dE = 2π/Ω;
//  * Θ = 0 sits at the x = L wall (square), at the x = 0 wall with maximal
//    positive momentum (triangular), and at the inner wall x = b/π (quartic);
//  * every map satisfies Θ -> 2π - Θ  <=>  p -> -p at fixed x.
namespace flobloch {

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

enum class WellKind { InfiniteSquare, Triangular, QuarticBottom };

constexpr std::string_view to_string(WellKind k) {
  switch (k) {
    case WellKind::InfiniteSquare: return "infinite_square";
    case WellKind::Triangular: return "triangular";
    case WellKind::QuarticBottom: return "quartic_bottom";
  }
  return "unknown";
}

// Wraps an angle into [0, 2π).
inline double wrap_angle(double theta) {
  double w = std::fmod(theta, two_pi);
  if (w < 0) w += two_pi;
  if (w >= two_pi) w = 0.0;
  return w;
}

struct WellSpec {
  WellKind kind = WellKind::InfiniteSquare;
  double m = 1.0;
  double L = 0.0;             // square width, or quartic outer cutoff
  double eta = 0.0;           // triangular slope
  double b = 0.0;             // quartic map constant
  double Omega_target = 0.0;  // quartic design frequency

  static WellSpec infinite_square(double m, double L) {
    WellSpec w;
    w.kind = WellKind::InfiniteSquare;
    w.m = m;
    w.L = L;
    return w;
  }
  static WellSpec triangular(double m, double eta) {
    WellSpec w;
    w.kind = WellKind::Triangular;
    w.m = m;
    w.eta = eta;
    return w;
  }
  static WellSpec quartic_bottom(double m, double b, double L, double Omega_target) {
    WellSpec w;
    w.kind = WellKind::QuarticBottom;
    w.m = m;
    w.b = b;
    w.L = L;
    w.Omega_target = Omega_target;
    return w;
  }

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v))
        throw Error(ErrorKind::Domain, std::string(name) + " must be strictly positive");
    };
    positive(m, "m");
    switch (kind) {
      case WellKind::InfiniteSquare: positive(L, "L"); break;
      case WellKind::Triangular: positive(eta, "eta"); break;
      case WellKind::QuarticBottom:
        positive(b, "b");
        positive(L, "L");
        positive(Omega_target, "Omega_target");
        if (!(L > 10.0 * b / pi)) {
          std::ostringstream msg;
          msg << "quartic well needs L > 10 b/pi = " << 10.0 * b / pi << ", got L = " << L;
          throw Error(ErrorKind::Design, msg.str());
        }
        break;
    }
  }

  // Energy scale m Ω² b² / (2π⁴) that |E0| must stay well below (quartic).
  double quartic_energy_bound() const {
    return m * Omega_target * Omega_target * b * b / (2.0 * std::pow(pi, 4));
  }

  // Allowed coordinate range [lo, hi]; hi is +inf for the triangular well.
  std::pair<double, double> range() const {
    switch (kind) {
      case WellKind::InfiniteSquare: return {0.0, L};
      case WellKind::Triangular: return {0.0, std::numeric_limits<double>::infinity()};
      case WellKind::QuarticBottom: return {b / pi, L};
    }
    return {0.0, 0.0};
  }

  // U(x); +inf outside the allowed range.
  double potential(double x) const {
    const auto [lo, hi] = range();
    if (x < lo || x > hi) return std::numeric_limits<double>::infinity();
    switch (kind) {
      case WellKind::InfiniteSquare: return 0.0;
      case WellKind::Triangular: return eta * x;
      case WellKind::QuarticBottom:
        return -m * Omega_target * Omega_target * x * x * x * x / (2.0 * b * b);
    }
    return 0.0;
  }
};

struct PhasePoint {
  double x = 0.0;
  double p = 0.0;
  double Theta = 0.0;
};

namespace detail {

inline void require_energy(const WellSpec& well, double E0) {
  well.validate();
  if (!std::isfinite(E0)) throw Error(ErrorKind::Domain, "E0 must be finite");
  if (well.kind == WellKind::QuarticBottom) {
    const double bound = well.quartic_energy_bound();
    if (std::abs(E0) > 0.1 * bound) {
      std::ostringstream msg;
      msg << "quartic map needs |E0| << m Omega^2 b^2/(2 pi^4) = " << bound
          << " (enforced |E0| <= " << 0.1 * bound << "), got E0 = " << E0;
      throw Error(ErrorKind::Validity, msg.str());
    }
  } else if (!(E0 > 0.0)) {
    throw Error(ErrorKind::Domain, "E0 must be positive, got " + std::to_string(E0));
  }
}

// Loop integrals over the quartic trajectory: ∮ g(p) dx = 2 ∫ g(p(x)) dx.
template <class F>
double quartic_loop_integral(const WellSpec& w, double E0, F&& g) {
  using boost::math::quadrature::gauss_kronrod;
  auto integrand = [&](double x) {
    const double kinetic = E0 - w.potential(x);
    return g(std::sqrt(2.0 * w.m * kinetic));
  };
  double err = 0.0;
  const double value =
      gauss_kronrod<double, 61>::integrate(integrand, w.b / pi, w.L, 20, 1e-12, &err);
  return 2.0 * value;
}

inline double quartic_period(const WellSpec& w, double E0) {
  return quartic_loop_integral(w, E0, [&](double p) { return w.m / p; });
}

inline double quartic_period_derivative(const WellSpec& w, double E0) {
  return quartic_loop_integral(w, E0, [&](double p) { return -w.m * w.m / (p * p * p); });
}

}  // namespace detail

// Angular frequency of the unperturbed orbit. For the quartic-bottom well
// this is the design frequency Omega_target (valid while |E0| stays far
// below the bound); the exact cut-off-orbit frequency is on ActionAngleMap.
inline double angular_frequency(const WellSpec& well, double E0) {
  detail::require_energy(well, E0);
  switch (well.kind) {
    case WellKind::InfiniteSquare:
      return std::sqrt(2.0 * pi * pi * E0 / (well.m * well.L * well.L));
    case WellKind::Triangular: return well.eta * pi / std::sqrt(2.0 * well.m * E0);
    case WellKind::QuarticBottom: return well.Omega_target;
  }
  return 0.0;
}

// J0 = ∮ p dx over one period.
inline double action(const WellSpec& well, double E0) {
  detail::require_energy(well, E0);
  switch (well.kind) {
    case WellKind::InfiniteSquare: return 2.0 * well.L * std::sqrt(2.0 * well.m * E0);
    case WellKind::Triangular:
      return 4.0 / 3.0 * std::sqrt(2.0 * well.m) * std::pow(E0, 1.5) / well.eta;
    case WellKind::QuarticBottom:
      return detail::quartic_loop_integral(well, E0, [](double p) { return p; });
  }
  return 0.0;
}

// M = (∂²H0/∂J²)^-1 in the loop-action convention.
inline double effective_mass(const WellSpec& well, double E0) {
  detail::require_energy(well, E0);
  switch (well.kind) {
    case WellKind::InfiniteSquare: return 4.0 * well.m * well.L * well.L;
    case WellKind::Triangular: {
      const double J = action(well, E0);
      const double C = std::pow(3.0 * well.eta / (4.0 * std::sqrt(2.0 * well.m)), 2.0 / 3.0);
      return -4.5 * std::pow(J, 4.0 / 3.0) / C;
    }
    case WellKind::QuarticBottom: {
      // dE/dJ = 1/T  =>  d²E/dJ² = -T'(E)/T³
      const double T = detail::quartic_period(well, E0);
      const double dT = detail::quartic_period_derivative(well, E0);
      return -T * T * T / dT;
    }
  }
  return 0.0;
}

// Action-angle data of one reference orbit. Immutable after construction.
class ActionAngleMap {
 public:
  ActionAngleMap(const WellSpec& well, double E0) : well_(well), E0_(E0) {
    detail::require_energy(well, E0);
    J0_ = action(well, E0);
    M_eff_ = effective_mass(well, E0);
    if (well.kind == WellKind::QuarticBottom) {
      Omega_ = two_pi / detail::quartic_period(well, E0);
    } else {
      Omega_ = angular_frequency(well, E0);
    }
    if (well.kind == WellKind::Triangular) turning_point_ = E0 / well.eta;
  }

  const WellSpec& well() const noexcept { return well_; }
  WellKind kind() const noexcept { return well_.kind; }
  double E0() const noexcept { return E0_; }
  double J0() const noexcept { return J0_; }
  double Omega() const noexcept { return Omega_; }
  double M_eff() const noexcept { return M_eff_; }
  double period() const noexcept { return two_pi / Omega_; }

  // Mass conjugate to the 2π-periodic angle: (∂²H0/∂I²)^-1 with I = J/2π.
  double angle_mass() const noexcept { return M_eff_ / (4.0 * pi * pi); }

  // Magnitude of the momentum at position x on the E0 shell.
  double shell_momentum(double x) const {
    const double kinetic = E0_ - well_.potential(x);
    return std::sqrt(std::max(0.0, 2.0 * well_.m * kinetic));
  }

  // Θ on the branch with p >= 0 is 2π minus this value; on the other branch
  // it equals it. Lies in [0, π]. For the quartic map x is clamped into range.
  double reflection_angle(double x) const {
    switch (well_.kind) {
      case WellKind::InfiniteSquare: {
        const double xc = std::clamp(x, 0.0, well_.L);
        return pi - pi * xc / well_.L;
      }
      case WellKind::Triangular: {
        const double xc = std::clamp(x, 0.0, turning_point_);
        const double s = pi * pi - 2.0 * well_.m * Omega_ * Omega_ * xc / well_.eta;
        return pi - std::sqrt(std::max(0.0, s));
      }
      case WellKind::QuarticBottom: {
        const double xc = std::clamp(x, well_.b / pi, well_.L);
        return pi - well_.b / xc;
      }
    }
    return 0.0;
  }

  PhasePoint from_angle(double Theta) const {
    const double th = wrap_angle(Theta);
    PhasePoint pt;
    pt.Theta = th;
    switch (well_.kind) {
      case WellKind::InfiniteSquare: {
        pt.x = well_.L * std::abs(pi - th) / pi;
        const double pmag = well_.m * well_.L * Omega_ / pi;
        pt.p = th < pi ? -pmag : pmag;
        break;
      }
      case WellKind::Triangular: {
        pt.x = well_.eta * (two_pi * th - th * th) / (2.0 * well_.m * Omega_ * Omega_);
        pt.p = well_.eta * (pi - th) / Omega_;
        break;
      }
      case WellKind::QuarticBottom: {
        const double d = std::abs(th - pi);
        pt.x = d > well_.b / well_.L ? well_.b / d : well_.L;
        const double pmag = shell_momentum(pt.x);
        pt.p = th < pi ? pmag : -pmag;
        break;
      }
    }
    return pt;
  }

  double to_angle(double x, double p) const {
    const auto [lo, hi] = well_.range();
    const double slack = 1e-12 * std::max(1.0, std::abs(hi == std::numeric_limits<double>::infinity() ? x : hi));
    if (x < lo - slack || x > hi + slack) {
      std::ostringstream msg;
      msg << "x = " << x << " lies outside the well [" << lo << ", " << hi << "]";
      throw Error(ErrorKind::Domain, msg.str());
    }
    const double xc = std::clamp(x, lo, hi);
    const double energy = p * p / (2.0 * well_.m) + well_.potential(xc);
    const double scale = well_.kind == WellKind::QuarticBottom
                             ? std::max(std::abs(E0_), well_.quartic_energy_bound())
                             : std::abs(E0_);
    if (std::abs(energy - E0_) > 1e-9 * scale) {
      std::ostringstream msg;
      msg.precision(17);
      msg << "(x, p) = (" << x << ", " << p << ") has energy " << energy << ", shell E0 = " << E0_
          << ", mismatch " << energy - E0_;
      throw Error(ErrorKind::Shell, msg.str());
    }
    switch (well_.kind) {
      case WellKind::InfiniteSquare:
        return wrap_angle(p < 0 ? pi - pi * xc / well_.L : pi + pi * xc / well_.L);
      case WellKind::Triangular: return wrap_angle(pi - Omega_ * p / well_.eta);
      case WellKind::QuarticBottom:
        return wrap_angle(p >= 0 ? pi - well_.b / xc : pi + well_.b / xc);
    }
    return 0.0;
  }

 private:
  WellSpec well_;
  double E0_;
  double J0_ = 0.0;
  double Omega_ = 0.0;
  double M_eff_ = 0.0;
  double turning_point_ = 0.0;
};

}  // namespace flobloch
