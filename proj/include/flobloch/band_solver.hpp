#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <ostream>
#include <sstream>
#include <thread>
#include <vector>

#include "flobloch/effective_model.hpp"
#include "flobloch/error.hpp"
#include "flobloch/fft.hpp"
#include "flobloch/tridiagonal.hpp"

namespace flobloch {

// Bloch bands of H = P²/2M + V_n cos nϑ in the plane-wave basis e^{i(q+mn)ϑ}.
// Every q is folded to q_red in [-n/2, n/2) before diagonalizing, so the
// coefficient vector for grid point i refers to wavenumbers q_red[i] + m n.
struct BandStructure {
  ReducedModel model;
  std::vector<double> q_grid;
  std::vector<double> q_reduced;
  int B = 0;
  int m_max = 0;
  bool descending = false;  // M < 0: bands counted down from the top of the spectrum
  std::vector<double> energies;             // [iq * B + b]
  std::vector<std::vector<double>> coeffs;  // [iq * B + b], length 2*m_max + 1

  double energy(std::size_t iq, int b) const { return energies[iq * static_cast<std::size_t>(B) + static_cast<std::size_t>(b)]; }
  const std::vector<double>& coefficients(std::size_t iq, int b) const {
    return coeffs[iq * static_cast<std::size_t>(B) + static_cast<std::size_t>(b)];
  }
};

namespace detail {

inline double fold_quasi_momentum(double q, int n) {
  const double nn = static_cast<double>(n);
  return q - nn * std::floor(q / nn + 0.5);
}

struct PointSolution {
  std::vector<double> energies;
  std::vector<std::vector<double>> vectors;
};

inline PointSolution solve_point(const ReducedModel& model, double q_red, int B, int m_max) {
  const std::size_t dim = static_cast<std::size_t>(2 * m_max + 1);
  std::vector<double> diag(dim), off(dim - 1, model.V_n / 2.0);
  const double kin = model.hbar * model.hbar / (2.0 * model.M);
  for (int m = -m_max; m <= m_max; ++m) {
    const double k = q_red + static_cast<double>(m) * model.n;
    diag[static_cast<std::size_t>(m + m_max)] = kin * k * k;
  }
  const TridiagonalEigen eig = symmetric_tridiagonal_eigen(diag, off);
  PointSolution out;
  out.energies.resize(static_cast<std::size_t>(B));
  out.vectors.resize(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    const std::size_t k = model.M > 0 ? static_cast<std::size_t>(b) : dim - 1 - static_cast<std::size_t>(b);
    out.energies[static_cast<std::size_t>(b)] = eig.values[k];
    auto v = eig.vector(k);
    std::vector<double> c(v.begin(), v.end());
    // deterministic sign: largest component positive
    std::size_t imax = 0;
    for (std::size_t i = 1; i < dim; ++i)
      if (std::abs(c[i]) > std::abs(c[imax]) * (1.0 + 1e-12)) imax = i;
    if (c[imax] < 0)
      for (double& x : c) x = -x;
    double norm = 0.0;
    for (double x : c) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : c) x /= norm;
    out.vectors[static_cast<std::size_t>(b)] = std::move(c);
  }
  return out;
}

inline double band_energy_scale(const ReducedModel& model) {
  return std::max({model.recoil_energy(), std::abs(model.V_n), 1e-300});
}

}  // namespace detail

// Diagonalizes the central equation at each q. m_max = 0 selects B + 12.
// Convergence is checked by re-solving at m_max + 4; if the kept bands move
// by more than 1e-10 relative the basis keeps growing (cap 4096).
inline BandStructure solve_bands(const ReducedModel& model, const std::vector<double>& q_grid, int B,
                                 int m_max = 0, int parallelism = 1) {
  model.validate();
  if (B < 1) throw Error(ErrorKind::Parameter, "number of bands B must be >= 1");
  if (q_grid.empty()) throw Error(ErrorKind::Parameter, "empty q grid");
  for (double q : q_grid)
    if (!std::isfinite(q)) throw Error(ErrorKind::Parameter, "q values must be finite");
  if (m_max == 0) m_max = B + 12;
  if (m_max < B + 4) {
    std::ostringstream msg;
    msg << "m_max must be >= B + 4 = " << B + 4 << ", got " << m_max;
    throw Error(ErrorKind::Parameter, msg.str());
  }

  const std::size_t nq = q_grid.size();
  std::vector<double> q_red(nq);
  for (std::size_t i = 0; i < nq; ++i) q_red[i] = detail::fold_quasi_momentum(q_grid[i], model.n);

  // Basis convergence is governed by the worst q; check at the folded extremes.
  const double scale = detail::band_energy_scale(model);
  auto converged = [&](int mm) {
    for (double q : {0.0, -0.5 * model.n, 0.25 * model.n}) {
      const auto a = detail::solve_point(model, q, B, mm);
      const auto b = detail::solve_point(model, q, B, mm + 4);
      for (int k = 0; k < B; ++k) {
        const double ea = a.energies[static_cast<std::size_t>(k)];
        const double eb = b.energies[static_cast<std::size_t>(k)];
        if (std::abs(ea - eb) > 1e-10 * std::max(std::abs(eb), scale)) return false;
      }
    }
    return true;
  };
  while (!converged(m_max)) {
    m_max += 4;
    if (m_max > 4096) throw Error(ErrorKind::Resolution, "band energies not converged with m_max <= 4096");
  }

  BandStructure bs;
  bs.model = model;
  bs.q_grid = q_grid;
  bs.q_reduced = q_red;
  bs.B = B;
  bs.m_max = m_max;
  bs.descending = model.M < 0;
  bs.energies.resize(nq * static_cast<std::size_t>(B));
  bs.coeffs.resize(nq * static_cast<std::size_t>(B));

  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < nq; i += stride) {
      auto sol = detail::solve_point(model, q_red[i], B, m_max);
      for (int b = 0; b < B; ++b) {
        const std::size_t idx = i * static_cast<std::size_t>(B) + static_cast<std::size_t>(b);
        bs.energies[idx] = sol.energies[static_cast<std::size_t>(b)];
        bs.coeffs[idx] = std::move(sol.vectors[static_cast<std::size_t>(b)]);
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(parallelism, 1)), 1, nq);
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
  }
  return bs;
}

namespace detail {

// Fornberg's recursion: weights of derivatives 0..2 at x0 from nodes xs.
inline std::vector<std::array<double, 3>> fd_weights(double x0, const std::vector<double>& xs) {
  const std::size_t n = xs.size();
  std::vector<std::array<double, 3>> w(n, {0.0, 0.0, 0.0});
  double c1 = 1.0, c4 = xs[0] - x0;
  w[0][0] = 1.0;
  for (std::size_t i = 1; i < n; ++i) {
    const std::size_t mn = std::min<std::size_t>(i, 2);
    double c2 = 1.0;
    const double c5 = c4;
    c4 = xs[i] - x0;
    for (std::size_t j = 0; j < i; ++j) {
      const double c3 = xs[i] - xs[j];
      c2 *= c3;
      if (j == i - 1) {
        for (std::size_t k = mn; k >= 1; --k) w[i][k] = c1 * (k * w[i - 1][k - 1] - c5 * w[i - 1][k]) / c2;
        w[i][0] = -c1 * c5 * w[i - 1][0] / c2;
      }
      for (std::size_t k = mn; k >= 1; --k) w[j][k] = (c4 * w[j][k] - k * w[j][k - 1]) / c3;
      w[j][0] = c4 * w[j][0] / c3;
    }
    c1 = c2;
  }
  return w;
}

}  // namespace detail

struct GroupDynamics {
  double velocity = 0.0;  // ∂ε/∂(ħq): rate of change of ϑ
  double mass = 0.0;      // ħ²/ε''; ±inf at inflection points
};

// Central finite differences on the tabulated ε_b(q). The 7 grid nodes
// nearest q give the estimate; the 5 nearest give a cross-check whose
// discrepancy must stay below 1e-3 relative.
inline GroupDynamics group_velocity_and_mass(const BandStructure& bands, int b, double q) {
  if (b < 0 || b >= bands.B) throw Error(ErrorKind::Parameter, "band index out of range");
  const auto& qs = bands.q_grid;
  const std::size_t nq = qs.size();
  if (nq < 3) throw Error(ErrorKind::Resolution, "need at least 3 q nodes for derivatives");
  const auto [qmin, qmax] = std::minmax_element(qs.begin(), qs.end());
  if (q < *qmin || q > *qmax) throw Error(ErrorKind::Parameter, "q lies outside the sampled grid");

  std::vector<std::size_t> order(nq);
  for (std::size_t i = 0; i < nq; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t c) { return std::abs(qs[a] - q) < std::abs(qs[c] - q); });

  auto derivs = [&](std::size_t npts) {
    std::vector<double> xs(npts);
    for (std::size_t i = 0; i < npts; ++i) xs[i] = qs[order[i]];
    const auto w = detail::fd_weights(q, xs);
    double d1 = 0.0, d2 = 0.0;
    for (std::size_t i = 0; i < npts; ++i) {
      const double e = bands.energy(order[i], b);
      d1 += w[i][1] * e;
      d2 += w[i][2] * e;
    }
    return std::pair{d1, d2};
  };
  const std::size_t wide = std::min<std::size_t>(nq, 7);
  const auto [d1, d2] = derivs(wide);
  const auto [c1, c2] = derivs(wide - 2);

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < nq; ++i) {
    lo = std::min(lo, bands.energy(i, b));
    hi = std::max(hi, bands.energy(i, b));
  }
  const double width = std::max(hi - lo, 1e-300);
  const double n = static_cast<double>(bands.model.n);
  // Slopes and curvatures of a band are O(W/n) and O(W/n²) over a zone.
  const double s1 = std::max(std::abs(d1), width / n);
  const double s2 = std::max(std::abs(d2), width / (n * n));
  if (std::abs(d1 - c1) > 1e-3 * s1 || std::abs(d2 - c2) > 1e-3 * s2) {
    std::ostringstream msg;
    msg << "q grid too coarse near q = " << q << ": derivative estimates disagree by "
        << std::abs(d1 - c1) / s1 << " (slope) and " << std::abs(d2 - c2) / s2 << " (curvature) relative";
    throw Error(ErrorKind::Resolution, msg.str());
  }
  const double hbar = bands.model.hbar;
  GroupDynamics g;
  g.velocity = d1 / hbar;
  g.mass = d2 == 0.0 ? std::copysign(std::numeric_limits<double>::infinity(), bands.model.M)
                     : hbar * hbar / d2;
  return g;
}

// φ_q(ϑ_j) on N uniform nodes, normalized so Σ|φ|² 2π/N = 1.
inline std::vector<cplx> bloch_state(const BandStructure& bands, int b, double q, std::size_t N) {
  if (b < 0 || b >= bands.B) throw Error(ErrorKind::Parameter, "band index out of range");
  if (std::abs(q - std::round(q)) > 1e-12 * std::max(1.0, std::abs(q))) {
    std::ostringstream msg;
    msg << "q = " << q << " is not an integer; e^{iqϑ} is not single-valued on the circle";
    throw Error(ErrorKind::Representability, msg.str());
  }
  if (!is_power_of_two(N)) throw Error(ErrorKind::Parameter, "N must be a power of two");
  const int n = bands.model.n;
  const double q_red = detail::fold_quasi_momentum(std::round(q), n);
  const auto sol = detail::solve_point(bands.model, q_red, bands.B, bands.m_max);
  const auto& c = sol.vectors[static_cast<std::size_t>(b)];

  std::vector<cplx> spectrum(N, cplx{0.0, 0.0});
  double aliased = 0.0;
  const long half = static_cast<long>(N) / 2;
  for (int m = -bands.m_max; m <= bands.m_max; ++m) {
    const long k = std::lround(q_red) + static_cast<long>(m) * n;
    const double a = c[static_cast<std::size_t>(m + bands.m_max)];
    if (k < -half || k >= half) {
      aliased += a * a;
      continue;
    }
    spectrum[static_cast<std::size_t>(k < 0 ? k + static_cast<long>(N) : k)] += a;
  }
  if (aliased > 1e-24) {
    std::ostringstream msg;
    msg << "N = " << N << " cannot resolve the Bloch state (weight " << aliased << " beyond Nyquist)";
    throw Error(ErrorKind::Resolution, msg.str());
  }
  Fft fft(N);
  fft.backward(spectrum);
  double norm = 0.0;
  for (const auto& v : spectrum) norm += std::norm(v);
  norm *= two_pi / static_cast<double>(N);
  const double s = 1.0 / std::sqrt(norm);
  for (auto& v : spectrum) v *= s;
  return spectrum;
}

// CSV table: q, band, energy, v_g, m_g. Derivatives that cannot be resolved
// from the grid are written as nan.
inline void write_band_csv(std::ostream& os, const BandStructure& bands) {
  os << "q,band,energy,v_g,m_g\n";
  const auto old = os.precision(17);
  for (std::size_t i = 0; i < bands.q_grid.size(); ++i) {
    for (int b = 0; b < bands.B; ++b) {
      double v = std::numeric_limits<double>::quiet_NaN(), mg = v;
      try {
        const auto g = group_velocity_and_mass(bands, b, bands.q_grid[i]);
        v = g.velocity;
        mg = g.mass;
      } catch (const Error&) {
      }
      os << bands.q_grid[i] << ',' << b << ',' << bands.energy(i, b) << ',' << v << ',' << mg << '\n';
    }
  }
  os.precision(old);
}

}  // namespace flobloch
