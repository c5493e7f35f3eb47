#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <vector>

#include "flobloch/error.hpp"

namespace flobloch {

// Eigen-decomposition of a real symmetric tridiagonal matrix.
// `vectors` is column-major: vectors[k * n + i] is component i of the k-th
// eigenvector. Eigenvalues are sorted ascending.
struct TridiagonalEigen {
  std::vector<double> values;
  std::vector<double> vectors;
  std::size_t n = 0;

  std::span<const double> vector(std::size_t k) const {
    return std::span<const double>(vectors).subspan(k * n, n);
  }
};

// Implicit-shift QL iteration (Bowdler, Martin, Reinsch and Wilkinson's tql2
// scheme) on diagonal `diag` and off-diagonal `off` (off[i] couples i and i+1).
inline TridiagonalEigen symmetric_tridiagonal_eigen(std::span<const double> diag,
                                                    std::span<const double> off,
                                                    int max_sweeps = 60) {
  const std::size_t n = diag.size();
  if (n == 0) throw Error(ErrorKind::Parameter, "empty tridiagonal matrix");
  if (off.size() + 1 != n) throw Error(ErrorKind::Parameter, "off-diagonal length must be n-1");

  std::vector<double> d(diag.begin(), diag.end());
  std::vector<double> e(n, 0.0);
  std::copy(off.begin(), off.end(), e.begin());
  std::vector<double> z(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) z[i * n + i] = 1.0;

  const double eps = std::numeric_limits<double>::epsilon();
  double shift_total = 0.0;
  double tst1 = 0.0;

  for (std::size_t l = 0; l < n; ++l) {
    tst1 = std::max(tst1, std::abs(d[l]) + std::abs(e[l]));
    std::size_t m = l;
    while (m < n - 1 && std::abs(e[m]) > eps * tst1) ++m;

    if (m > l) {
      int sweeps = 0;
      do {
        if (++sweeps > max_sweeps) {
          std::ostringstream msg;
          msg << "implicit QL did not converge for eigenvalue " << l << " of " << n
              << "; diag=[";
          for (std::size_t i = 0; i < n; ++i) msg << (i ? ", " : "") << diag[i];
          msg << "] off=[";
          for (std::size_t i = 0; i + 1 < n; ++i) msg << (i ? ", " : "") << off[i];
          msg << "]";
          throw Error(ErrorKind::Numeric, msg.str());
        }

        double g = d[l];
        double p = (d[l + 1] - g) / (2.0 * e[l]);
        double r = std::hypot(p, 1.0);
        if (p < 0) r = -r;
        d[l] = e[l] / (p + r);
        d[l + 1] = e[l] * (p + r);
        const double dl1 = d[l + 1];
        double h = g - d[l];
        for (std::size_t i = l + 2; i < n; ++i) d[i] -= h;
        shift_total += h;

        p = d[m];
        double c = 1.0, c2 = 1.0, c3 = 1.0;
        const double el1 = e[l + 1];
        double s = 0.0, s2 = 0.0;
        for (std::size_t ii = m; ii-- > l;) {
          c3 = c2;
          c2 = c;
          s2 = s;
          g = c * e[ii];
          h = c * p;
          r = std::hypot(p, e[ii]);
          e[ii + 1] = s * r;
          s = e[ii] / r;
          c = p / r;
          p = c * d[ii] - s * g;
          d[ii + 1] = h + s * (c * g + s * d[ii]);
          double* zi = &z[ii * n];
          double* zi1 = &z[(ii + 1) * n];
          for (std::size_t k = 0; k < n; ++k) {
            h = zi1[k];
            zi1[k] = s * zi[k] + c * h;
            zi[k] = c * zi[k] - s * h;
          }
        }
        p = -s * s2 * c3 * el1 * e[l] / dl1;
        e[l] = s * p;
        d[l] = c * p;
      } while (std::abs(e[l]) > eps * tst1);
    }
    d[l] += shift_total;
    e[l] = 0.0;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d[a] < d[b]; });

  TridiagonalEigen out;
  out.n = n;
  out.values.resize(n);
  out.vectors.resize(n * n);
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = d[order[k]];
    std::copy_n(&z[order[k] * n], n, &out.vectors[k * n]);
  }
  return out;
}

// Solves a complex tridiagonal system A x = rhs in place (Thomas algorithm,
// no pivoting). `lower[i]` multiplies x[i-1] in row i, `upper[i]` multiplies
// x[i+1]. Intended for the diagonally dominant Crank–Nicolson operator.
inline void solve_tridiagonal(std::span<const std::complex<double>> lower,
                              std::span<const std::complex<double>> diag,
                              std::span<const std::complex<double>> upper,
                              std::span<std::complex<double>> rhs,
                              std::vector<std::complex<double>>& scratch) {
  const std::size_t n = diag.size();
  scratch.resize(n);
  std::complex<double> beta = diag[0];
  rhs[0] /= beta;
  for (std::size_t i = 1; i < n; ++i) {
    scratch[i] = upper[i - 1] / beta;
    beta = diag[i] - lower[i] * scratch[i];
    rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
  }
  for (std::size_t i = n - 1; i-- > 0;) rhs[i] -= scratch[i + 1] * rhs[i + 1];
}

// LU factors of a fixed complex tridiagonal matrix, reused across solves.
class TridiagonalLU {
 public:
  TridiagonalLU() = default;
  TridiagonalLU(std::span<const std::complex<double>> lower, std::span<const std::complex<double>> diag,
                std::span<const std::complex<double>> upper)
      : lower_(lower.begin(), lower.end()), inv_beta_(diag.size()), gamma_(diag.size()) {
    const std::size_t n = diag.size();
    std::complex<double> beta = diag[0];
    inv_beta_[0] = 1.0 / beta;
    for (std::size_t i = 1; i < n; ++i) {
      gamma_[i] = upper[i - 1] * inv_beta_[i - 1];
      beta = diag[i] - lower[i] * gamma_[i];
      if (beta == std::complex<double>{0.0, 0.0}) throw Error(ErrorKind::Numeric, "singular tridiagonal matrix");
      inv_beta_[i] = 1.0 / beta;
    }
  }

  std::size_t size() const noexcept { return inv_beta_.size(); }

  void solve(std::span<std::complex<double>> rhs) const {
    const std::size_t n = inv_beta_.size();
    rhs[0] *= inv_beta_[0];
    for (std::size_t i = 1; i < n; ++i) rhs[i] = (rhs[i] - lower_[i] * rhs[i - 1]) * inv_beta_[i];
    for (std::size_t i = n - 1; i-- > 0;) rhs[i] -= gamma_[i + 1] * rhs[i + 1];
  }

 private:
  std::vector<std::complex<double>> lower_, inv_beta_, gamma_;
};

}  // namespace flobloch
