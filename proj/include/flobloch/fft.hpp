#pragma once

#include <algorithm>
#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <span>

#include <fftw3.h>

#include "flobloch/error.hpp"

namespace flobloch {

using cplx = std::complex<double>;

namespace detail {

// FFTW's planner is not re-entrant; execution on distinct arrays is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct PlanDeleter {
  void operator()(fftw_plan_s* p) const {
    if (p) {
      std::lock_guard lock(fftw_planner_mutex());
      fftw_destroy_plan(p);
    }
  }
};

inline fftw_complex* as_fftw(cplx* p) { return reinterpret_cast<fftw_complex*>(p); }

}  // namespace detail

// Complex 1-D transform of fixed length. Unnormalized in both directions,
// matching FFTW: backward(forward(x)) == N * x. Plans are FFTW_ESTIMATE
// (no timing-dependent choices) made on an aligned buffer; data with other
// alignment goes through that buffer, so every call uses the same SIMD
// codelets and results do not depend on where the caller's array lives.
// One object must not be used from two threads at once.
class Fft {
 public:
  explicit Fft(std::size_t n) : n_(n) {
    if (n == 0) throw Error(ErrorKind::Parameter, "FFT length must be positive");
    buf_.reset(fftw_alloc_complex(n));
    if (!buf_) throw Error(ErrorKind::Numeric, "FFTW allocation failed");
    std::lock_guard lock(detail::fftw_planner_mutex());
    const int len = static_cast<int>(n);
    fwd_.reset(fftw_plan_dft_1d(len, buf_.get(), buf_.get(), FFTW_FORWARD, FFTW_ESTIMATE));
    bwd_.reset(fftw_plan_dft_1d(len, buf_.get(), buf_.get(), FFTW_BACKWARD, FFTW_ESTIMATE));
    if (!fwd_ || !bwd_) throw Error(ErrorKind::Numeric, "FFTW planning failed");
  }

  std::size_t size() const noexcept { return n_; }

  void forward(std::span<cplx> data) const { run(fwd_.get(), data); }
  void backward(std::span<cplx> data) const { run(bwd_.get(), data); }

 private:
  struct FreeDeleter {
    void operator()(fftw_complex* p) const { fftw_free(p); }
  };

  void run(fftw_plan p, std::span<cplx> data) const {
    if (data.size() != n_) throw Error(ErrorKind::Parameter, "FFT length mismatch");
    auto* d = detail::as_fftw(data.data());
    if (fftw_alignment_of(reinterpret_cast<double*>(d)) == fftw_alignment_of(reinterpret_cast<double*>(buf_.get()))) {
      fftw_execute_dft(p, d, d);
      return;
    }
    std::copy(data.begin(), data.end(), reinterpret_cast<cplx*>(buf_.get()));
    fftw_execute_dft(p, buf_.get(), buf_.get());
    std::copy_n(reinterpret_cast<const cplx*>(buf_.get()), n_, data.begin());
  }

  std::size_t n_;
  std::unique_ptr<fftw_complex, FreeDeleter> buf_;
  std::unique_ptr<fftw_plan_s, detail::PlanDeleter> fwd_;
  std::unique_ptr<fftw_plan_s, detail::PlanDeleter> bwd_;
};

// (a + ib)(c + id) without the C99 Annex G infinity recovery, so the loop
// vectorizes. Same rounding as std::complex on finite values.
inline cplx cmul(cplx x, cplx y) {
  return {x.real() * y.real() - x.imag() * y.imag(), x.real() * y.imag() + x.imag() * y.real()};
}

// Signed integer wavenumber of FFT bin j for a length-n transform.
inline long fft_wavenumber(std::size_t j, std::size_t n) {
  const long jj = static_cast<long>(j);
  const long nn = static_cast<long>(n);
  return jj < (nn + 1) / 2 ? jj : jj - nn;
}

inline bool is_power_of_two(std::size_t n) { return n > 0 && (n & (n - 1)) == 0; }

}  // namespace flobloch
