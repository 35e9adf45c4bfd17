#pragma once

// Thin RAII layer over FFTW for real transforms along the channel axis of
// (batch, channels, columns) row-major buffers.

#include <complex>
#include <cstddef>
#include <mutex>
#include <span>
#include <vector>

#include <fftw3.h>

namespace semlc::fft {

namespace detail {

// The FFTW planner is not re-entrant.
inline std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

class Plan {
 public:
  explicit Plan(fftw_plan plan) : plan_(plan) {}
  Plan(const Plan&) = delete;
  Plan& operator=(const Plan&) = delete;
  ~Plan() {
    if (plan_ != nullptr) {
      std::scoped_lock lock(planner_mutex());
      fftw_destroy_plan(plan_);
    }
  }
  void execute() const { fftw_execute(plan_); }

 private:
  fftw_plan plan_;
};

inline fftw_complex* as_fftw(std::complex<double>* p) { return reinterpret_cast<fftw_complex*>(p); }

}  // namespace detail

/// Number of non-redundant coefficients of a length-n real transform.
inline std::size_t half_size(std::size_t n) { return n / 2 + 1; }

/// Full complex DFT X_k = sum_j x_j exp(-2 pi i jk / n) of a real sequence.
inline std::vector<std::complex<double>> dft(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<double> in(x.begin(), x.end());
  std::vector<std::complex<double>> half(half_size(n));
  {
    fftw_plan raw;
    {
      std::scoped_lock lock(detail::planner_mutex());
      raw = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.data(), detail::as_fftw(half.data()), FFTW_ESTIMATE);
    }
    detail::Plan plan(raw);
    plan.execute();
  }
  std::vector<std::complex<double>> full(n);
  for (std::size_t k = 0; k < n; ++k) full[k] = k < half.size() ? half[k] : std::conj(half[n - k]);
  return full;
}

/// Real-to-half-complex transform along the channel axis of a
/// (batch, n, cols) row-major buffer. Output layout: (batch, n/2+1, cols).
inline void forward_channels(const double* in, std::complex<double>* out, std::size_t batch, std::size_t n,
                             std::size_t cols) {
  const int nh = static_cast<int>(half_size(n));
  fftw_iodim dim{static_cast<int>(n), static_cast<int>(cols), static_cast<int>(cols)};
  fftw_iodim loops[2] = {{static_cast<int>(batch), static_cast<int>(n * cols), nh * static_cast<int>(cols)},
                         {static_cast<int>(cols), 1, 1}};
  fftw_plan raw;
  {
    std::scoped_lock lock(detail::planner_mutex());
    raw = fftw_plan_guru_dft_r2c(1, &dim, 2, loops, const_cast<double*>(in), detail::as_fftw(out),
                                 FFTW_ESTIMATE | FFTW_PRESERVE_INPUT);
  }
  detail::Plan plan(raw);
  plan.execute();
}

/// Inverse of forward_channels, unnormalized (result is n times the signal).
/// Destroys `in`.
inline void inverse_channels(std::complex<double>* in, double* out, std::size_t batch, std::size_t n,
                             std::size_t cols) {
  const int nh = static_cast<int>(half_size(n));
  fftw_iodim dim{static_cast<int>(n), static_cast<int>(cols), static_cast<int>(cols)};
  fftw_iodim loops[2] = {{static_cast<int>(batch), nh * static_cast<int>(cols), static_cast<int>(n * cols)},
                         {static_cast<int>(cols), 1, 1}};
  fftw_plan raw;
  {
    std::scoped_lock lock(detail::planner_mutex());
    raw = fftw_plan_guru_dft_c2r(1, &dim, 2, loops, detail::as_fftw(in), out, FFTW_ESTIMATE | FFTW_DESTROY_INPUT);
  }
  detail::Plan plan(raw);
  plan.execute();
}

}  // namespace semlc::fft
