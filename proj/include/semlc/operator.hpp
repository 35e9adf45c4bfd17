#pragma once

// Circulant lateral operator U, its stability certificate, and the
// equilibrium map Q = (I - U)^-1 of dz/dt = -z + Uz + z_hat.
//
// Matrices are f x m row-major: each column is one depth-column (the channel
// vector at one spatial position). Batched entry points take a raw
// (batch, f, m) buffer, which is exactly the memory layout of a
// (B, C, H, W) tensor with m = H * W.

#include <algorithm>
#include <complex>
#include <limits>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "semlc/error.hpp"
#include "semlc/fft.hpp"
#include "semlc/parallel.hpp"
#include "semlc/profile.hpp"

namespace semlc {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

/// Profiles whose largest real eigenvalue exceeds 1 - margin are rejected.
inline constexpr double kStabilityMargin = 1e-6;
/// Smallest |1 - DFT(u)_k| the frequency-domain solve will divide by.
inline constexpr double kMinDenominator = 1e-12;

class LateralOperator {
 public:
  std::size_t size() const { return static_cast<std::size_t>(u_.rows()); }
  const Matrix& u() const { return u_; }
  /// Equilibrium operator; empty when the operator is unstable.
  const Matrix& q() const { return q_; }
  const std::vector<std::complex<double>>& spectrum() const { return spectrum_; }
  bool stable() const { return stable_; }
  double max_real_eigenvalue() const { return max_real_; }
  /// First column of U, the circulant generator used by the FFT path.
  std::vector<double> first_column() const {
    std::vector<double> c(size());
    for (std::size_t i = 0; i < size(); ++i) c[i] = u_(static_cast<Eigen::Index>(i), 0);
    return c;
  }

  void require_stable() const {
    require(stable_, ErrorKind::unstable_operator,
            "max Re(eig U) = " + std::to_string(max_real_) + " >= 1 - " + std::to_string(kStabilityMargin) +
                "; shrink delta");
  }

 private:
  friend LateralOperator build_circulant_unchecked(const ConnectivityProfile&);

  Matrix u_;
  Matrix q_;
  std::vector<std::complex<double>> spectrum_;
  double max_real_ = 0.0;
  bool stable_ = false;
};

/// Eigenvalues of the circulant matrix with the given first column.
inline std::vector<std::complex<double>> circulant_spectrum(std::span<const double> first_column) {
  return fft::dft(first_column);
}

inline double max_real(std::span<const std::complex<double>> values) {
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& v : values) m = std::max(m, v.real());
  return m;
}

/// Builds U and its certificate; Q is only materialized when stable.
inline LateralOperator build_circulant_unchecked(const ConnectivityProfile& profile) {
  const auto f = static_cast<Eigen::Index>(profile.size());
  LateralOperator op;
  op.u_.resize(f, f);
  for (Eigen::Index i = 0; i < f; ++i)
    for (Eigen::Index j = 0; j < f; ++j)
      op.u_(i, j) = profile.circular(static_cast<std::size_t>((j - i + f) % f));
  op.spectrum_ = circulant_spectrum(op.first_column());
  op.max_real_ = max_real(op.spectrum_);
  op.stable_ = op.max_real_ < 1.0 - kStabilityMargin;
  if (op.stable_) {
    const Matrix leak = Matrix::Identity(f, f) - op.u_;
    op.q_ = leak.partialPivLu().solve(Matrix::Identity(f, f));
  }
  return op;
}

inline LateralOperator build_circulant(const ConnectivityProfile& profile) {
  auto op = build_circulant_unchecked(profile);
  op.require_stable();
  return op;
}

/// out_b = M * in_b for every (f x m) slice b of a (batch, f, m) buffer.
inline void apply_batched(const Matrix& m, const double* in, double* out, std::size_t batch, std::size_t cols,
                          std::size_t threads = 1) {
  const auto f = m.rows();
  const auto c = static_cast<Eigen::Index>(cols);
  const std::size_t slice = static_cast<std::size_t>(f) * cols;
  parallel_for(batch, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t b = begin; b < end; ++b)
      MatrixMap(out + b * slice, f, c).noalias() = m * ConstMatrixMap(in + b * slice, f, c);
  });
}

inline Matrix apply_equilibrium_dense(const LateralOperator& op, const Eigen::Ref<const Matrix>& z_hat) {
  op.require_stable();
  require(static_cast<std::size_t>(z_hat.rows()) == op.size(), ErrorKind::shape_mismatch,
          "z_hat has " + std::to_string(z_hat.rows()) + " rows, operator expects " + std::to_string(op.size()));
  return op.q() * z_hat;
}

/// Q^T * grad_out: gradient w.r.t. z_hat given the gradient w.r.t. z.
inline Matrix equilibrium_backward(const LateralOperator& op, const Eigen::Ref<const Matrix>& grad_out) {
  op.require_stable();
  require(static_cast<std::size_t>(grad_out.rows()) == op.size(), ErrorKind::shape_mismatch,
          "grad_out row count does not match operator size");
  return op.q().transpose() * grad_out;
}

/// Frequency-domain equilibrium solver for a fixed circulant generator.
class FftEquilibrium {
 public:
  explicit FftEquilibrium(std::span<const double> first_column) : size_(first_column.size()) {
    const auto spectrum = circulant_spectrum(first_column);
    require(max_real(spectrum) < 1.0 - kStabilityMargin, ErrorKind::unstable_operator,
            "max Re(DFT(u)) = " + std::to_string(max_real(spectrum)) + " violates the stability margin");
    denominators_.resize(fft::half_size(size_));
    for (std::size_t k = 0; k < denominators_.size(); ++k) {
      denominators_[k] = 1.0 - spectrum[k];
      require(std::abs(denominators_[k]) >= kMinDenominator, ErrorKind::unstable_operator,
              "near-zero denominator at frequency " + std::to_string(k));
    }
  }

  explicit FftEquilibrium(const ConnectivityProfile& profile)
      : FftEquilibrium(build_circulant_unchecked(profile).first_column()) {}

  std::size_t size() const { return size_; }

  /// Solves (I - U) z = z_hat (or (I - U)^T z = z_hat when `adjoint`) for a (batch, f, cols) buffer.
  void solve(const double* in, double* out, std::size_t batch, std::size_t cols, bool adjoint = false,
             std::size_t threads = 1) const {
    const std::size_t nh = denominators_.size();
    const std::size_t slice = size_ * cols;
    parallel_for(batch, threads, [&](std::size_t begin, std::size_t end) {
      if (begin == end) return;
      const std::size_t count = end - begin;
      std::vector<std::complex<double>> spectrum(count * nh * cols);
      fft::forward_channels(in + begin * slice, spectrum.data(), count, size_, cols);
      const double scale = 1.0 / static_cast<double>(size_);
      for (std::size_t b = 0; b < count; ++b) {
        for (std::size_t k = 0; k < nh; ++k) {
          const std::complex<double> d = adjoint ? std::conj(denominators_[k]) : denominators_[k];
          const std::complex<double> factor = scale / d;
          auto* row = spectrum.data() + (b * nh + k) * cols;
          for (std::size_t p = 0; p < cols; ++p) row[p] *= factor;
        }
      }
      fft::inverse_channels(spectrum.data(), out + begin * slice, count, size_, cols);
    });
  }

 private:
  std::size_t size_;
  std::vector<std::complex<double>> denominators_;
};

inline Matrix apply_equilibrium_fft(const ConnectivityProfile& profile, const Eigen::Ref<const Matrix>& z_hat) {
  require(static_cast<std::size_t>(z_hat.rows()) == profile.size(), ErrorKind::shape_mismatch,
          "z_hat row count does not match profile length");
  const FftEquilibrium solver(profile);
  const Matrix in = z_hat;
  Matrix out(in.rows(), in.cols());
  solver.solve(in.data(), out.data(), 1, static_cast<std::size_t>(in.cols()));
  return out;
}

/// dL/dU_ij = (Q^T g)_i z_j accumulated over columns and batches, then summed
/// along each circulant diagonal. Returned by circular offset k (0..f-1);
/// entry 0 (self-weight) is always zero.
inline std::vector<double> circulant_offset_gradient(const Matrix& dl_du) {
  const auto f = dl_du.rows();
  std::vector<double> out(static_cast<std::size_t>(f), 0.0);
  for (Eigen::Index i = 0; i < f; ++i)
    for (Eigen::Index k = 1; k < f; ++k) out[static_cast<std::size_t>(k)] += dl_du(i, (i + k) % f);
  return out;
}

inline std::vector<double> equilibrium_param_backward(const LateralOperator& op, const Eigen::Ref<const Matrix>& z_hat,
                                                      const Eigen::Ref<const Matrix>& grad_out) {
  op.require_stable();
  require(z_hat.rows() == grad_out.rows() && z_hat.cols() == grad_out.cols() &&
              static_cast<std::size_t>(z_hat.rows()) == op.size(),
          ErrorKind::shape_mismatch, "z_hat and grad_out must both be f x m");
  const Matrix z = op.q() * z_hat;
  const Matrix upstream = op.q().transpose() * grad_out;
  return circulant_offset_gradient(upstream * z.transpose());
}

}  // namespace semlc
