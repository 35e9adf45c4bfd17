#include <algorithm>
#include <complex>
#include <random>
#include <vector>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "semlc/operator.hpp"
#include "test_util.hpp"

namespace semlc {
namespace {

ConnectivityProfile hand_profile() { return ConnectivityProfile::from_circular(std::vector<double>{0, 0.1, 0, 0.1}); }

/// Random stable ricker profile with f drawn from {4, 8, 16, 64}.
ConnectivityProfile random_stable_profile(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> s(1.0, 10.0), d(1e-3, 0.5);
  const std::size_t sizes[] = {4, 8, 16, 64};
  for (;;) {
    const ProfileParams p{s(rng), d(rng), sizes[rng() % 4]};
    auto prof = discretize(p, ProfileKind::ricker);
    if (build_circulant_unchecked(prof).stable()) return prof;
  }
}

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

TEST(BuildCirculant, ZeroProfileIsIdentity) {
  const auto op = build_circulant(ConnectivityProfile::zeros(6));
  EXPECT_TRUE(op.stable());
  EXPECT_EQ(op.u(), Matrix::Zero(6, 6));
  EXPECT_EQ(op.q(), Matrix::Identity(6, 6));
}

TEST(BuildCirculant, HandProfileMatchesNaiveInverse) {
  const auto op = build_circulant(hand_profile());
  const auto oracle = test::naive_equilibrium_matrix(std::vector<double>{0, 0.1, 0, 0.1});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(op.q()(i, j), oracle[i * 4 + j], 1e-12);
  // Closed form: circulant with first row (49, 5, 1, 5) / 48.
  EXPECT_NEAR(op.q()(0, 0), 49.0 / 48.0, 1e-12);
  EXPECT_NEAR(op.q()(0, 1), 5.0 / 48.0, 1e-12);
  EXPECT_NEAR(op.q()(0, 2), 1.0 / 48.0, 1e-12);
}

TEST(BuildCirculant, ShippedConfigurationIsStable) {
  const auto op = build_circulant(discretize({3.0, 0.2, 64}, ProfileKind::ricker));
  EXPECT_TRUE(op.stable());
  EXPECT_LT(op.max_real_eigenvalue(), 1.0);
}

TEST(BuildCirculant, CirculantClosureAndZeroDiagonal) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const auto prof = random_stable_profile(rng);
    const auto op = build_circulant(prof);
    const auto f = static_cast<Eigen::Index>(prof.size());
    for (Eigen::Index i = 0; i < f; ++i) {
      EXPECT_EQ(op.u()(i, i), 0.0);
      for (Eigen::Index j = 0; j < f; ++j) EXPECT_EQ(op.u()(i, j), op.u()(0, (j - i + f) % f));
    }
    // Row i is the profile rotated so its center sits on column i.
    for (std::size_t idx = 0; idx < prof.size(); ++idx) {
      const long off = offset_of(idx, prof.size());
      EXPECT_EQ(op.u()(2 % f, (2 + off + f) % f), prof[idx]);
    }
    const Matrix residual = (Matrix::Identity(f, f) - op.u()) * op.q() - Matrix::Identity(f, f);
    EXPECT_LT(residual.norm() / std::sqrt(static_cast<double>(f)), 1e-10);
  }
}

TEST(BuildCirculant, SpectrumMatchesDenseEigensolver) {
  std::mt19937_64 rng(11);
  for (std::size_t f : {2u, 3u, 4u, 5u, 8u, 9u, 16u}) {
    auto w = test::random_vector(f, rng, -0.3, 0.3);
    const auto prof = ConnectivityProfile::free(w);
    const auto op = build_circulant_unchecked(prof);
    Eigen::EigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(op.u()));
    std::vector<std::complex<double>> dense(es.eigenvalues().begin(), es.eigenvalues().end());
    auto spectral = op.spectrum();
    ASSERT_EQ(dense.size(), spectral.size());
    // Multiset match by greedy nearest pairing.
    for (const auto& lambda : spectral) {
      auto it = std::min_element(dense.begin(), dense.end(),
                                 [&](auto a, auto b) { return std::abs(a - lambda) < std::abs(b - lambda); });
      EXPECT_LT(std::abs(*it - lambda), 1e-8) << "f=" << f;
      dense.erase(it);
    }
  }
}

TEST(BuildCirculant, RejectsUnstableProfile) {
  // Uniform positive coupling: DC eigenvalue = sum of weights = 1.4.
  const auto prof = ConnectivityProfile::from_circular(std::vector<double>{0, 0.7, 0, 0.7});
  try {
    build_circulant(prof);
    FAIL() << "expected UnstableOperator";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::unstable_operator);
  }
  const auto op = build_circulant_unchecked(prof);
  EXPECT_FALSE(op.stable());
  EXPECT_NEAR(op.max_real_eigenvalue(), 1.4, 1e-12);
  EXPECT_THROW(apply_equilibrium_dense(op, Matrix::Ones(4, 1)), Error);
  EXPECT_THROW(apply_equilibrium_fft(prof, Matrix::Ones(4, 1)), Error);
}

TEST(BuildCirculant, StabilityMarginIsEnforced) {
  // DC eigenvalue exactly 1 - margin / 2 lies inside the rejection band.
  const double w = (1.0 - kStabilityMargin / 2) / 2;
  EXPECT_FALSE(build_circulant_unchecked(ConnectivityProfile::from_circular(std::vector<double>{0, w, 0, w})).stable());
}

TEST(ApplyDense, IdentityAndBasisColumn) {
  std::mt19937_64 rng(5);
  const Matrix z = random_matrix(5, 7, rng);
  EXPECT_EQ(apply_equilibrium_dense(build_circulant(ConnectivityProfile::zeros(5)), z), z);

  const auto op = build_circulant(hand_profile());
  const Matrix e1 = Matrix::Identity(4, 4).col(0);
  const Matrix out = apply_equilibrium_dense(op, e1);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(out(i, 0), op.q()(i, 0));
}

TEST(ApplyDense, InverseConsistency) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 20; ++t) {
    const auto op = build_circulant(random_stable_profile(rng));
    const auto f = static_cast<Eigen::Index>(op.size());
    const Matrix z_hat = random_matrix(f, 9, rng);
    const Matrix z = apply_equilibrium_dense(op, z_hat);
    const Matrix back = (Matrix::Identity(f, f) - op.u()) * z;
    EXPECT_LT((back - z_hat).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(ApplyDense, ShapeMismatch) {
  const auto op = build_circulant(hand_profile());
  EXPECT_THROW(apply_equilibrium_dense(op, Matrix::Ones(5, 2)), Error);
}

TEST(ApplyFft, ZeroProfile) {
  std::mt19937_64 rng(9);
  const Matrix z = random_matrix(6, 4, rng);
  EXPECT_LT((apply_equilibrium_fft(ConnectivityProfile::zeros(6), z) - z).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ApplyFft, HandProfileMatchesNaiveInverse) {
  std::mt19937_64 rng(10);
  const Matrix z = random_matrix(4, 3, rng);
  const Matrix out = apply_equilibrium_fft(hand_profile(), z);
  const auto q = test::naive_equilibrium_matrix(std::vector<double>{0, 0.1, 0, 0.1});
  for (int i = 0; i < 4; ++i)
    for (int c = 0; c < 3; ++c) {
      double expect = 0.0;
      for (int j = 0; j < 4; ++j) expect += q[i * 4 + j] * z(j, c);
      EXPECT_NEAR(out(i, c), expect, 1e-10);
    }
}

TEST(ApplyFft, MatchesDensePathOnRandomProfiles) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 40; ++t) {
    const auto prof = t == 0 ? discretize({3.0, 0.2, 64}, ProfileKind::ricker) : random_stable_profile(rng);
    const auto op = build_circulant(prof);
    const Matrix z = random_matrix(static_cast<Eigen::Index>(prof.size()), 13, rng);
    EXPECT_LT((apply_equilibrium_fft(prof, z) - apply_equilibrium_dense(op, z)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(ApplyFft, BatchedAdjointMatchesTranspose) {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 10; ++t) {
    // Adaptive-style asymmetric profile so Q^T != Q.
    auto w = test::random_vector(8, rng, -0.15, 0.15);
    const auto prof = ConnectivityProfile::free(w);
    const auto op = build_circulant(prof);
    const FftEquilibrium solver(prof);
    const std::size_t batch = 3, cols = 5;
    const auto in = test::random_vector(batch * 8 * cols, rng);
    std::vector<double> fwd(in.size()), adj(in.size()), dense_fwd(in.size()), dense_adj(in.size());
    solver.solve(in.data(), fwd.data(), batch, cols, false);
    solver.solve(in.data(), adj.data(), batch, cols, true);
    apply_batched(op.q(), in.data(), dense_fwd.data(), batch, cols);
    apply_batched(op.q().transpose(), in.data(), dense_adj.data(), batch, cols, 2);
    EXPECT_LT(test::max_abs_diff(fwd, dense_fwd), 1e-12);
    EXPECT_LT(test::max_abs_diff(adj, dense_adj), 1e-12);
  }
}

TEST(EquilibriumBackward, IdentityAndSymmetricCase) {
  std::mt19937_64 rng(14);
  const Matrix g = random_matrix(5, 3, rng);
  EXPECT_EQ(equilibrium_backward(build_circulant(ConnectivityProfile::zeros(5)), g), g);

  const auto op = build_circulant(discretize({2.0, 0.2, 9}, ProfileKind::ricker));
  const Matrix h = random_matrix(9, 4, rng);
  EXPECT_LT((equilibrium_backward(op, h) - apply_equilibrium_dense(op, h)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(EquilibriumBackward, ExactAdjoint) {
  std::mt19937_64 rng(15);
  for (int t = 0; t < 20; ++t) {
    const auto op = build_circulant(ConnectivityProfile::free(test::random_vector(7, rng, -0.1, 0.1)));
    const Matrix a = random_matrix(7, 1, rng), b = random_matrix(7, 1, rng);
    const double lhs = (apply_equilibrium_dense(op, a).transpose() * b)(0, 0);
    const double rhs = (a.transpose() * equilibrium_backward(op, b))(0, 0);
    EXPECT_NEAR(lhs, rhs, 1e-10);
  }
}

TEST(EquilibriumBackward, MatchesFiniteDifferencesOfQuadraticLoss) {
  std::mt19937_64 rng(16);
  for (int t = 0; t < 5; ++t) {
    const auto op = build_circulant(ConnectivityProfile::free(test::random_vector(6, rng, -0.15, 0.15)));
    const Matrix target = random_matrix(6, 3, rng);
    Matrix z_hat = random_matrix(6, 3, rng);
    std::vector<double> x(z_hat.data(), z_hat.data() + z_hat.size());
    auto loss = [&] {
      const Matrix z = apply_equilibrium_dense(op, ConstMatrixMap(x.data(), 6, 3));
      return 0.5 * (z - target).squaredNorm();
    };
    const auto fd = test::central_difference(x, loss, 1e-6);
    const Matrix grad = equilibrium_backward(op, apply_equilibrium_dense(op, z_hat) - target);
    EXPECT_LT(test::relative_error(std::span(grad.data(), grad.size()), fd), 1e-5);
  }
}

TEST(EquilibriumParamBackward, ZeroGradAndCenter) {
  std::mt19937_64 rng(17);
  const auto op = build_circulant(hand_profile());
  const Matrix z = random_matrix(4, 5, rng);
  const auto g0 = equilibrium_param_backward(op, z, Matrix::Zero(4, 5));
  for (double v : g0) EXPECT_EQ(v, 0.0);
  const auto g = equilibrium_param_backward(op, z, random_matrix(4, 5, rng));
  EXPECT_EQ(g[0], 0.0);
}

TEST(EquilibriumParamBackward, MatchesFiniteDifferencesPerOffset) {
  std::mt19937_64 rng(18);
  for (int t = 0; t < 10; ++t) {
    std::vector<double> by_offset = test::random_vector(4, rng, -0.2, 0.2);
    by_offset[0] = 0.0;
    const Matrix z_hat = random_matrix(4, 6, rng), target = random_matrix(4, 6, rng);
    auto loss = [&] {
      const auto op = build_circulant(ConnectivityProfile::from_circular(by_offset));
      return 0.5 * (apply_equilibrium_dense(op, z_hat) - target).squaredNorm();
    };
    const auto op = build_circulant(ConnectivityProfile::from_circular(by_offset));
    const auto analytic = equilibrium_param_backward(op, z_hat, apply_equilibrium_dense(op, z_hat) - target);
    auto fd = test::central_difference(by_offset, loss, 1e-6);
    fd[0] = 0.0;
    EXPECT_EQ(analytic[0], 0.0);
    EXPECT_LT(test::relative_error(analytic, fd), 1e-4);
  }
}

}  // namespace
}  // namespace semlc
