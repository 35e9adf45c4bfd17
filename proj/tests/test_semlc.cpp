#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "semlc/semlc.hpp"
#include "test_util.hpp"

namespace semlc {
namespace {

Tensor random_tensor(Shape s, std::mt19937_64& rng) { return random_normal(s, rng); }

double quadratic_loss(const Tensor& out, const Tensor& target) {
  double l = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) l += 0.5 * (out[i] - target[i]) * (out[i] - target[i]);
  return l;
}

Tensor loss_grad(const Tensor& out, const Tensor& target) {
  Tensor g(out.shape());
  for (std::size_t i = 0; i < out.size(); ++i) g[i] = out[i] - target[i];
  return g;
}

TEST(SemlcForward, ZeroProfileIsIdentity) {
  std::mt19937_64 rng(1);
  const SemlcLayer layer(Variant::fixed, ConnectivityProfile::zeros(5));
  const Tensor x = random_tensor({2, 5, 3, 4}, rng);
  EXPECT_EQ(layer.forward(x), x);
}

TEST(SemlcForward, SingleColumnReducesToDenseApply) {
  std::mt19937_64 rng(2);
  const SemlcLayer layer(Variant::fixed, ProfileParams{3.0, 0.2, 16});
  const Tensor x = random_tensor({1, 16, 1, 1}, rng);
  const Matrix expect = apply_equilibrium_dense(layer.op(), ConstMatrixMap(x.data(), 16, 1));
  const Tensor y = layer.forward(x);
  for (int i = 0; i < 16; ++i) EXPECT_EQ(y[i], expect(i, 0));
}

TEST(SemlcForward, PerColumnMatchesNaiveOracle) {
  std::mt19937_64 rng(3);
  std::vector<double> by_offset = test::random_vector(4, rng, -0.2, 0.2);
  by_offset[0] = 0.0;
  const SemlcLayer layer(Variant::adaptive, ConnectivityProfile::from_circular(by_offset));
  const auto q = test::naive_equilibrium_matrix(by_offset);
  const Tensor x = random_tensor({2, 4, 3, 3}, rng);
  const Tensor y = layer.forward(x);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t py = 0; py < 3; ++py)
      for (std::size_t px = 0; px < 3; ++px)
        for (std::size_t i = 0; i < 4; ++i) {
          double expect = 0.0;
          for (std::size_t j = 0; j < 4; ++j) expect += q[i * 4 + j] * x.at(b, j, py, px);
          EXPECT_NEAR(y.at(b, i, py, px), expect, 1e-10);
        }
}

TEST(SemlcForward, ShapeMismatch) {
  const SemlcLayer layer(Variant::fixed, ProfileParams{3.0, 0.2, 8});
  EXPECT_THROW(layer.forward(Tensor({1, 7, 2, 2})), Error);
}

TEST(SemlcForward, Linearity) {
  std::mt19937_64 rng(4);
  const SemlcLayer layer(Variant::fixed, ProfileParams{3.0, 0.2, 12});
  const Tensor x = random_tensor({2, 12, 3, 3}, rng), y = random_tensor({2, 12, 3, 3}, rng);
  const double a = 1.7, b = -0.4;
  Tensor mix(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) mix[i] = a * x[i] + b * y[i];
  const Tensor fx = layer.forward(x), fy = layer.forward(y), fm = layer.forward(mix);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(fm[i], a * fx[i] + b * fy[i], 1e-10);
}

TEST(SemlcForward, SpatialEquivariance) {
  std::mt19937_64 rng(5);
  const SemlcLayer layer(Variant::fixed, ProfileParams{2.0, 0.2, 6});
  const Tensor x = random_tensor({1, 6, 2, 3}, rng);
  // Swap spatial positions (0,0) <-> (1,2) in every channel.
  auto swap_positions = [](Tensor t) {
    for (std::size_t c = 0; c < t.shape().c; ++c) std::swap(t.at(0, c, 0, 0), t.at(0, c, 1, 2));
    return t;
  };
  EXPECT_EQ(layer.forward(swap_positions(x)), swap_positions(layer.forward(x)));
}

TEST(SemlcForward, ChannelRotationCovariance) {
  std::mt19937_64 rng(6);
  auto w = test::random_vector(8, rng, -0.1, 0.1);
  const SemlcLayer layer(Variant::adaptive, ConnectivityProfile::free(w));
  const Tensor x = random_tensor({2, 8, 2, 2}, rng);
  auto rotate = [](const Tensor& t, std::size_t r) {
    Tensor out(t.shape());
    const Shape& s = t.shape();
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < s.c; ++c)
        for (std::size_t p = 0; p < s.plane(); ++p)
          out[(n * s.c + (c + r) % s.c) * s.plane() + p] = t[(n * s.c + c) * s.plane() + p];
    return out;
  };
  for (std::size_t r : {1u, 3u, 7u}) {
    const Tensor lhs = layer.forward(rotate(x, r)), rhs = rotate(layer.forward(x), r);
    for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-12);
  }
}

TEST(SemlcBackward, FixedAndGaussianHaveNoParamGradients) {
  std::mt19937_64 rng(7);
  for (Variant v : {Variant::fixed, Variant::gaussian}) {
    const SemlcLayer layer(v, ProfileParams{3.0, 0.2, 8});
    EXPECT_EQ(layer.trainable_count(), 0u);
    const Tensor x = random_tensor({1, 8, 2, 2}, rng);
    EXPECT_TRUE(layer.backward(x, x).params.empty());
  }
}

TEST(SemlcBackward, InputGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  const SemlcLayer layer(Variant::adaptive, ConnectivityProfile::free(test::random_vector(6, rng, -0.15, 0.15)));
  Tensor x = random_tensor({2, 6, 2, 2}, rng);
  const Tensor target = random_tensor(x.shape(), rng);
  const auto analytic = layer.backward(x, loss_grad(layer.forward(x), target)).input;
  auto fd = test::central_difference(x.vec(), [&] { return quadratic_loss(layer.forward(x), target); }, 1e-6);
  EXPECT_LT(test::relative_error(analytic.vec(), fd), 1e-6);
}

TEST(SemlcBackward, ParametricMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 5; ++t) {
    std::uniform_real_distribution<double> s(1.5, 5.0), d(0.05, 0.3);
    std::vector<double> theta{s(rng), d(rng)};
    const Tensor x = random_tensor({2, 8, 3, 3}, rng), target = random_tensor({2, 8, 3, 3}, rng);
    auto loss = [&] {
      const SemlcLayer probe(Variant::parametric, ProfileParams{theta[0], theta[1], 8});
      return quadratic_loss(probe.forward(x), target);
    };
    const SemlcLayer layer(Variant::parametric, ProfileParams{theta[0], theta[1], 8});
    const auto g = layer.backward(x, loss_grad(layer.forward(x), target)).params;
    ASSERT_EQ(g.size(), 2u);
    const auto fd = test::central_difference(theta, loss, 1e-5);
    EXPECT_LT(std::abs(g[0] - fd[0]) / std::max(std::abs(fd[0]), 1e-8), 1e-4);
    EXPECT_LT(std::abs(g[1] - fd[1]) / std::max(std::abs(fd[1]), 1e-8), 1e-4);
  }
}

TEST(SemlcBackward, AdaptiveMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  for (int t = 0; t < 5; ++t) {
    SemlcLayer layer(Variant::adaptive, ProfileParams{2.0, 0.2, 4});
    std::vector<double> theta = layer.trainables();
    ASSERT_EQ(theta.size(), 3u);
    for (auto& v : theta) v += std::uniform_real_distribution<double>(-0.05, 0.05)(rng);
    layer.set_trainables(theta);
    const Tensor x = random_tensor({3, 4, 2, 2}, rng), target = random_tensor({3, 4, 2, 2}, rng);
    auto loss = [&] {
      SemlcLayer probe = layer;
      probe.set_trainables(theta);
      return quadratic_loss(probe.forward(x), target);
    };
    const auto g = layer.backward(x, loss_grad(layer.forward(x), target)).params;
    const auto fd = test::central_difference(theta, loss, 1e-6);
    EXPECT_LT(test::relative_error(g, fd), 1e-4);
  }
}

TEST(SemlcLayer, TrainableCounts) {
  const ProfileParams p{3.0, 0.2, 16};
  EXPECT_EQ(SemlcLayer(Variant::fixed, p).trainable_count(), 0u);
  EXPECT_EQ(SemlcLayer(Variant::gaussian, p).trainable_count(), 0u);
  EXPECT_EQ(SemlcLayer(Variant::parametric, p).trainable_count(), 2u);
  EXPECT_EQ(SemlcLayer(Variant::adaptive, p).trainable_count(), 15u);
}

TEST(SemlcLayer, AdaptiveKeepsCenterZeroAcrossUpdates) {
  std::mt19937_64 rng(11);
  SemlcLayer layer(Variant::adaptive, ProfileParams{3.0, 0.2, 9});
  for (int step = 0; step < 50; ++step) {
    auto theta = layer.trainables();
    for (auto& v : theta) v += std::uniform_real_distribution<double>(-0.01, 0.01)(rng);
    layer.try_set_trainables(theta);
    EXPECT_EQ(layer.profile()[layer.profile().center()], 0.0);
    EXPECT_EQ(layer.op().u()(3, 3), 0.0);
  }
}

TEST(SemlcLayer, RejectsUnstableOrInvalidUpdates) {
  SemlcLayer param(Variant::parametric, ProfileParams{3.0, 0.2, 16});
  const auto before = param.profile();
  EXPECT_FALSE(param.try_set_trainables(std::vector<double>{3.0, 1.5}));
  EXPECT_FALSE(param.try_set_trainables(std::vector<double>{-1.0, 0.2}));
  EXPECT_EQ(param.profile(), before);

  SemlcLayer adaptive(Variant::adaptive, ProfileParams{3.0, 0.2, 4});
  EXPECT_FALSE(adaptive.try_set_trainables(std::vector<double>{0.6, 0.6, 0.6}));
  EXPECT_TRUE(adaptive.op().stable());
}

TEST(SemlcLayer, JsonRoundTrip) {
  SemlcLayer layer(Variant::adaptive, ProfileParams{3.0, 0.2, 6});
  auto theta = layer.trainables();
  theta[0] += 0.01;
  layer.set_trainables(theta);
  const auto copy = SemlcLayer::from_json(nlohmann::json::parse(layer.to_json().dump()));
  EXPECT_EQ(copy.variant(), Variant::adaptive);
  EXPECT_EQ(copy.trainables(), layer.trainables());
}

// Direct per-element evaluation of the LRN formula.
Tensor naive_lrn(const LrnLayer& l, const Tensor& z) {
  const Shape& s = z.shape();
  Tensor out(s);
  for (std::size_t b = 0; b < s.n; ++b)
    for (long i = 0; i < static_cast<long>(s.c); ++i)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x) {
          double sum = 0.0;
          for (long j = i - l.depth_radius; j <= i + l.depth_radius; ++j)
            if (j >= 0 && j < static_cast<long>(s.c)) sum += z.at(b, j, y, x) * z.at(b, j, y, x);
          out.at(b, i, y, x) = z.at(b, i, y, x) / std::pow(l.k + l.alpha * sum, l.beta);
        }
  return out;
}

TEST(Lrn, AlphaZeroScalesByK) {
  std::mt19937_64 rng(12);
  const LrnLayer l{2, 0.0, 0.75, 2.0};
  const Tensor z = random_tensor({1, 5, 2, 2}, rng);
  const Tensor y = l.forward(z);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(y[i], z[i] / std::pow(2.0, 0.75), 1e-15);
}

TEST(Lrn, SingleChannelHandValue) {
  const LrnLayer l{1, 1.0, 1.0, 1.0};
  EXPECT_DOUBLE_EQ(l.forward(Tensor({1, 1, 1, 1}, 2.0))[0], 0.4);
}

TEST(Lrn, MatchesNaiveLoop) {
  std::mt19937_64 rng(13);
  const LrnLayer l{2, 0.3, 0.75, 2.0};
  const Tensor z = random_tensor({2, 7, 3, 3}, rng);
  const Tensor a = l.forward(z), b = naive_lrn(l, z);
  EXPECT_LT(test::max_abs_diff(a.vec(), b.vec()), 1e-12);
}

TEST(Lrn, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(14);
  const LrnLayer l{2, 0.5, 0.75, 2.0};
  Tensor z = random_tensor({2, 6, 2, 2}, rng);
  const Tensor target = random_tensor(z.shape(), rng);
  const Tensor analytic = l.backward(z, loss_grad(l.forward(z), target));
  const auto fd = test::central_difference(z.vec(), [&] { return quadratic_loss(l.forward(z), target); }, 1e-6);
  EXPECT_LT(test::relative_error(analytic.vec(), fd), 1e-6);
}

TEST(Lrn, InvalidParameters) {
  EXPECT_THROW((LrnLayer{0, 1e-4, 0.75, 2.0}.forward(Tensor({1, 2, 1, 1}))), Error);
  EXPECT_THROW((LrnLayer{2, 1e-4, 0.75, 0.0}.forward(Tensor({1, 2, 1, 1}))), Error);
}

}  // namespace
}  // namespace semlc
