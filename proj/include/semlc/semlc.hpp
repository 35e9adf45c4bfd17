#pragma once

// Semantic lateral connectivity layer and the LRN comparator. Both act on
// (B, C, H, W) feature tensors along the channel axis only.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "semlc/error.hpp"
#include "semlc/operator.hpp"
#include "semlc/profile.hpp"
#include "semlc/tensor.hpp"

namespace semlc {

enum class Variant {
  fixed,       ///< Ricker profile, frozen.
  adaptive,    ///< Ricker initialization; all non-center weights train.
  parametric,  ///< Ricker profile; sigma and delta train.
  gaussian,    ///< Gaussian control profile, frozen.
};

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::fixed: return "fixed";
    case Variant::adaptive: return "adaptive";
    case Variant::parametric: return "parametric";
    case Variant::gaussian: return "gaussian";
  }
  return "fixed";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "fixed") return Variant::fixed;
  if (s == "adaptive") return Variant::adaptive;
  if (s == "parametric") return Variant::parametric;
  if (s == "gaussian") return Variant::gaussian;
  fail(ErrorKind::invalid_parameter, "unknown SemLC variant '" + s + "'");
}

class SemlcLayer {
 public:
  SemlcLayer(Variant variant, const ProfileParams& params)
      : SemlcLayer(variant, discretize(params, variant == Variant::gaussian ? ProfileKind::gaussian
                                                                              : ProfileKind::ricker)) {}

  SemlcLayer(Variant variant, ConnectivityProfile profile)
      : variant_(variant), profile_(std::move(profile)), op_(build_circulant(profile_)) {
    if (variant_ == Variant::parametric)
      require(profile_.kind() == ProfileKind::ricker, ErrorKind::invalid_parameter,
              "parametric SemLC needs a ricker profile");
  }

  Variant variant() const { return variant_; }
  const ConnectivityProfile& profile() const { return profile_; }
  const LateralOperator& op() const { return op_; }
  std::size_t channels() const { return profile_.size(); }

  std::size_t trainable_count() const {
    switch (variant_) {
      case Variant::adaptive: return profile_.size() - 1;
      case Variant::parametric: return 2;
      default: return 0;
    }
  }

  /// adaptive: non-center weights in profile-index order; parametric: {sigma, delta}.
  std::vector<double> trainables() const {
    std::vector<double> out;
    if (variant_ == Variant::adaptive) {
      for (std::size_t i = 0; i < profile_.size(); ++i)
        if (i != profile_.center()) out.push_back(profile_[i]);
    } else if (variant_ == Variant::parametric) {
      out = {profile_.params().sigma, profile_.params().delta};
    }
    return out;
  }

  /// Replaces the trainables and rebuilds the operator. Returns false (leaving
  /// the layer untouched) when the new values are invalid or unstable.
  bool try_set_trainables(std::span<const double> values) {
    require(values.size() == trainable_count(), ErrorKind::shape_mismatch, "wrong number of SemLC trainables");
    if (values.empty()) return true;
    std::optional<ConnectivityProfile> next;
    if (variant_ == Variant::adaptive) {
      std::vector<double> w(profile_.size(), 0.0);
      std::size_t t = 0;
      for (std::size_t i = 0; i < w.size(); ++i)
        if (i != profile_.center()) w[i] = values[t++];
      next.emplace(ProfileKind::free, profile_.params(), std::move(w));
    } else {
      const ProfileParams p{values[0], values[1], profile_.size()};
      if (!p.valid()) return false;
      next.emplace(discretize(p, ProfileKind::ricker));
    }
    auto op = build_circulant_unchecked(*next);
    if (!op.stable()) return false;
    profile_ = std::move(*next);
    op_ = std::move(op);
    return true;
  }

  void set_trainables(std::span<const double> values) {
    require(try_set_trainables(values), ErrorKind::unstable_operator, "SemLC trainables rejected");
  }

  /// Applies Q to every depth-column of z_hat.
  Tensor forward(const Tensor& z_hat, std::size_t threads = 1) const {
    check_channels(z_hat);
    Tensor out(z_hat.shape());
    apply_batched(op_.q(), z_hat.data(), out.data(), z_hat.shape().n, z_hat.shape().plane(), threads);
    return out;
  }

  struct Gradients {
    Tensor input;
    std::vector<double> params;
  };

  Gradients backward(const Tensor& z_hat, const Tensor& grad_out) const {
    check_channels(z_hat);
    require_shape(grad_out, z_hat.shape(), "SemLC grad_out");
    const Shape& s = z_hat.shape();
    Gradients g{Tensor(s), {}};
    const Matrix qt = op_.q().transpose();
    apply_batched(qt, grad_out.data(), g.input.data(), s.n, s.plane());
    if (variant_ == Variant::fixed || variant_ == Variant::gaussian) return g;

    const auto f = static_cast<Eigen::Index>(s.c);
    const auto m = static_cast<Eigen::Index>(s.plane());
    Matrix dl_du = Matrix::Zero(f, f);
    for (std::size_t b = 0; b < s.n; ++b) {
      const ConstMatrixMap in(z_hat.data() + b * s.sample(), f, m);
      const ConstMatrixMap upstream(g.input.data() + b * s.sample(), f, m);
      const Matrix z = op_.q() * in;
      dl_du.noalias() += upstream * z.transpose();
    }
    const auto by_offset = circulant_offset_gradient(dl_du);
    std::vector<double> by_index(profile_.size(), 0.0);
    for (std::size_t k = 1; k < by_offset.size(); ++k) by_index[index_of_circular(k, by_offset.size())] = by_offset[k];

    if (variant_ == Variant::adaptive) {
      for (std::size_t i = 0; i < by_index.size(); ++i)
        if (i != profile_.center()) g.params.push_back(by_index[i]);
    } else {
      const auto dw = profile_gradient(profile_.params(), ProfileKind::ricker);
      double d_sigma = 0.0, d_delta = 0.0;
      for (std::size_t i = 0; i < by_index.size(); ++i) {
        d_sigma += by_index[i] * dw.d_sigma[i];
        d_delta += by_index[i] * dw.d_delta[i];
      }
      g.params = {d_sigma, d_delta};
    }
    return g;
  }

  nlohmann::json to_json() const {
    return {{"variant", to_string(variant_)}, {"profile", semlc::to_json(profile_)}, {"trainables", trainables()}};
  }

  static SemlcLayer from_json(const nlohmann::json& j) {
    try {
      return {variant_from_string(j.at("variant").get<std::string>()), profile_from_json(j.at("profile"))};
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::data_format, std::string("malformed SemLC layer state: ") + e.what());
    }
  }

 private:
  void check_channels(const Tensor& t) const {
    require(t.shape().c == profile_.size(), ErrorKind::shape_mismatch,
            "tensor has " + std::to_string(t.shape().c) + " channels, profile has " + std::to_string(profile_.size()));
  }

  Variant variant_;
  ConnectivityProfile profile_;
  LateralOperator op_;
};

/// Local response normalization over a truncated channel window.
struct LrnLayer {
  int depth_radius = 2;
  double alpha = 1e-4;
  double beta = 0.75;
  double k = 2.0;

  void validate() const {
    require(depth_radius >= 1 && beta > 0.0 && k > 0.0, ErrorKind::invalid_parameter,
            "LRN needs depth_radius >= 1, beta > 0, k > 0");
  }

  /// k + alpha * sum of squares over the window, for every element.
  Tensor scale(const Tensor& z) const {
    const Shape& s = z.shape();
    Tensor out(s);
    const long c = static_cast<long>(s.c);
    for (std::size_t n = 0; n < s.n; ++n)
      for (long i = 0; i < c; ++i) {
        const long lo = std::max(0L, i - depth_radius), hi = std::min(c - 1, i + depth_radius);
        double* dst = out.data() + (n * s.c + static_cast<std::size_t>(i)) * s.plane();
        for (std::size_t p = 0; p < s.plane(); ++p) dst[p] = 0.0;
        for (long j = lo; j <= hi; ++j) {
          const double* src = z.data() + (n * s.c + static_cast<std::size_t>(j)) * s.plane();
          for (std::size_t p = 0; p < s.plane(); ++p) dst[p] += src[p] * src[p];
        }
        for (std::size_t p = 0; p < s.plane(); ++p) dst[p] = k + alpha * dst[p];
      }
    return out;
  }

  Tensor forward(const Tensor& z) const {
    validate();
    const Tensor sc = scale(z);
    Tensor out(z.shape());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] * std::pow(sc[i], -beta);
    return out;
  }

  Tensor backward(const Tensor& z, const Tensor& grad_out) const {
    require_shape(grad_out, z.shape(), "LRN grad_out");
    const Shape& s = z.shape();
    const Tensor sc = scale(z);
    // t_i = g_i z_i s_i^(-beta-1), scattered back over each window.
    Tensor t(s);
    for (std::size_t i = 0; i < z.size(); ++i) t[i] = grad_out[i] * z[i] * std::pow(sc[i], -beta - 1.0);
    Tensor grad(s);
    const long c = static_cast<long>(s.c);
    for (std::size_t n = 0; n < s.n; ++n)
      for (long j = 0; j < c; ++j) {
        const long lo = std::max(0L, j - depth_radius), hi = std::min(c - 1, j + depth_radius);
        const std::size_t base = (n * s.c + static_cast<std::size_t>(j)) * s.plane();
        for (std::size_t p = 0; p < s.plane(); ++p) {
          double acc = 0.0;
          for (long i = lo; i <= hi; ++i) acc += t[(n * s.c + static_cast<std::size_t>(i)) * s.plane() + p];
          grad[base + p] = grad_out[base + p] * std::pow(sc[base + p], -beta) - 2.0 * alpha * beta * z[base + p] * acc;
        }
      }
    return grad;
  }

  nlohmann::json to_json() const {
    return {{"depth_radius", depth_radius}, {"alpha", alpha}, {"beta", beta}, {"k", k}};
  }
};

}  // namespace semlc
