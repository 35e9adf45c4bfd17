#pragma once

// Discretized lateral connectivity profiles along the channel axis.
//
// A profile of length f stores one weight per signed channel offset. The
// center (self-connection) sits at index f/2 and is always zero; for even f
// the covered offsets are -f/2 .. f/2-1.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "semlc/error.hpp"

namespace semlc {

enum class ProfileKind { ricker, gaussian, free };

inline std::string to_string(ProfileKind kind) {
  switch (kind) {
    case ProfileKind::ricker: return "ricker";
    case ProfileKind::gaussian: return "gaussian";
    case ProfileKind::free: return "free";
  }
  return "free";
}

inline ProfileKind profile_kind_from_string(const std::string& name) {
  if (name == "ricker") return ProfileKind::ricker;
  if (name == "gaussian") return ProfileKind::gaussian;
  if (name == "free") return ProfileKind::free;
  fail(ErrorKind::invalid_parameter, "unknown profile kind '" + name + "'");
}

struct ProfileParams {
  double sigma = 3.0;
  double delta = 0.2;
  std::size_t length = 64;

  bool operator==(const ProfileParams&) const = default;

  bool valid() const { return sigma > 0.0 && delta > 0.0 && delta < 1.0 && length >= 2; }

  void validate() const {
    require(length >= 2, ErrorKind::length_too_small,
            "profile length must be >= 2, got " + std::to_string(length));
    require(sigma > 0.0 && std::isfinite(sigma), ErrorKind::invalid_parameter,
            "sigma must be positive, got " + std::to_string(sigma));
    require(delta > 0.0 && delta < 1.0, ErrorKind::invalid_parameter,
            "delta must lie in (0, 1), got " + std::to_string(delta));
  }
};

inline std::size_t center_index(std::size_t length) { return length / 2; }

/// Signed channel offset represented by profile index `index`.
inline long offset_of(std::size_t index, std::size_t length) {
  return static_cast<long>(index) - static_cast<long>(center_index(length));
}

/// Maps a circular offset k in [0, f) to the profile index holding its weight.
inline std::size_t index_of_circular(std::size_t k, std::size_t length) {
  const std::size_t c = center_index(length);
  const std::size_t max_positive = length - 1 - c;
  const long signed_offset = k <= max_positive ? static_cast<long>(k)
                                               : static_cast<long>(k) - static_cast<long>(length);
  return static_cast<std::size_t>(static_cast<long>(c) + signed_offset);
}

/// Peak height 2 delta / (sqrt(3 sigma) pi^(1/4)) shared by both generators.
inline double wavelet_amplitude(const ProfileParams& p) {
  return 2.0 * p.delta / (std::sqrt(3.0 * p.sigma) * std::pow(std::numbers::pi, 0.25));
}

/// Damped Ricker (Mexican hat) wavelet.
inline double ricker(double x, const ProfileParams& p) {
  const double s2 = p.sigma * p.sigma;
  return wavelet_amplitude(p) * (1.0 - x * x / s2) * std::exp(-x * x / (2.0 * s2));
}

/// Gaussian control profile: the wavelet's envelope and amplitude without
/// the inhibitory lobes.
inline double gaussian(double x, const ProfileParams& p) {
  return wavelet_amplitude(p) * std::exp(-x * x / (2.0 * p.sigma * p.sigma));
}

class ConnectivityProfile {
 public:
  ConnectivityProfile(ProfileKind kind, ProfileParams params, std::vector<double> weights)
      : kind_(kind), params_(params), weights_(std::move(weights)) {
    require(weights_.size() >= 2, ErrorKind::length_too_small,
            "profile length must be >= 2, got " + std::to_string(weights_.size()));
    params_.length = weights_.size();
    weights_[center_index(weights_.size())] = 0.0;
  }

  /// Free-form profile; `weights` is indexed by profile index (center at f/2).
  static ConnectivityProfile free(std::vector<double> weights, ProfileParams params = {}) {
    return {ProfileKind::free, params, std::move(weights)};
  }

  /// Free-form profile from weights given by circular offset 0..f-1.
  static ConnectivityProfile from_circular(std::span<const double> by_offset, ProfileParams params = {}) {
    std::vector<double> w(by_offset.size());
    for (std::size_t k = 0; k < by_offset.size(); ++k) w[index_of_circular(k, w.size())] = by_offset[k];
    return free(std::move(w), params);
  }

  static ConnectivityProfile zeros(std::size_t length) { return free(std::vector<double>(length, 0.0)); }

  ProfileKind kind() const { return kind_; }
  const ProfileParams& params() const { return params_; }
  std::size_t size() const { return weights_.size(); }
  std::size_t center() const { return center_index(weights_.size()); }
  std::span<const double> weights() const { return weights_; }
  double operator[](std::size_t index) const { return weights_[index]; }

  /// Weight at circular offset k (0 <= k < f).
  double circular(std::size_t k) const { return weights_[index_of_circular(k % size(), size())]; }

  std::vector<double> circular_weights() const {
    std::vector<double> out(size());
    for (std::size_t k = 0; k < size(); ++k) out[k] = circular(k);
    return out;
  }

  bool operator==(const ConnectivityProfile&) const = default;

 private:
  ProfileKind kind_;
  ProfileParams params_;
  std::vector<double> weights_;
};

inline ConnectivityProfile discretize(const ProfileParams& params, ProfileKind kind) {
  params.validate();
  require(kind != ProfileKind::free, ErrorKind::invalid_parameter, "cannot discretize a free profile");
  std::vector<double> w(params.length);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double x = static_cast<double>(offset_of(i, w.size()));
    w[i] = kind == ProfileKind::ricker ? ricker(x, params) : gaussian(x, params);
  }
  return {kind, params, std::move(w)};
}

struct ProfileGradient {
  std::vector<double> d_sigma;
  std::vector<double> d_delta;
};

/// Analytic partial derivatives of every discretized weight w.r.t. sigma and delta.
inline ProfileGradient profile_gradient(const ProfileParams& params, ProfileKind kind) {
  params.validate();
  require(kind != ProfileKind::free, ErrorKind::invalid_parameter, "free profiles have no generator gradient");
  const std::size_t f = params.length;
  const double s = params.sigma;
  const double s2 = s * s;
  const double s3 = s2 * s;
  ProfileGradient g{std::vector<double>(f), std::vector<double>(f)};
  for (std::size_t i = 0; i < f; ++i) {
    if (i == center_index(f)) continue;
    const double x = static_cast<double>(offset_of(i, f));
    const double x2 = x * x;
    const double envelope = std::exp(-x2 / (2.0 * s2));
    const double amplitude = wavelet_amplitude(params);
    // The amplitude scales as delta / sqrt(sigma).
    if (kind == ProfileKind::ricker) {
      const double w = ricker(x, params);
      g.d_sigma[i] = -w / (2.0 * s) + amplitude * envelope * (x2 / s3) * (3.0 - x2 / s2);
      g.d_delta[i] = w / params.delta;
    } else {
      const double w = gaussian(x, params);
      g.d_sigma[i] = -w / (2.0 * s) + amplitude * envelope * x2 / s3;
      g.d_delta[i] = w / params.delta;
    }
  }
  return g;
}

inline nlohmann::json to_json(const ConnectivityProfile& p) {
  return {{"kind", to_string(p.kind())},
          {"sigma", p.params().sigma},
          {"delta", p.params().delta},
          {"length", p.size()},
          {"weights", std::vector<double>(p.weights().begin(), p.weights().end())}};
}

inline ConnectivityProfile profile_from_json(const nlohmann::json& j) {
  try {
    ProfileParams params{j.at("sigma").get<double>(), j.at("delta").get<double>(), j.at("length").get<std::size_t>()};
    auto weights = j.at("weights").get<std::vector<double>>();
    require(weights.size() == params.length, ErrorKind::data_format, "profile weights length disagrees with 'length'");
    return {profile_kind_from_string(j.at("kind").get<std::string>()), params, std::move(weights)};
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data_format, std::string("malformed profile record: ") + e.what());
  }
}

}  // namespace semlc
