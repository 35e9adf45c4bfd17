#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "semlc/error.hpp"

namespace semlc::net {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment estimates for one parameter tensor.
struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

/// Bias-corrected Adam. `step` is the 1-based update count already
/// incremented for this update. Updates the moments in place and returns the
/// step to subtract from the parameters (scaled by `learning_rate`).
inline std::vector<double> adam_direction(std::span<const double> grads, AdamMoments& state, std::size_t step,
                                          const AdamConfig& cfg, double learning_rate) {
  if (state.m.size() != grads.size()) {
    state.m.assign(grads.size(), 0.0);
    state.v.assign(grads.size(), 0.0);
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  std::vector<double> delta(grads.size());
  for (std::size_t i = 0; i < grads.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    delta[i] = learning_rate * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + cfg.eps);
  }
  return delta;
}

/// One Adam update applied in place.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamMoments& state, std::size_t step,
                      const AdamConfig& cfg) {
  require(params.size() == grads.size(), ErrorKind::shape_mismatch, "adam: params and grads differ in size");
  const auto delta = adam_direction(grads, state, step, cfg, cfg.learning_rate);
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= delta[i];
}

inline nlohmann::json to_json(const AdamMoments& s) { return {{"m", s.m}, {"v", s.v}}; }

inline AdamMoments moments_from_json(const nlohmann::json& j) {
  return {j.at("m").get<std::vector<double>>(), j.at("v").get<std::vector<double>>()};
}

}  // namespace semlc::net
