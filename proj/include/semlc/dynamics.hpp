#pragma once

// Forward-Euler integration of dz/dt = -z + U z + z_hat, used as an
// independent check on the closed-form equilibrium.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "semlc/error.hpp"
#include "semlc/operator.hpp"

namespace semlc {

struct DynamicsConfig {
  double dt = 0.01;
  std::size_t max_steps = 1'000'000;
  /// Converged once max |dz/dt| falls below this.
  double convergence_eps = 1e-10;
  /// Integration aborts once max |z| exceeds this.
  double divergence_cutoff = 1e12;

  void validate() const {
    require(dt > 0.0 && dt <= 0.1, ErrorKind::invalid_parameter, "dt must lie in (0, 0.1]");
    require(max_steps > 0, ErrorKind::invalid_parameter, "max_steps must be positive");
    require(convergence_eps > 0.0, ErrorKind::invalid_parameter, "convergence_eps must be positive");
  }
};

struct DynamicsResult {
  Eigen::VectorXd z;
  std::size_t steps = 0;
  bool converged = false;
};

/// Observer receives (step, max |dz/dt|, max |z|) before each update.
using DynamicsObserver = std::function<void(std::size_t, double, double)>;

inline DynamicsResult integrate(const LateralOperator& op, const Eigen::Ref<const Eigen::VectorXd>& z_hat,
                                const DynamicsConfig& cfg, const Eigen::Ref<const Eigen::VectorXd>& z0,
                                const DynamicsObserver& observer = {}) {
  cfg.validate();
  require(static_cast<std::size_t>(z_hat.size()) == op.size() && z0.size() == z_hat.size(),
          ErrorKind::shape_mismatch, "z_hat and z0 must have the operator's length");
  const Eigen::MatrixXd u = op.u();
  DynamicsResult r{z0, 0, false};
  Eigen::VectorXd dzdt(z0.size());
  for (; r.steps < cfg.max_steps; ++r.steps) {
    dzdt.noalias() = u * r.z;
    dzdt += z_hat - r.z;
    const double rate = dzdt.cwiseAbs().maxCoeff();
    const double magnitude = r.z.cwiseAbs().maxCoeff();
    if (observer) observer(r.steps, rate, magnitude);
    if (!std::isfinite(rate) || magnitude > cfg.divergence_cutoff) return r;
    if (rate < cfg.convergence_eps) {
      r.converged = true;
      return r;
    }
    r.z += cfg.dt * dzdt;
  }
  return r;
}

}  // namespace semlc
