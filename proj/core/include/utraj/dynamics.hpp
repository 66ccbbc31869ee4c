#pragma once

// Agent motion models, their linearizations, and propagation of per-mode
// control Gaussians into state/position space.

#include <span>
#include <string_view>
#include <vector>

#include "utraj/core.hpp"

namespace utraj::dynamics {

enum class DynamicsKind {
  SingleIntegrator,  // state [x, y],          control [vx, vy]
  DoubleIntegrator,  // state [x, y, vx, vy],  control [ax, ay]
  Bicycle,           // state [x, y, theta, v], control [a, steering angle]
};

inline constexpr double kDefaultWheelbase = 3.0;

struct DynamicsModel {
  DynamicsKind kind = DynamicsKind::DoubleIntegrator;
  double dt = 0.1;
  double wheelbase = kDefaultWheelbase;

  [[nodiscard]] int state_dim() const;
  [[nodiscard]] int control_dim() const { return 2; }
  [[nodiscard]] bool is_linear() const { return kind != DynamicsKind::Bicycle; }
};

std::string_view to_string(DynamicsKind kind);

/// Forecasting model used for each agent type.
DynamicsModel model_for(AgentType type, double dt);

/// One step forward. Double-integrator positions use the exact
/// constant-acceleration update; the bicycle uses forward Euler.
VecX step_mean(const DynamicsModel& model, const VecX& state, const VecX& control);

struct Linearization {
  MatX a;  // d f / d state
  MatX b;  // d f / d control
};

Linearization jacobians(const DynamicsModel& model, const VecX& state, const VecX& control);

/// Derivatives of the Jacobian entries with respect to each state and control
/// coordinate (all zero for the linear models). Used for exact backward passes
/// through covariance propagation.
struct LinearizationSensitivity {
  std::vector<MatX> da_dstate;    // state_dim entries, each state_dim x state_dim
  std::vector<MatX> da_dcontrol;  // control_dim entries
  std::vector<MatX> db_dstate;    // state_dim entries, each state_dim x control_dim
  std::vector<MatX> db_dcontrol;
};

LinearizationSensitivity jacobian_sensitivity(const DynamicsModel& model, const VecX& state,
                                              const VecX& control);

/// One mixture component of a control distribution. The covariance may be
/// singular (e.g. zero).
struct ControlMode {
  double weight = 1.0;
  Vec2 mean = Vec2::Zero();
  Mat2 cov = Mat2::Zero();
};

struct PropagatedMode {
  double weight = 1.0;
  VecX mean;
  MatX cov;
  Vec2 position_mean;
  Mat2 position_cov;
};

/// For each mode k: mean_k = f(state, u_k), cov_k = A cov A^T + B Sigma_u,k B^T
/// linearized at (state, u_k). Weights are carried through unchanged.
std::vector<PropagatedMode> propagate_uncertainty(const DynamicsModel& model, const VecX& state,
                                                  const MatX& state_cov,
                                                  std::span<const ControlMode> controls);

/// Position marginals as a mixture (covariances regularized by kEpsReg).
Gmm2 position_mixture(std::span<const PropagatedMode> modes);

}  // namespace utraj::dynamics
