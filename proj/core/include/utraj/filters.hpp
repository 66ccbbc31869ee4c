#pragma once

// Kalman and extended Kalman filters standing in for upstream perception.
// Measurements are positions only: H = [I2 0].

#include <cstdint>
#include <map>

#include "utraj/core.hpp"
#include "utraj/dynamics.hpp"

namespace utraj::filters {

struct FilterConfig {
  VecX process_noise_std;  // per state dimension
  double meas_noise_std = 0.1;
  MatX init_cov;  // identity by default

  void validate(int state_dim) const;
};

/// Per-dimension process-noise std devs for a random acceleration of
/// `accel_std` acting on a constant-velocity state [x, y, vx, vy].
VecX constant_velocity_process_std(double dt, double accel_std);

/// Defaults: constant-velocity KF (accel 0.5) for particles and pedestrians,
/// bicycle EKF (0.5 m/s^2, 0.2 rad/s) for vehicles; 0.1 m measurements.
FilterConfig default_filter_config(AgentType type, double dt);

/// Filter used for each agent type: constant-velocity KF or bicycle EKF.
dynamics::DynamicsModel filter_model_for(AgentType type, double dt);

struct Estimate {
  VecX state;
  MatX cov;
};

struct UpdateResult {
  VecX state;
  MatX cov;
  Vec2 innovation;
};

/// state- = A state, cov- = A cov A^T + diag(process_noise_std^2). A linear model is required.
Estimate kf_predict(const VecX& state, const MatX& cov, const dynamics::DynamicsModel& model,
                    const FilterConfig& config);

/// Joseph-form position update. Throws SingularInnovationCovariance.
UpdateResult kf_update(const VecX& state, const MatX& cov, const Vec2& measurement,
                       const FilterConfig& config);

/// Bicycle EKF: predict with zero nominal control, then position update.
Estimate ekf_step(const VecX& state, const MatX& cov, const Vec2& measurement,
                  const dynamics::DynamicsModel& model, const FilterConfig& config);

using FilterConfigs = std::map<AgentType, FilterConfig>;

/// Corrupts GT positions with N(0, meas_noise_std^2) noise and filters every
/// agent forward. The first step records the identity-initialized estimate.
Scene track_scene(const Scene& scene, const FilterConfigs& configs, std::uint64_t seed,
                  int threads = 1);

/// Position RMSE of the tracked means against GT over steps >= burn_in.
double position_rmse(const Scene& tracked, int burn_in = 0);

}  // namespace utraj::filters
