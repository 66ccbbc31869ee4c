#include "utraj/dynamics.hpp"

#include <cmath>
#include <string>

namespace utraj::dynamics {

namespace {

void check_dims(const DynamicsModel& model, const VecX& state, const VecX& control) {
  if (state.size() != model.state_dim() || control.size() != model.control_dim()) {
    throw Error(ErrorCode::DimensionMismatch,
                std::string(to_string(model.kind)) + ": expected state " +
                    std::to_string(model.state_dim()) + " / control 2, got " +
                    std::to_string(state.size()) + " / " + std::to_string(control.size()));
  }
}

}  // namespace

int DynamicsModel::state_dim() const {
  switch (kind) {
    case DynamicsKind::SingleIntegrator: return 2;
    case DynamicsKind::DoubleIntegrator: return 4;
    case DynamicsKind::Bicycle: return 4;
  }
  return 0;
}

std::string_view to_string(DynamicsKind kind) {
  switch (kind) {
    case DynamicsKind::SingleIntegrator: return "single_integrator";
    case DynamicsKind::DoubleIntegrator: return "double_integrator";
    case DynamicsKind::Bicycle: return "bicycle";
  }
  return "unknown";
}

DynamicsModel model_for(AgentType type, double dt) {
  switch (type) {
    case AgentType::Particle: return {DynamicsKind::DoubleIntegrator, dt};
    case AgentType::Pedestrian: return {DynamicsKind::SingleIntegrator, dt};
    case AgentType::Vehicle: return {DynamicsKind::Bicycle, dt};
  }
  throw Error(ErrorCode::InvalidArgument, "unknown agent type");
}

VecX step_mean(const DynamicsModel& model, const VecX& state, const VecX& control) {
  check_dims(model, state, control);
  const double dt = model.dt;
  VecX next(state.size());
  switch (model.kind) {
    case DynamicsKind::SingleIntegrator:
      next = state + dt * control;
      break;
    case DynamicsKind::DoubleIntegrator:
      next(0) = state(0) + dt * state(2) + 0.5 * dt * dt * control(0);
      next(1) = state(1) + dt * state(3) + 0.5 * dt * dt * control(1);
      next(2) = state(2) + dt * control(0);
      next(3) = state(3) + dt * control(1);
      break;
    case DynamicsKind::Bicycle: {
      const double theta = state(2);
      const double v = state(3);
      next(0) = state(0) + dt * v * std::cos(theta);
      next(1) = state(1) + dt * v * std::sin(theta);
      next(2) = wrap_angle(theta + dt * v * std::tan(control(1)) / model.wheelbase);
      next(3) = v + dt * control(0);
      break;
    }
  }
  return next;
}

Linearization jacobians(const DynamicsModel& model, const VecX& state, const VecX& control) {
  check_dims(model, state, control);
  const int n = model.state_dim();
  const double dt = model.dt;
  Linearization lin{MatX::Identity(n, n), MatX::Zero(n, 2)};
  switch (model.kind) {
    case DynamicsKind::SingleIntegrator:
      lin.b = dt * MatX::Identity(2, 2);
      break;
    case DynamicsKind::DoubleIntegrator:
      lin.a(0, 2) = dt;
      lin.a(1, 3) = dt;
      lin.b(0, 0) = 0.5 * dt * dt;
      lin.b(1, 1) = 0.5 * dt * dt;
      lin.b(2, 0) = dt;
      lin.b(3, 1) = dt;
      break;
    case DynamicsKind::Bicycle: {
      const double c = std::cos(state(2));
      const double s = std::sin(state(2));
      const double v = state(3);
      const double steer = control(1);
      const double sec2 = 1.0 / (std::cos(steer) * std::cos(steer));
      lin.a(0, 2) = -dt * v * s;
      lin.a(0, 3) = dt * c;
      lin.a(1, 2) = dt * v * c;
      lin.a(1, 3) = dt * s;
      lin.a(2, 3) = dt * std::tan(steer) / model.wheelbase;
      lin.b(2, 1) = dt * v * sec2 / model.wheelbase;
      lin.b(3, 0) = dt;
      break;
    }
  }
  return lin;
}

LinearizationSensitivity jacobian_sensitivity(const DynamicsModel& model, const VecX& state,
                                              const VecX& control) {
  check_dims(model, state, control);
  const int n = model.state_dim();
  LinearizationSensitivity out;
  out.da_dstate.assign(n, MatX::Zero(n, n));
  out.da_dcontrol.assign(2, MatX::Zero(n, n));
  out.db_dstate.assign(n, MatX::Zero(n, 2));
  out.db_dcontrol.assign(2, MatX::Zero(n, 2));
  if (model.kind != DynamicsKind::Bicycle) return out;

  const double dt = model.dt;
  const double c = std::cos(state(2));
  const double s = std::sin(state(2));
  const double v = state(3);
  const double steer = control(1);
  const double cs = std::cos(steer);
  const double sec2 = 1.0 / (cs * cs);
  const double len = model.wheelbase;

  MatX& da_dtheta = out.da_dstate[2];
  da_dtheta(0, 2) = -dt * v * c;
  da_dtheta(0, 3) = -dt * s;
  da_dtheta(1, 2) = -dt * v * s;
  da_dtheta(1, 3) = dt * c;

  MatX& da_dv = out.da_dstate[3];
  da_dv(0, 2) = -dt * s;
  da_dv(1, 2) = dt * c;

  out.da_dcontrol[1](2, 3) = dt * sec2 / len;

  out.db_dstate[3](2, 1) = dt * sec2 / len;
  out.db_dcontrol[1](2, 1) = 2.0 * dt * v * std::sin(steer) / (cs * cs * cs * len);
  return out;
}

std::vector<PropagatedMode> propagate_uncertainty(const DynamicsModel& model, const VecX& state,
                                                  const MatX& state_cov,
                                                  std::span<const ControlMode> controls) {
  const int n = model.state_dim();
  if (state_cov.rows() != n || state_cov.cols() != n) {
    throw Error(ErrorCode::DimensionMismatch, "propagate_uncertainty: state covariance shape");
  }
  std::vector<PropagatedMode> out;
  out.reserve(controls.size());
  for (const auto& mode : controls) {
    const VecX u = mode.mean;
    const auto lin = jacobians(model, state, u);
    PropagatedMode p;
    p.weight = mode.weight;
    p.mean = step_mean(model, state, u);
    p.cov = symmetrize(MatX(lin.a * state_cov * lin.a.transpose() +
                            lin.b * symmetrize(mode.cov) * lin.b.transpose()));
    p.position_mean = p.mean.head<2>();
    p.position_cov = p.cov.topLeftCorner<2, 2>();
    // Throws NotPositiveDefinite if the marginal is indefinite even after loading.
    (void)cholesky2(regularize(p.position_cov));
    out.push_back(std::move(p));
  }
  return out;
}

Gmm2 position_mixture(std::span<const PropagatedMode> modes) {
  std::vector<double> weights;
  std::vector<Gaussian2> comps;
  for (const auto& m : modes) {
    weights.push_back(m.weight);
    comps.emplace_back(m.position_mean, regularize(m.position_cov));
  }
  return Gmm2(std::move(weights), std::move(comps));
}

}  // namespace utraj::dynamics
