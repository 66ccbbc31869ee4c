#include "utraj/filters.hpp"

#include <cmath>
#include <random>
#include <string>

#include <Eigen/LU>

#include "utraj/parallel.hpp"

namespace utraj::filters {

using dynamics::DynamicsKind;
using dynamics::DynamicsModel;

namespace {

MatX process_cov(const FilterConfig& config) {
  return config.process_noise_std.array().square().matrix().asDiagonal();
}

MatX position_selector(int n) {
  MatX h = MatX::Zero(2, n);
  h(0, 0) = 1.0;
  h(1, 1) = 1.0;
  return h;
}

}  // namespace

void FilterConfig::validate(int state_dim) const {
  if (process_noise_std.size() != state_dim) {
    throw Error(ErrorCode::DimensionMismatch, "process_noise_std must have one entry per state dimension");
  }
  if ((process_noise_std.array() < 0.0).any() || !process_noise_std.allFinite()) {
    throw Error(ErrorCode::InvalidArgument, "process_noise_std must be nonnegative");
  }
  if (!(meas_noise_std > 0.0)) throw Error(ErrorCode::InvalidArgument, "meas_noise_std must be positive");
  if (init_cov.rows() != state_dim || init_cov.cols() != state_dim) {
    throw Error(ErrorCode::DimensionMismatch, "init_cov shape");
  }
}

VecX constant_velocity_process_std(double dt, double accel_std) {
  VecX s(4);
  s << 0.5 * dt * dt * accel_std, 0.5 * dt * dt * accel_std, dt * accel_std, dt * accel_std;
  return s;
}

DynamicsModel filter_model_for(AgentType type, double dt) {
  if (type == AgentType::Vehicle) return {DynamicsKind::Bicycle, dt};
  return {DynamicsKind::DoubleIntegrator, dt};
}

FilterConfig default_filter_config(AgentType type, double dt) {
  FilterConfig c;
  c.meas_noise_std = 0.1;
  c.init_cov = MatX::Identity(4, 4);
  if (type == AgentType::Vehicle) {
    const double accel = 0.5;
    const double yaw_rate = 0.2;
    c.process_noise_std.resize(4);
    c.process_noise_std << 0.5 * dt * dt * accel, 0.5 * dt * dt * accel, dt * yaw_rate, dt * accel;
  } else {
    c.process_noise_std = constant_velocity_process_std(dt, 0.5);
  }
  return c;
}

Estimate kf_predict(const VecX& state, const MatX& cov, const DynamicsModel& model,
                    const FilterConfig& config) {
  if (!model.is_linear()) {
    throw Error(ErrorCode::InvalidArgument, "kf_predict requires a linear model; use ekf_step");
  }
  const int n = model.state_dim();
  if (state.size() != n || cov.rows() != n || cov.cols() != n || config.process_noise_std.size() != n) {
    throw Error(ErrorCode::DimensionMismatch, "kf_predict: dimensions do not match the model");
  }
  const VecX zero_control = VecX::Zero(model.control_dim());
  const auto lin = dynamics::jacobians(model, state, zero_control);
  return {lin.a * state, symmetrize(MatX(lin.a * cov * lin.a.transpose() + process_cov(config)))};
}

UpdateResult kf_update(const VecX& state, const MatX& cov, const Vec2& measurement,
                       const FilterConfig& config) {
  const int n = static_cast<int>(state.size());
  if (n < 2 || cov.rows() != n || cov.cols() != n) {
    throw Error(ErrorCode::DimensionMismatch, "kf_update: state/covariance shape");
  }
  if (!measurement.allFinite()) throw Error(ErrorCode::InvalidArgument, "kf_update: non-finite measurement");
  const MatX h = position_selector(n);
  const Mat2 r = config.meas_noise_std * config.meas_noise_std * Mat2::Identity();
  const Mat2 s = symmetrize(Mat2(h * cov * h.transpose() + r));
  // Relative pivot test: R may be tiny in the noiseless limit.
  const double pivot = s(0, 0) > 0.0 ? s(1, 1) - s(0, 1) * s(0, 1) / s(0, 0) : 0.0;
  if (!(s(0, 0) > 0.0) || !(pivot > kEpsPd * s(1, 1)) || !s.allFinite()) {
    throw Error(ErrorCode::SingularInnovationCovariance,
                "innovation covariance is singular (pivot " + std::to_string(pivot) + ")");
  }
  const MatX gain = cov * h.transpose() * s.inverse();
  UpdateResult out;
  out.innovation = measurement - state.head<2>();
  out.state = state + gain * out.innovation;
  const MatX i_kh = MatX::Identity(n, n) - gain * h;
  out.cov = symmetrize(MatX(i_kh * cov * i_kh.transpose() + gain * r * gain.transpose()));
  return out;
}

Estimate ekf_step(const VecX& state, const MatX& cov, const Vec2& measurement,
                  const DynamicsModel& model, const FilterConfig& config) {
  if (model.kind != DynamicsKind::Bicycle) {
    throw Error(ErrorCode::InvalidArgument, "ekf_step expects the bicycle model");
  }
  const VecX zero_control = VecX::Zero(model.control_dim());
  const auto lin = dynamics::jacobians(model, state, zero_control);
  const VecX pred = dynamics::step_mean(model, state, zero_control);
  const MatX pred_cov = symmetrize(MatX(lin.a * cov * lin.a.transpose() + process_cov(config)));
  auto upd = kf_update(pred, pred_cov, measurement, config);
  upd.state(2) = wrap_angle(upd.state(2));
  return {upd.state, upd.cov};
}

Scene track_scene(const Scene& scene, const FilterConfigs& configs, std::uint64_t seed, int threads) {
  Scene out = scene;
  parallel_for(out.agents.size(), threads, [&](std::size_t idx) {
    AgentTrack& agent = out.agents[idx];
    agent.tracked.clear();
    agent.source = TrackSource::Filter;
    if (agent.gt.empty()) return;
    const auto model = filter_model_for(agent.type, scene.dt);
    const auto it = configs.find(agent.type);
    const FilterConfig config =
        it != configs.end() ? it->second : default_filter_config(agent.type, scene.dt);
    config.validate(model.state_dim());

    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(agent.agent_id), idx));
    std::normal_distribution<double> noise(0.0, config.meas_noise_std);
    auto measure = [&](const GtSample& s) {
      const double nx = noise(rng);
      const double ny = noise(rng);
      return Vec2(s.position.x() + nx, s.position.y() + ny);
    };

    VecX state = VecX::Zero(model.state_dim());
    state.head<2>() = measure(agent.gt.front());
    MatX cov = config.init_cov;
    agent.tracked.reserve(agent.gt.size());
    agent.tracked.push_back({state, cov, agent.gt.front().step, agent.agent_id, agent.type});
    for (std::size_t k = 1; k < agent.gt.size(); ++k) {
      const Vec2 z = measure(agent.gt[k]);
      if (model.kind == DynamicsKind::Bicycle) {
        auto est = ekf_step(state, cov, z, model, config);
        state = std::move(est.state);
        cov = std::move(est.cov);
      } else {
        const auto pred = kf_predict(state, cov, model, config);
        auto upd = kf_update(pred.state, pred.cov, z, config);
        state = std::move(upd.state);
        cov = std::move(upd.cov);
      }
      agent.tracked.push_back({state, cov, agent.gt[k].step, agent.agent_id, agent.type});
    }
  });
  return out;
}

double position_rmse(const Scene& tracked, int burn_in) {
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& agent : tracked.agents) {
    for (std::size_t k = 0; k < agent.tracked.size() && k < agent.gt.size(); ++k) {
      if (static_cast<int>(k) < burn_in) continue;
      acc += (agent.tracked[k].state.head<2>() - agent.gt[k].position).squaredNorm();
      ++n;
    }
  }
  return n == 0 ? 0.0 : std::sqrt(acc / static_cast<double>(n));
}

}  // namespace utraj::filters
