#include "utraj/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "utraj/dynamics.hpp"
#include "utraj/parallel.hpp"

namespace utraj::sim {

void CovarianceGenConfig::validate() const {
  if (!(base_var_mean > 3.0 * base_var_std)) {
    throw Error(ErrorCode::ConfigError, "cov_gen: base_var_mean must exceed 3 * base_var_std");
  }
  if (base_var_std < 0.0 || step_noise_std < 0.0 || !(var_min > 0.0)) {
    throw Error(ErrorCode::ConfigError, "cov_gen: std devs must be >= 0 and var_min > 0");
  }
}

CovarianceGenConfig CovarianceGenConfig::scaled(double factor) const {
  CovarianceGenConfig c = *this;
  c.base_var_mean *= factor;
  c.base_var_std *= factor;
  c.step_noise_std *= factor;
  return c;
}

void SimConfig::validate() const {
  if (n_agents < 1) throw Error(ErrorCode::ConfigError, "sim.n_agents must be >= 1");
  if (!(dt > 0.0)) throw Error(ErrorCode::ConfigError, "sim.dt must be positive");
  if (!(duration_s > 0.0)) throw Error(ErrorCode::ConfigError, "sim.duration must be positive");
  if (train_count <= 0 || val_count <= 0 || test_count <= 0) {
    throw Error(ErrorCode::ConfigError, "sim counts must be positive");
  }
  if (repulsion_strength < 0.0 || !(repulsion_range > 0.0) || damping < 0.0) {
    throw Error(ErrorCode::ConfigError, "sim force parameters out of range");
  }
  if (!(init_position_range > 0.0) || init_speed_min < 0.0 || init_speed_max < init_speed_min) {
    throw Error(ErrorCode::ConfigError, "sim initial-condition ranges invalid");
  }
  cov_gen.validate();
}

int SimConfig::steps() const { return static_cast<int>(std::lround(duration_s / dt)) + 1; }

Vec2 social_force(std::span<const Vec2> positions, std::span<const Vec2> velocities, std::size_t i,
                  const SimConfig& config) {
  Vec2 force = Vec2::Zero();
  for (std::size_t j = 0; j < positions.size(); ++j) {
    if (j == i) continue;
    const Vec2 diff = positions[i] - positions[j];
    const double d = diff.norm();
    if (d < kMinSeparation) {
      throw Error(ErrorCode::AgentsCoincident,
                  "agents " + std::to_string(i) + " and " + std::to_string(j) + " coincide");
    }
    force += config.repulsion_strength * std::exp(-d / config.repulsion_range) * (diff / d);
  }
  return force - config.damping * velocities[i];
}

namespace {

Scene rollout(const SimConfig& config, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(-config.init_position_range, config.init_position_range);
  std::uniform_real_distribution<double> speed(config.init_speed_min, config.init_speed_max);
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);

  const auto n = static_cast<std::size_t>(config.n_agents);
  std::vector<Vec2> p(n), v(n), f(n);
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = Vec2(pos(rng), pos(rng));
    const double s = speed(rng);
    const double a = angle(rng);
    v[i] = Vec2(s * std::cos(a), s * std::sin(a));
  }

  const int steps = config.steps();
  Scene scene;
  scene.dt = config.dt;
  scene.duration = steps;
  scene.agents.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    scene.agents[i].agent_id = static_cast<int>(i);
    scene.agents[i].type = AgentType::Particle;
    scene.agents[i].gt.reserve(static_cast<std::size_t>(steps));
  }

  const dynamics::DynamicsModel model{dynamics::DynamicsKind::DoubleIntegrator, config.dt};
  VecX state(4), control(2);
  for (int t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < n; ++i) scene.agents[i].gt.push_back({t, p[i], v[i]});
    if (t + 1 == steps) break;
    for (std::size_t i = 0; i < n; ++i) f[i] = social_force(p, v, i, config);
    for (std::size_t i = 0; i < n; ++i) {
      state << p[i], v[i];
      control << f[i];
      const VecX next = dynamics::step_mean(model, state, control);
      p[i] = next.head<2>();
      v[i] = next.tail<2>();
    }
  }
  return scene;
}

}  // namespace

Scene simulate_scenario(const SimConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (int attempt = 0;; ++attempt) {
    try {
      return rollout(config, rng);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::AgentsCoincident || attempt + 1 >= kMaxResampleAttempts) throw;
    }
  }
}

Scene generate_covariances(const Scene& scene, const CovarianceGenConfig& cov_gen, std::uint64_t seed) {
  cov_gen.validate();
  Scene out = scene;
  std::mt19937_64 rng(seed);
  for (auto& agent : out.agents) {
    // std::normal_distribution requires a strictly positive std dev.
    std::normal_distribution<double> unit(0.0, 1.0);
    const double base_x = cov_gen.base_var_mean + cov_gen.base_var_std * unit(rng);
    const double base_y = cov_gen.base_var_mean + cov_gen.base_var_std * unit(rng);
    auto jitter = [&](std::mt19937_64& g) { return cov_gen.step_noise_std * unit(g); };
    agent.tracked.clear();
    agent.tracked.reserve(agent.gt.size());
    agent.source = TrackSource::Synthetic;
    for (const auto& s : agent.gt) {
      const double var_x = std::max(cov_gen.var_min, base_x + jitter(rng));
      const double var_y = std::max(cov_gen.var_min, base_y + jitter(rng));
      TrackedState ts;
      ts.state.resize(4);
      ts.state << s.position, s.velocity;
      ts.cov = MatX::Zero(4, 4);
      ts.cov(0, 0) = var_x;
      ts.cov(1, 1) = var_y;
      ts.step = s.step;
      ts.agent_id = agent.agent_id;
      ts.agent_type = agent.type;
      agent.tracked.push_back(std::move(ts));
    }
  }
  return out;
}

Dataset build_dataset(const SimConfig& config, int threads) {
  config.validate();
  auto make_split = [&](int count, std::uint64_t split_id) {
    std::vector<Scene> scenes(static_cast<std::size_t>(count));
    parallel_for(scenes.size(), threads, [&](std::size_t k) {
      const std::uint64_t scene_seed = mix_seed(config.seed, split_id, k);
      const Scene gt = simulate_scenario(config, scene_seed);
      scenes[k] = generate_covariances(gt, config.cov_gen, mix_seed(scene_seed, 0xC0FFEEull));
    });
    return scenes;
  };
  Dataset d;
  d.train = make_split(config.train_count, 1);
  d.val = make_split(config.val_count, 2);
  d.test = make_split(config.test_count, 3);
  return d;
}

}  // namespace utraj::sim
