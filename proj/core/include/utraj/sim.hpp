#pragma once

// Charged-particle scenarios: double-integrator agents pushed apart by an
// exponential social-force kernel, plus synthetic per-step state-uncertainty.

#include <cstdint>
#include <span>
#include <vector>

#include "utraj/core.hpp"

namespace utraj::sim {

/// Synthetic diagonal covariance generator, all in m^2.
struct CovarianceGenConfig {
  double base_var_mean = 0.2;
  double base_var_std = 0.05;
  double step_noise_std = 0.02;
  double var_min = 1e-4;

  void validate() const;
  /// Multiplies every variance parameter except var_min by `factor`.
  [[nodiscard]] CovarianceGenConfig scaled(double factor) const;
};

struct SimConfig {
  int n_agents = 3;
  double dt = 0.1;
  double duration_s = 30.0;
  int train_count = 250;
  int val_count = 75;
  int test_count = 50;
  double repulsion_strength = 2.0;  // A_rep (N, unit mass)
  double repulsion_range = 1.0;     // B_rep (m)
  double damping = 0.1;             // 1/s
  double init_position_range = 5.0; // positions uniform in [-r, r]^2
  double init_speed_min = 0.0;
  double init_speed_max = 1.5;
  CovarianceGenConfig cov_gen;
  std::uint64_t seed = 0;

  void validate() const;
  [[nodiscard]] int steps() const;  // states per agent, t = 0 inclusive
};

inline constexpr double kMinSeparation = 1e-6;
inline constexpr int kMaxResampleAttempts = 100;

/// Sum over j != i of A exp(-d/B) (p_i - p_j)/d, minus damping * v_i.
Vec2 social_force(std::span<const Vec2> positions, std::span<const Vec2> velocities, std::size_t i,
                  const SimConfig& config);

/// GT-only scene rolled out for duration_s at dt. Deterministic per seed.
Scene simulate_scenario(const SimConfig& config, std::uint64_t seed);

/// Attaches synthetic tracked states: GT state with diag(var_x, var_y, 0, 0).
Scene generate_covariances(const Scene& scene, const CovarianceGenConfig& cov_gen, std::uint64_t seed);

struct Dataset {
  std::vector<Scene> train;
  std::vector<Scene> val;
  std::vector<Scene> test;
};

Dataset build_dataset(const SimConfig& config, int threads = 1);

}  // namespace utraj::sim
