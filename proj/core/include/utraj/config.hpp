#pragma once

// TOML run configuration shared by every CLI stage.
//
//   seed = 0
//   [sim]     n_agents, dt, duration_s, train_count, val_count, test_count,
//             repulsion_strength, repulsion_range, damping,
//             init_position_range, init_speed_min, init_speed_max
//   [sim.cov_gen] base_var_mean, base_var_std, step_noise_std, var_min
//   [filter]  meas_noise_std, accel_std, yaw_rate_std
//   [model]   agent_type, dt, history_len, horizon, latent_size, hist_hidden,
//             edge_hidden, dec_hidden, q_hidden, beta, lambda_sd, alpha_info
//   [train]   epochs, batch_size, windows_per_track, val_stride, lr, clip_norm,
//             covariance ("synthetic" or "filter"), cov_scale
//   [eval]    horizon_steps, stride, fde_mode, esv_mode, figures
//   [paths]   out
//
// Unknown keys and wrongly typed values raise ConfigError naming the key.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "utraj/filters.hpp"
#include "utraj/metrics.hpp"
#include "utraj/model.hpp"
#include "utraj/sim.hpp"

namespace utraj {

struct FilterSection {
  double meas_noise_std = 0.1;
  double accel_std = 0.5;
  double yaw_rate_std = 0.2;
};

struct RunConfig {
  std::uint64_t seed = 0;
  sim::SimConfig sim;
  FilterSection filter;
  model::ModelConfig model;
  model::TrainConfig train;
  std::string train_covariance = "synthetic";
  double cov_scale = 1.0;  // multiplies the synthetic covariance generator
  metrics::EvalConfig eval;
  int figures = 3;  // scenes plotted by evaluate/pipeline
  std::string out = "out";

  /// Re-runs every module's validation.
  void validate() const;
  /// Propagates the top-level seed into the sim and train sections.
  void set_seed(std::uint64_t s);
};

RunConfig parse_config(std::string_view toml_text, std::string_view source = "<config>");
RunConfig load_config(const std::filesystem::path& path);

/// Per-type filter settings derived from the [filter] section.
filters::FilterConfigs filter_configs(const FilterSection& section, double dt);

}  // namespace utraj
