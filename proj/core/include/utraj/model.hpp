#pragma once

// Discrete-latent CVAE forecaster with a control-space decoder.
//
// Encoder: LSTM over the agent's own tracked history (state, covariance upper
// triangle, validity flag) and LSTM over element-wise summed neighbour
// features. Latent heads p(z | x) and q(z | x, y) are categorical. The GRU
// decoder emits a control Gaussian per step for every mode; means and
// covariances are pushed through the agent dynamics with zero initial state
// covariance.
//
// Everything the network sees is expressed in an agent-centric frame: origin
// at the current tracked position, rotated by the current heading for
// vehicles. Predictions are mapped back to the world frame.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "utraj/autodiff.hpp"
#include "utraj/core.hpp"
#include "utraj/dynamics.hpp"

namespace utraj::model {

enum class LossMode { NllOnly, SdOnly, Composite };

std::string_view to_string(LossMode mode);
/// Accepts "nll", "sd", "composite" (and the enum spellings).
LossMode loss_mode_from_string(std::string_view name);

/// Interaction radius d(C_i, C_j) in meters for the ordered pair (i's type, j's type).
using RadiusTable = std::map<std::pair<AgentType, AgentType>, double>;

/// 3 m for every ordered pair, 10 m whenever a vehicle is involved.
RadiusTable default_radius_table();

struct ModelConfig {
  AgentType agent_type = AgentType::Particle;  // node type this model forecasts
  double dt = 0.1;
  int history_len = 8;  // steps before t; the window is [t - H, t]
  int horizon = 8;
  int latent_size = 25;
  int hist_hidden = 32;
  int edge_hidden = 8;
  int dec_hidden = 128;
  int q_hidden = 32;
  RadiusTable edge_radius = default_radius_table();
  LossMode loss_mode = LossMode::Composite;
  double beta = 1.0;
  double lambda_sd = 1.0;
  double alpha_info = 1.0;

  void validate() const;
  [[nodiscard]] dynamics::DynamicsModel dynamics() const;
};

// ---------------------------------------------------------------------------
// Scene graph

struct Edge {
  std::size_t from = 0;  // agent indices into Scene::agents
  std::size_t to = 0;
};

/// Directed edge i -> j iff both agents are present at `step` and
/// ||p_i - p_j|| <= d(C_i, C_j). Agent i aggregates features from its
/// outgoing edges. Positions are tracked means when available, else GT.
std::vector<Edge> build_graph(const Scene& scene, int step, const RadiusTable& radius);

// ---------------------------------------------------------------------------
// Windows

inline constexpr int kTrackedDim = 4;
inline constexpr int kHistoryFeatures = kTrackedDim + kTrackedDim * (kTrackedDim + 1) / 2 + 1;
inline constexpr int kEdgeFeatures = 7;  // rel. position, rel. velocity, neighbour position-cov triangle

/// Agent-centric frame: x_local = R^T (x_world - origin).
struct Frame {
  Vec2 origin = Vec2::Zero();
  double heading = 0.0;

  [[nodiscard]] Mat2 rotation() const;
  [[nodiscard]] Vec2 to_local(const Vec2& world) const;
  [[nodiscard]] Vec2 to_world(const Vec2& local) const;
  [[nodiscard]] Mat2 cov_to_local(const Mat2& world) const;
  [[nodiscard]] Mat2 cov_to_world(const Mat2& local) const;
};

/// One forecasting example: everything is in the agent's frame.
struct Window {
  std::size_t agent_index = 0;
  int agent_id = 0;
  int step = 0;  // current step t
  Frame frame;
  std::vector<double> history;  // (H + 1) x kHistoryFeatures, oldest first
  std::vector<double> edges;    // (H + 1) x kEdgeFeatures
  VecX initial_state;           // dynamics state at t
  std::vector<Vec2> future;     // GT positions t+1 .. t+T (empty if unavailable)
  std::vector<Mat2> future_cov; // tracked position covariance at the same steps
};

/// Builds the window for agent `agent_index` at step t. Requires tracked
/// states at t; the future is attached only when the full horizon is covered
/// by GT and tracked data.
Window make_window(const Scene& scene, std::size_t agent_index, int step, const ModelConfig& config);

/// Every step t (with stride) of every agent of config.agent_type whose full
/// horizon is available. History may be partial (front padded).
std::vector<Window> extract_windows(const Scene& scene, const ModelConfig& config, int stride = 1);

/// Multiplies every tracked covariance by `factor`.
Scene scale_tracked_covariances(const Scene& scene, double factor);

// ---------------------------------------------------------------------------
// Outputs

struct ModePrediction {
  std::vector<Vec2> control_means;  // local frame
  std::vector<Mat2> control_covs;
  std::vector<Vec2> position_means;  // world frame
  std::vector<Mat2> position_covs;   // world frame
};

/// Mixture over positions for every future step: weights are
/// p(z | x) and each step carries a Gmm2 in world coordinates.
struct Prediction {
  int agent_id = 0;
  int step = 0;
  std::vector<double> weights;
  std::vector<ModePrediction> modes;
  std::vector<Gmm2> steps;
};

struct LossTerms {
  double loss = 0.0;
  double nll = 0.0;   // E_q[sum_t -log p]
  double sd = 0.0;    // E_q[sum_t D_B]
  double kl = 0.0;
  double info = 0.0;  // batch mutual-information estimate
};

/// Graph handles produced by one batched forward pass.
struct ForwardResult {
  ad::Var loss;
  ad::Var log_p;      // [B, K] log p(z | x)
  ad::Var log_q;      // [B, K] log q(z | x, y); only when futures are supplied
  std::vector<ad::Var> pos_means;  // T entries of [B*K, 2], local frame, row b*K + k
  std::vector<ad::Var> pos_covs;  // T entries of [B*K, 4]
  std::vector<ad::Var> ctrl_params;  // T entries of [B*K, 5]
  LossTerms terms;
};

// ---------------------------------------------------------------------------
// Forecaster

class Forecaster {
 public:
  explicit Forecaster(ModelConfig config, std::uint64_t seed = 0);

  [[nodiscard]] const ModelConfig& config() const noexcept { return config_; }
  [[nodiscard]] ad::ParameterStore& parameters() noexcept { return params_; }
  [[nodiscard]] const ad::ParameterStore& parameters() const noexcept { return params_; }

  /// Records the forward pass for `batch` on `tape`. With `with_loss`, every
  /// window must carry a future; the loss is the minimized negative of the
  /// objective for config().loss_mode. Parameters are bound as trainable
  /// leaves when `trainable`, constants otherwise.
  ForwardResult forward(ad::Tape& tape, std::span<const Window* const> batch, bool with_loss,
                        bool trainable);

  /// Encoder output e_x = [history LSTM state, edge LSTM state] for one window.
  [[nodiscard]] std::vector<double> encode(const Window& window) const;

  /// p(z | x) and (when the window has a future) q(z | x, y).
  struct LatentDists {
    std::vector<double> p;
    std::vector<double> q;
  };
  [[nodiscard]] LatentDists latent_dists(const Window& window) const;

  /// Loss terms for a batch without touching gradients.
  [[nodiscard]] LossTerms evaluate_loss(std::span<const Window* const> batch) const;

  [[nodiscard]] std::vector<Prediction> predict(std::span<const Window> windows) const;
  [[nodiscard]] Prediction predict(const Window& window) const;

  /// Checkpoint JSON: {"config": {...}, "parameters": {name: {"shape": [...], "values": [...]}}}.
  [[nodiscard]] std::string to_json() const;
  static Forecaster from_json(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Forecaster load(const std::filesystem::path& path);

 private:
  void init_parameters(std::uint64_t seed);
  ForwardResult run(ad::Tape& tape, std::span<const Window* const> batch, bool with_loss,
                    ad::ParameterStore* trainable) const;

  ModelConfig config_;
  ad::ParameterStore params_;
};

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(std::string_view text);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  int epochs = 30;
  int batch_size = 64;
  int windows_per_track = 14;  // sampled per track per epoch
  int val_stride = 20;
  ad::AdamConfig adam;
  std::uint64_t seed = 0;
};

struct EpochStats {
  int epoch = 0;
  std::string split;  // "train" or "val"
  LossTerms terms;
};

struct TrainResult {
  Forecaster model;
  std::vector<EpochStats> curves;
};

using ProgressFn = std::function<void(const EpochStats&)>;

/// Minibatch training. Throws NonFiniteLoss naming the epoch and batch.
TrainResult train(std::span<const Scene> train_scenes, std::span<const Scene> val_scenes,
                  const ModelConfig& model_config, const TrainConfig& train_config,
                  const ProgressFn& progress = {});

/// `epoch,split,loss,nll_term,sd_term,kl_term,info_term`
std::string curves_csv(std::span<const EpochStats> curves);

}  // namespace utraj::model
