#pragma once

// Shared numeric primitives and domain types.

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "utraj/error.hpp"

namespace utraj {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

/// Pivot threshold below which a matrix is treated as not positive definite.
inline constexpr double kEpsPd = 1e-12;
/// Diagonal loading applied to every covariance consumed by a density or distance.
inline constexpr double kEpsReg = 1e-6;

/// Lower-triangular L with L * L^T == m. Throws NotPositiveDefinite.
Mat2 cholesky2(const Mat2& m);

/// ln(det m) for a positive-definite 2x2 matrix.
double logdet2(const Mat2& m);

/// (m + m^T) / 2
MatX symmetrize(const MatX& m);
Mat2 symmetrize(const Mat2& m);

/// m + kEpsReg * I
Mat2 regularize(const Mat2& m);

/// Wraps an angle into (-pi, pi].
double wrap_angle(double radians);

class Gaussian2 {
 public:
  /// Symmetrizes `cov` and rejects it unless both eigenvalues exceed kEpsPd.
  Gaussian2(Vec2 mean, const Mat2& cov);

  [[nodiscard]] const Vec2& mean() const noexcept { return mean_; }
  [[nodiscard]] const Mat2& cov() const noexcept { return cov_; }

 private:
  Vec2 mean_;
  Mat2 cov_;
};

class Gmm2 {
 public:
  /// Weights must be nonnegative and sum to one within 1e-9.
  Gmm2(std::vector<double> weights, std::vector<Gaussian2> components);
  explicit Gmm2(const Gaussian2& single);

  [[nodiscard]] std::size_t size() const noexcept { return weights_.size(); }
  [[nodiscard]] const std::vector<double>& weights() const noexcept { return weights_; }
  [[nodiscard]] const std::vector<Gaussian2>& components() const noexcept { return components_; }
  [[nodiscard]] double weight(std::size_t k) const { return weights_.at(k); }
  [[nodiscard]] const Gaussian2& component(std::size_t k) const { return components_.at(k); }

  /// Sum_k w_k mu_k.
  [[nodiscard]] Vec2 mean() const;
  /// Index of the highest-weight component (first on ties).
  [[nodiscard]] std::size_t top_mode() const;

 private:
  std::vector<double> weights_;
  std::vector<Gaussian2> components_;
};

double gaussian_logpdf(const Gaussian2& g, const Vec2& x);
double gmm_logpdf(const Gmm2& g, const Vec2& x);

/// Squared Mahalanobis distance of x under g (regularized covariance).
double mahalanobis2(const Gaussian2& g, const Vec2& x);

// ---------------------------------------------------------------------------
// Domain types

enum class AgentType : std::uint8_t { Particle, Pedestrian, Vehicle };

inline constexpr AgentType kAllAgentTypes[] = {AgentType::Particle, AgentType::Pedestrian,
                                               AgentType::Vehicle};

std::string_view to_string(AgentType type);
AgentType agent_type_from_string(std::string_view name);

/// Filter (or synthetic) estimate of one agent at one step.
struct TrackedState {
  VecX state;
  MatX cov;
  int step = 0;
  int agent_id = 0;
  AgentType agent_type = AgentType::Particle;
};

/// Ground-truth kinematics of one agent at one step. Heading and speed for
/// the bicycle model are derived from the velocity.
struct GtSample {
  int step = 0;
  Vec2 position = Vec2::Zero();
  Vec2 velocity = Vec2::Zero();
};

enum class TrackSource : std::uint8_t { None, Synthetic, Filter };

struct AgentTrack {
  int agent_id = 0;
  AgentType type = AgentType::Particle;
  std::vector<GtSample> gt;           // consecutive steps
  std::vector<TrackedState> tracked;  // same steps as gt, or empty
  TrackSource source = TrackSource::None;

  [[nodiscard]] int first_step() const { return gt.empty() ? 0 : gt.front().step; }
  [[nodiscard]] int last_step() const { return gt.empty() ? -1 : gt.back().step; }
  [[nodiscard]] bool covers(int step) const { return step >= first_step() && step <= last_step(); }
  [[nodiscard]] const GtSample& gt_at(int step) const { return gt.at(static_cast<std::size_t>(step - first_step())); }
  [[nodiscard]] const TrackedState& tracked_at(int step) const {
    return tracked.at(static_cast<std::size_t>(step - first_step()));
  }
};

struct Scene {
  double dt = 0.1;
  int duration = 0;  // steps
  std::vector<AgentTrack> agents;
};

/// Throws InvalidArgument when a Scene invariant is violated.
void validate(const Scene& scene);

}  // namespace utraj
