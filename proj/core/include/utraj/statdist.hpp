#pragma once

// Closed-form distances between bivariate Gaussians, the mixture-to-Gaussian
// Bhattacharyya extension, and their analytic gradients.
//
// All covariances are regularized (kEpsReg * I) before use. Covariance
// gradients are returned as the symmetric matrix G with dD = tr(G dSigma) for
// symmetric perturbations dSigma.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "utraj/core.hpp"

namespace utraj::statdist {

enum class DistanceKind { Bhattacharyya, SymmetricKL, Hellinger };

std::string_view to_string(DistanceKind kind);

double bhattacharyya(const Gaussian2& p, const Gaussian2& q);

/// sqrt(1 - exp(-D_B)); bounded by 1.
double hellinger(const Gaussian2& p, const Gaussian2& q);

/// Arithmetic mean of KL(p||q) and KL(q||p).
double symmetric_kl(const Gaussian2& p, const Gaussian2& q);

double distance(DistanceKind kind, const Gaussian2& p, const Gaussian2& q);

/// Sum_k pi_k D_B(N(mu_k, Sigma_k), q).
double bhattacharyya_gmm(const Gmm2& p, const Gaussian2& q);
/// Same sum over raw weights (not required to be normalized), so the weights
/// can be perturbed one at a time.
double bhattacharyya_mixture(std::span<const double> weights, std::span<const Gaussian2> components,
                             const Gaussian2& q);

struct DistanceGradient {
  Vec2 mean_p = Vec2::Zero();
  Mat2 cov_p = Mat2::Zero();
  Vec2 mean_q = Vec2::Zero();
  Mat2 cov_q = Mat2::Zero();
};

/// Gradient of distance(kind, p, q). Hellinger's gradient is defined as zero at p == q.
DistanceGradient distance_grad(DistanceKind kind, const Gaussian2& p, const Gaussian2& q);

struct MixtureDistanceGradient {
  std::vector<double> weights;
  std::vector<Vec2> means;
  std::vector<Mat2> covs;
  Vec2 mean_q = Vec2::Zero();
  Mat2 cov_q = Mat2::Zero();
};

MixtureDistanceGradient bhattacharyya_gmm_grad(const Gmm2& p, const Gaussian2& q);

struct DistanceStudyRow {
  double offset = 0.0;
  double scale = 1.0;
  double bhattacharyya = 0.0;
  double skl = 0.0;
  double hellinger = 0.0;
  bool hellinger_saturated = false;
};

inline constexpr double kHellingerSaturation = 0.99;

struct DistanceStudyGrid {
  std::vector<double> offsets{0.0, 0.5, 1.0, 2.0, 5.0, 20.0};
  std::vector<double> scales{0.25, 1.0, 4.0};
};

/// p = N(0, I) against q = N((offset, 0), scale * I) for every grid cell,
/// offsets outermost.
std::vector<DistanceStudyRow> distance_study(const DistanceStudyGrid& grid = {});

std::string distance_study_csv(const std::vector<DistanceStudyRow>& rows);

}  // namespace utraj::statdist
