#pragma once

// Fused, batched nodes for bivariate Gaussians and covariance propagation.
//
// Row conventions: a bivariate covariance is a row of 4 entries (row-major
// 2x2), a D x D state covariance is a row of D*D entries. Covariance
// gradients are written per entry as G_ij with dL = sum_ij G_ij dSigma_ij for
// symmetric perturbations.

#include "utraj/autodiff.hpp"
#include "utraj/core.hpp"
#include "utraj/dynamics.hpp"

namespace utraj::ad {

/// [R,3] rows (log sigma_x, log sigma_y, rho_raw) -> [R,4] covariance rows with
/// rho = tanh(rho_raw). Positive definite by construction.
Var cov2_from_params(const Var& params);

/// Per-row negative log-density of `target` under N(mean, cov + kEpsReg I).
/// mean [R,2], cov [R,4], target [R,2] -> [R,1].
Var gaussian2_nll_rows(const Var& mean, const Var& cov, const Tensor& target);

/// Per-row Bhattacharyya distance between N(mean, cov) and the constant
/// N(target_mean, target_cov); both covariances regularized as in statdist.
/// mean [R,2], cov [R,4], target_mean [R,2], target_cov [R,4] -> [R,1].
Var bhattacharyya_rows(const Var& mean, const Var& cov, const Tensor& target_mean, const Tensor& target_cov);

/// Scalar conveniences: mean [1,2], cov_params [1,3].
Var gaussian2_nll_node(const Var& mean, const Var& cov_params, const Vec2& target);
Var bhattacharyya_node(const Var& mean, const Var& cov_params, const Gaussian2& target);

/// One dynamics step for R rows, linearized per row at (state_mean, ctrl_mean):
/// next mean f(s, u) and next covariance A C A^T + B Sigma_u B^T.
/// state_mean [R,D], state_cov [R,D*D], ctrl_mean [R,2], ctrl_cov [R,4]
/// -> [R, D + D*D]. The backward pass includes the dependence of A and B on
/// the linearization point.
Var propagate(const dynamics::DynamicsModel& model, const Var& state_mean, const Var& state_cov,
              const Var& ctrl_mean, const Var& ctrl_cov);

}  // namespace utraj::ad
