#pragma once

// NLL, FDE and the calibration offsets Delta-ESV_i of predicted position
// distributions against GT.

#include <array>
#include <span>
#include <string>
#include <vector>

#include "utraj/core.hpp"
#include "utraj/model.hpp"

namespace utraj::metrics {

/// Ideal probability mass of a bivariate Gaussian inside its 1, 2, 3 sigma ellipses.
inline constexpr std::array<double, 3> kSigmaIdeal{0.39, 0.86, 0.99};

enum class FdeMode { MixtureMean, TopMode };
/// TopMode: GT inside the i-sigma ellipse of the highest-weight component.
/// AnyMode: GT inside the i-sigma ellipse of at least one component with positive weight.
enum class EsvMode { TopMode, AnyMode };

FdeMode fde_mode_from_string(std::string_view name);
EsvMode esv_mode_from_string(std::string_view name);

struct NllStats {
  double mean = 0.0;
  double std = 0.0;  // population std across agents
};

/// -gmm_logpdf over aligned (prediction, GT) pairs at one horizon.
NllStats nll(std::span<const Gmm2> predictions, std::span<const Vec2> gt);

/// Mean l2 distance between the predicted position and GT.
double fde(std::span<const Gmm2> predictions, std::span<const Vec2> gt, FdeMode mode = FdeMode::MixtureMean);

/// Fraction of GT points within Mahalanobis distance i.
double esv_fraction(std::span<const Gmm2> predictions, std::span<const Vec2> gt, int i,
                    EsvMode mode = EsvMode::TopMode);

/// esv_fraction - kSigmaIdeal[i - 1].
double delta_esv(std::span<const Gmm2> predictions, std::span<const Vec2> gt, int i,
                 EsvMode mode = EsvMode::TopMode);

struct HorizonReport {
  double horizon_s = 0.0;
  int horizon_step = 0;
  double nll_mean = 0.0;
  double nll_std = 0.0;
  double fde = 0.0;
  std::array<double, 3> desv{};
  std::size_t n = 0;
};

struct EvalReport {
  std::vector<HorizonReport> horizons;
};

struct EvalConfig {
  std::vector<int> horizon_steps{2, 4, 6, 8};
  int stride = 10;
  FdeMode fde_mode = FdeMode::MixtureMean;
  EsvMode esv_mode = EsvMode::TopMode;

  void validate(int model_horizon) const;
};

/// Predicts every window (stride apart) of the model's agent type in the test
/// scenes and aggregates the metrics per horizon. Throws EmptyTestSet.
EvalReport evaluate(const model::Forecaster& model, std::span<const Scene> test, const EvalConfig& config,
                    int threads = 1);

/// Aggregates already computed predictions; predictions[i].steps[h - 1] is
/// compared with gt[i][h - 1].
EvalReport evaluate_predictions(std::span<const model::Prediction> predictions,
                                std::span<const std::vector<Vec2>> gt, double dt, const EvalConfig& config);

/// `horizon_s,nll_mean,nll_std,fde,desv1,desv2,desv3,n`
std::string eval_report_csv(const EvalReport& report);

}  // namespace utraj::metrics
