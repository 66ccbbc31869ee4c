#include "utraj/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <string>

#include "utraj/parallel.hpp"

namespace utraj::metrics {

namespace {

void check_aligned(std::size_t a, std::size_t b) {
  if (a != b) {
    throw Error(ErrorCode::HorizonMismatch,
                std::to_string(a) + " predictions vs " + std::to_string(b) + " GT positions");
  }
}

bool within(const Gaussian2& g, const Vec2& x, int i) {
  return mahalanobis2(g, x) <= static_cast<double>(i * i);
}

}  // namespace

FdeMode fde_mode_from_string(std::string_view name) {
  if (name == "mixture_mean") return FdeMode::MixtureMean;
  if (name == "top_mode") return FdeMode::TopMode;
  throw Error(ErrorCode::ConfigError, "unknown fde_mode '" + std::string(name) + "'");
}

EsvMode esv_mode_from_string(std::string_view name) {
  if (name == "top_mode") return EsvMode::TopMode;
  if (name == "any_mode") return EsvMode::AnyMode;
  throw Error(ErrorCode::ConfigError, "unknown esv_mode '" + std::string(name) + "'");
}

NllStats nll(std::span<const Gmm2> predictions, std::span<const Vec2> gt) {
  check_aligned(predictions.size(), gt.size());
  NllStats s;
  if (predictions.empty()) return s;
  std::vector<double> v(predictions.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = -gmm_logpdf(predictions[i], gt[i]);
    s.mean += v[i];
  }
  s.mean /= static_cast<double>(v.size());
  double acc = 0.0;
  for (double x : v) acc += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(acc / static_cast<double>(v.size()));
  return s;
}

double fde(std::span<const Gmm2> predictions, std::span<const Vec2> gt, FdeMode mode) {
  check_aligned(predictions.size(), gt.size());
  if (predictions.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const Gmm2& p = predictions[i];
    const Vec2 m = mode == FdeMode::MixtureMean ? p.mean() : p.component(p.top_mode()).mean();
    acc += (m - gt[i]).norm();
  }
  return acc / static_cast<double>(predictions.size());
}

double esv_fraction(std::span<const Gmm2> predictions, std::span<const Vec2> gt, int i, EsvMode mode) {
  check_aligned(predictions.size(), gt.size());
  if (i < 1 || i > 3) throw Error(ErrorCode::InvalidArgument, "sigma level must be 1, 2 or 3");
  if (predictions.empty()) return 0.0;
  std::size_t inside = 0;
  for (std::size_t k = 0; k < predictions.size(); ++k) {
    const Gmm2& p = predictions[k];
    bool hit = false;
    if (mode == EsvMode::TopMode) {
      hit = within(p.component(p.top_mode()), gt[k], i);
    } else {
      for (std::size_t c = 0; c < p.size() && !hit; ++c) hit = p.weight(c) > 0.0 && within(p.component(c), gt[k], i);
    }
    inside += hit ? 1 : 0;
  }
  return static_cast<double>(inside) / static_cast<double>(predictions.size());
}

double delta_esv(std::span<const Gmm2> predictions, std::span<const Vec2> gt, int i, EsvMode mode) {
  return esv_fraction(predictions, gt, i, mode) - kSigmaIdeal.at(static_cast<std::size_t>(i - 1));
}

void EvalConfig::validate(int model_horizon) const {
  if (horizon_steps.empty()) throw Error(ErrorCode::ConfigError, "eval.horizon_steps must not be empty");
  for (int h : horizon_steps) {
    if (h < 1 || h > model_horizon) {
      throw Error(ErrorCode::HorizonMismatch, "eval horizon step " + std::to_string(h) + " outside [1, " +
                                                  std::to_string(model_horizon) + "]");
    }
  }
  if (stride < 1) throw Error(ErrorCode::ConfigError, "eval.stride must be >= 1");
}

EvalReport evaluate_predictions(std::span<const model::Prediction> predictions,
                                std::span<const std::vector<Vec2>> gt, double dt, const EvalConfig& config) {
  check_aligned(predictions.size(), gt.size());
  if (predictions.empty()) throw Error(ErrorCode::EmptyTestSet, "no test windows to evaluate");
  EvalReport report;
  for (int h : config.horizon_steps) {
    std::vector<Gmm2> p;
    std::vector<Vec2> y;
    p.reserve(predictions.size());
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      const auto idx = static_cast<std::size_t>(h - 1);
      if (idx >= predictions[i].steps.size() || idx >= gt[i].size()) {
        throw Error(ErrorCode::HorizonMismatch, "prediction shorter than horizon step " + std::to_string(h));
      }
      p.push_back(predictions[i].steps[idx]);
      y.push_back(gt[i][idx]);
    }
    HorizonReport r;
    r.horizon_step = h;
    r.horizon_s = h * dt;
    const NllStats s = nll(p, y);
    r.nll_mean = s.mean;
    r.nll_std = s.std;
    r.fde = fde(p, y, config.fde_mode);
    for (int i = 1; i <= 3; ++i) r.desv[static_cast<std::size_t>(i - 1)] = delta_esv(p, y, i, config.esv_mode);
    r.n = p.size();
    report.horizons.push_back(r);
  }
  return report;
}

EvalReport evaluate(const model::Forecaster& model, std::span<const Scene> test, const EvalConfig& config,
                    int threads) {
  config.validate(model.config().horizon);
  if (test.empty()) throw Error(ErrorCode::EmptyTestSet, "test split is empty");
  std::vector<std::vector<model::Prediction>> preds(test.size());
  std::vector<std::vector<std::vector<Vec2>>> truth(test.size());
  parallel_for(test.size(), threads, [&](std::size_t s) {
    const auto windows = model::extract_windows(test[s], model.config(), config.stride);
    preds[s] = model.predict(windows);
    for (const auto& w : windows) {
      std::vector<Vec2> world;
      for (const Vec2& y : w.future) world.push_back(w.frame.to_world(y));
      truth[s].push_back(std::move(world));
    }
  });
  std::vector<model::Prediction> all_p;
  std::vector<std::vector<Vec2>> all_y;
  for (std::size_t s = 0; s < test.size(); ++s) {
    std::move(preds[s].begin(), preds[s].end(), std::back_inserter(all_p));
    std::move(truth[s].begin(), truth[s].end(), std::back_inserter(all_y));
  }
  return evaluate_predictions(all_p, all_y, model.config().dt, config);
}

std::string eval_report_csv(const EvalReport& report) {
  std::string out = "horizon_s,nll_mean,nll_std,fde,desv1,desv2,desv3,n\n";
  char buf[320];
  for (const auto& r : report.horizons) {
    std::snprintf(buf, sizeof buf, "%.6g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%zu\n", r.horizon_s, r.nll_mean,
                  r.nll_std, r.fde, r.desv[0], r.desv[1], r.desv[2], r.n);
    out += buf;
  }
  return out;
}

}  // namespace utraj::metrics
