#include "utraj/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace utraj {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // ln(2 pi)

double min_eigenvalue(const Mat2& m) {
  const double half_trace = 0.5 * (m(0, 0) + m(1, 1));
  const double diff = 0.5 * (m(0, 0) - m(1, 1));
  return half_trace - std::sqrt(diff * diff + m(0, 1) * m(1, 0));
}

}  // namespace

Mat2 cholesky2(const Mat2& m) {
  if (!(m(0, 0) > kEpsPd)) {
    throw Error(ErrorCode::NotPositiveDefinite, "cholesky2: first pivot " + std::to_string(m(0, 0)));
  }
  const double l00 = std::sqrt(m(0, 0));
  const double l10 = m(1, 0) / l00;
  const double pivot = m(1, 1) - l10 * l10;
  if (!(pivot > kEpsPd)) {
    throw Error(ErrorCode::NotPositiveDefinite, "cholesky2: second pivot " + std::to_string(pivot));
  }
  Mat2 l;
  l << l00, 0.0, l10, std::sqrt(pivot);
  return l;
}

double logdet2(const Mat2& m) {
  const Mat2 l = cholesky2(m);
  return 2.0 * (std::log(l(0, 0)) + std::log(l(1, 1)));
}

MatX symmetrize(const MatX& m) { return 0.5 * (m + m.transpose()); }
Mat2 symmetrize(const Mat2& m) { return 0.5 * (m + m.transpose()); }

Mat2 regularize(const Mat2& m) { return symmetrize(m) + kEpsReg * Mat2::Identity(); }

double wrap_angle(double radians) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double a = std::fmod(radians, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

Gaussian2::Gaussian2(Vec2 mean, const Mat2& cov) : mean_(std::move(mean)), cov_(symmetrize(cov)) {
  if (!mean_.allFinite() || !cov_.allFinite()) {
    throw Error(ErrorCode::InvalidArgument, "Gaussian2: non-finite parameters");
  }
  if (!(min_eigenvalue(cov_) > kEpsPd)) {
    throw Error(ErrorCode::NotPositiveDefinite, "Gaussian2: covariance is not positive definite");
  }
}

Gmm2::Gmm2(std::vector<double> weights, std::vector<Gaussian2> components)
    : weights_(std::move(weights)), components_(std::move(components)) {
  if (weights_.empty() || weights_.size() != components_.size()) {
    throw Error(ErrorCode::InvalidArgument, "Gmm2: need K >= 1 weights matching the components");
  }
  double total = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0)) throw Error(ErrorCode::InvalidArgument, "Gmm2: negative weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error(ErrorCode::InvalidArgument, "Gmm2: weights sum to " + std::to_string(total));
  }
}

Gmm2::Gmm2(const Gaussian2& single) : weights_{1.0}, components_{single} {}

Vec2 Gmm2::mean() const {
  Vec2 m = Vec2::Zero();
  for (std::size_t k = 0; k < size(); ++k) m += weights_[k] * components_[k].mean();
  return m;
}

std::size_t Gmm2::top_mode() const {
  return static_cast<std::size_t>(std::max_element(weights_.begin(), weights_.end()) - weights_.begin());
}

double mahalanobis2(const Gaussian2& g, const Vec2& x) {
  const Mat2 l = cholesky2(regularize(g.cov()));
  // Solve L w = (x - mu).
  const Vec2 d = x - g.mean();
  const double w0 = d(0) / l(0, 0);
  const double w1 = (d(1) - l(1, 0) * w0) / l(1, 1);
  return w0 * w0 + w1 * w1;
}

double gaussian_logpdf(const Gaussian2& g, const Vec2& x) {
  const Mat2 cov = regularize(g.cov());
  const Mat2 l = cholesky2(cov);
  const Vec2 d = x - g.mean();
  const double w0 = d(0) / l(0, 0);
  const double w1 = (d(1) - l(1, 0) * w0) / l(1, 1);
  const double logdet = 2.0 * (std::log(l(0, 0)) + std::log(l(1, 1)));
  return -0.5 * (w0 * w0 + w1 * w1) - 0.5 * logdet - kLog2Pi;
}

double gmm_logpdf(const Gmm2& g, const Vec2& x) {
  std::vector<double> terms;
  terms.reserve(g.size());
  double shift = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (g.weight(k) <= 0.0) continue;
    terms.push_back(std::log(g.weight(k)) + gaussian_logpdf(g.component(k), x));
    shift = std::max(shift, terms.back());
  }
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - shift);
  return shift + std::log(acc);
}

std::string_view to_string(AgentType type) {
  switch (type) {
    case AgentType::Particle: return "particle";
    case AgentType::Pedestrian: return "pedestrian";
    case AgentType::Vehicle: return "vehicle";
  }
  return "unknown";
}

AgentType agent_type_from_string(std::string_view name) {
  for (AgentType t : kAllAgentTypes) {
    if (to_string(t) == name) return t;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown agent type '" + std::string(name) + "'");
}

void validate(const Scene& scene) {
  if (!(scene.dt > 0.0)) throw Error(ErrorCode::InvalidArgument, "scene dt must be positive");
  for (const auto& agent : scene.agents) {
    if (agent.gt.empty()) continue;
    if (agent.first_step() < 0 || agent.last_step() >= scene.duration) {
      throw Error(ErrorCode::InvalidArgument,
                  "agent " + std::to_string(agent.agent_id) + " lies outside [0, duration)");
    }
    for (std::size_t i = 0; i < agent.gt.size(); ++i) {
      const auto& s = agent.gt[i];
      if (s.step != agent.first_step() + static_cast<int>(i)) {
        throw Error(ErrorCode::InvalidArgument, "agent track steps are not consecutive");
      }
      if (!s.position.allFinite()) throw Error(ErrorCode::InvalidArgument, "non-finite position");
    }
    if (!agent.tracked.empty()) {
      if (agent.tracked.size() != agent.gt.size()) {
        throw Error(ErrorCode::InvalidArgument, "tracked and gt timestamps differ");
      }
      for (std::size_t i = 0; i < agent.gt.size(); ++i) {
        if (agent.tracked[i].step != agent.gt[i].step) {
          throw Error(ErrorCode::InvalidArgument, "tracked and gt timestamps differ");
        }
      }
    }
  }
}

}  // namespace utraj
