#include "utraj/statdist.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include <Eigen/LU>

namespace utraj::statdist {

namespace {

struct BhattacharyyaParts {
  Vec2 delta;     // mu_p - mu_q
  Mat2 avg_inv;   // ((Sigma_p + Sigma_q) / 2)^-1
  Mat2 p_inv;
  Mat2 q_inv;
  double value;
};

BhattacharyyaParts bhattacharyya_parts(const Gaussian2& p, const Gaussian2& q) {
  const Mat2 cp = regularize(p.cov());
  const Mat2 cq = regularize(q.cov());
  const Mat2 avg = 0.5 * (cp + cq);
  BhattacharyyaParts parts;
  parts.delta = p.mean() - q.mean();
  parts.avg_inv = avg.inverse();
  parts.p_inv = cp.inverse();
  parts.q_inv = cq.inverse();
  const double quad = parts.delta.dot(parts.avg_inv * parts.delta);
  const double value =
      0.125 * quad + 0.5 * logdet2(avg) - 0.25 * logdet2(cp) - 0.25 * logdet2(cq);
  // The log-det term is nonnegative analytically; clip rounding noise.
  parts.value = value > 0.0 ? value : 0.0;
  return parts;
}

DistanceGradient bhattacharyya_grad(const Gaussian2& p, const Gaussian2& q) {
  const auto parts = bhattacharyya_parts(p, q);
  const Vec2 w = parts.avg_inv * parts.delta;
  DistanceGradient g;
  g.mean_p = 0.25 * w;
  g.mean_q = -0.25 * w;
  const Mat2 shared = -(1.0 / 16.0) * w * w.transpose() + 0.25 * parts.avg_inv;
  g.cov_p = shared - 0.25 * parts.p_inv;
  g.cov_q = shared - 0.25 * parts.q_inv;
  return g;
}

DistanceGradient skl_grad(const Gaussian2& p, const Gaussian2& q) {
  const Mat2 cp = regularize(p.cov());
  const Mat2 cq = regularize(q.cov());
  const Mat2 pi = cp.inverse();
  const Mat2 qi = cq.inverse();
  const Vec2 d = p.mean() - q.mean();
  DistanceGradient g;
  g.mean_p = 0.5 * (pi + qi) * d;
  g.mean_q = -g.mean_p;
  const Vec2 pd = pi * d;
  const Vec2 qd = qi * d;
  g.cov_p = 0.25 * (qi - pi * cq * pi - pd * pd.transpose());
  g.cov_q = 0.25 * (pi - qi * cp * qi - qd * qd.transpose());
  return g;
}

}  // namespace

std::string_view to_string(DistanceKind kind) {
  switch (kind) {
    case DistanceKind::Bhattacharyya: return "bhattacharyya";
    case DistanceKind::SymmetricKL: return "skl";
    case DistanceKind::Hellinger: return "hellinger";
  }
  return "unknown";
}

double bhattacharyya(const Gaussian2& p, const Gaussian2& q) { return bhattacharyya_parts(p, q).value; }

double hellinger(const Gaussian2& p, const Gaussian2& q) {
  return std::sqrt(-std::expm1(-bhattacharyya(p, q)));
}

double symmetric_kl(const Gaussian2& p, const Gaussian2& q) {
  const Mat2 cp = regularize(p.cov());
  const Mat2 cq = regularize(q.cov());
  const Mat2 pi = cp.inverse();
  const Mat2 qi = cq.inverse();
  const Vec2 d = p.mean() - q.mean();
  const double value =
      0.25 * ((qi * cp).trace() + (pi * cq).trace() + d.dot((pi + qi) * d) - 4.0);
  return value > 0.0 ? value : 0.0;
}

double distance(DistanceKind kind, const Gaussian2& p, const Gaussian2& q) {
  switch (kind) {
    case DistanceKind::Bhattacharyya: return bhattacharyya(p, q);
    case DistanceKind::SymmetricKL: return symmetric_kl(p, q);
    case DistanceKind::Hellinger: return hellinger(p, q);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown distance kind");
}

double bhattacharyya_mixture(std::span<const double> weights, std::span<const Gaussian2> components,
                             const Gaussian2& q) {
  if (weights.size() != components.size()) {
    throw Error(ErrorCode::DimensionMismatch, "mixture weights and components differ in length");
  }
  double acc = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) acc += weights[k] * bhattacharyya(components[k], q);
  return acc;
}

double bhattacharyya_gmm(const Gmm2& p, const Gaussian2& q) {
  return bhattacharyya_mixture(p.weights(), p.components(), q);
}

DistanceGradient distance_grad(DistanceKind kind, const Gaussian2& p, const Gaussian2& q) {
  switch (kind) {
    case DistanceKind::Bhattacharyya: return bhattacharyya_grad(p, q);
    case DistanceKind::SymmetricKL: return skl_grad(p, q);
    case DistanceKind::Hellinger: {
      const double db = bhattacharyya(p, q);
      const double h = std::sqrt(-std::expm1(-db));
      if (h == 0.0) return {};
      const double factor = std::exp(-db) / (2.0 * h);
      auto g = bhattacharyya_grad(p, q);
      g.mean_p *= factor;
      g.mean_q *= factor;
      g.cov_p *= factor;
      g.cov_q *= factor;
      return g;
    }
  }
  throw Error(ErrorCode::InvalidArgument, "unknown distance kind");
}

MixtureDistanceGradient bhattacharyya_gmm_grad(const Gmm2& p, const Gaussian2& q) {
  MixtureDistanceGradient out;
  out.weights.reserve(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double w = p.weight(k);
    const auto g = bhattacharyya_grad(p.component(k), q);
    out.weights.push_back(bhattacharyya(p.component(k), q));
    out.means.push_back(w * g.mean_p);
    out.covs.push_back(w * g.cov_p);
    out.mean_q += w * g.mean_q;
    out.cov_q += w * g.cov_q;
  }
  return out;
}

std::vector<DistanceStudyRow> distance_study(const DistanceStudyGrid& grid) {
  std::vector<DistanceStudyRow> rows;
  const Gaussian2 p(Vec2::Zero(), Mat2::Identity());
  for (double offset : grid.offsets) {
    for (double scale : grid.scales) {
      const Gaussian2 q(Vec2(offset, 0.0), scale * Mat2::Identity());
      DistanceStudyRow row;
      row.offset = offset;
      row.scale = scale;
      row.bhattacharyya = bhattacharyya(p, q);
      row.skl = symmetric_kl(p, q);
      row.hellinger = hellinger(p, q);
      row.hellinger_saturated = row.hellinger > kHellingerSaturation;
      rows.push_back(row);
    }
  }
  return rows;
}

std::string distance_study_csv(const std::vector<DistanceStudyRow>& rows) {
  std::ostringstream out;
  out << "offset,scale,bhattacharyya,skl,hellinger,hellinger_saturated\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6g,%.6g,%.10g,%.10g,%.10g,%d\n", r.offset, r.scale,
                  r.bhattacharyya, r.skl, r.hellinger, r.hellinger_saturated ? 1 : 0);
    out << buf;
  }
  return out.str();
}

}  // namespace utraj::statdist
