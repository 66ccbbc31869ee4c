#pragma once

// Hand-rolled random generators and numerical oracles shared by the tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>

#include <Eigen/Eigenvalues>

#include "utraj/core.hpp"

namespace utraj::testing {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal(double mean = 0.0, double std = 1.0) { return std::normal_distribution<double>(mean, std)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

  Vec2 vec2(double range) { return {uniform(-range, range), uniform(-range, range)}; }

  /// Rotated diagonal with eigenvalues in [lo, hi].
  Mat2 spd(double lo = 0.2, double hi = 3.0) {
    const double th = uniform(-M_PI, M_PI);
    Mat2 r;
    r << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
    const Vec2 ev(uniform(lo, hi), uniform(lo, hi));
    return r * ev.asDiagonal() * r.transpose();
  }

  Gaussian2 gaussian(double mean_range = 2.0, double lo = 0.2, double hi = 3.0) {
    return {vec2(mean_range), spd(lo, hi)};
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

/// Draws x ~ N(g.mean, g.cov).
inline Vec2 sample(const Gaussian2& g, Gen& gen) {
  const Mat2 l = cholesky2(g.cov());
  return g.mean() + l * Vec2(gen.normal(), gen.normal());
}

/// Composite Gauss-Legendre-free 2D midpoint rule on [x0,x1]x[y0,y1].
inline double integrate2d(const std::function<double(double, double)>& f, double x0, double x1, double y0, double y1,
                          int n) {
  const double hx = (x1 - x0) / n;
  const double hy = (y1 - y0) / n;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = x0 + (i + 0.5) * hx;
    for (int j = 0; j < n; ++j) acc += f(x, y0 + (j + 0.5) * hy);
  }
  return acc * hx * hy;
}

/// Relative error with an absolute floor so values near zero compare sanely.
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace utraj::testing
