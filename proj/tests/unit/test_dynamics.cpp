#include <gtest/gtest.h>

#include <cmath>

#include "generators.hpp"
#include "utraj/dynamics.hpp"

using namespace utraj;
using namespace utraj::dynamics;
using utraj::testing::Gen;

namespace {

VecX v(std::initializer_list<double> xs) {
  VecX out(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) out(i++) = x;
  return out;
}

DynamicsModel make(DynamicsKind k, double dt) { return {k, dt, kDefaultWheelbase}; }

Linearization finite_difference(const DynamicsModel& m, const VecX& s, const VecX& u, double h = 1e-6) {
  Linearization out{MatX(s.size(), s.size()), MatX(s.size(), u.size())};
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    VecX a = s, b = s;
    a(i) += h;
    b(i) -= h;
    VecX d = step_mean(m, a, u) - step_mean(m, b, u);
    if (m.kind == DynamicsKind::Bicycle) d(2) = wrap_angle(d(2));
    out.a.col(i) = d / (2 * h);
  }
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    VecX a = u, b = u;
    a(i) += h;
    b(i) -= h;
    VecX d = step_mean(m, s, a) - step_mean(m, s, b);
    if (m.kind == DynamicsKind::Bicycle) d(2) = wrap_angle(d(2));
    out.b.col(i) = d / (2 * h);
  }
  return out;
}

}  // namespace

TEST(StepMean, Examples) {
  EXPECT_TRUE(step_mean(make(DynamicsKind::SingleIntegrator, 0.1), v({0, 0}), v({1, 0})).isApprox(v({0.1, 0}), 1e-15));
  EXPECT_TRUE(step_mean(make(DynamicsKind::DoubleIntegrator, 0.1), v({0, 0, 1, 0}), v({0, 0}))
                  .isApprox(v({0.1, 0, 1, 0}), 1e-15));
  const VecX b = step_mean(make(DynamicsKind::Bicycle, 0.5), v({0, 0, 0, 1}), v({0, 0}));
  EXPECT_NEAR((b - v({0.5, 0, 0, 1})).norm(), 0.0, 1e-15);
}

TEST(StepMean, DimensionMismatch) {
  try {
    step_mean(make(DynamicsKind::DoubleIntegrator, 0.1), v({0, 0}), v({0, 0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
  EXPECT_THROW(jacobians(make(DynamicsKind::Bicycle, 0.1), v({0, 0, 0, 1}), v({0})), Error);
}

TEST(StepMean, BicycleHeadingWrapped) {
  const DynamicsModel m = make(DynamicsKind::Bicycle, 0.1);
  VecX s = v({0, 0, M_PI - 0.01, 5.0});
  for (int i = 0; i < 50; ++i) {
    s = step_mean(m, s, v({0, 0.5}));
    EXPECT_GT(s(2), -M_PI);
    EXPECT_LE(s(2), M_PI);
  }
}

TEST(Jacobians, LinearModels) {
  const auto si = jacobians(make(DynamicsKind::SingleIntegrator, 0.1), v({3, 4}), v({1, 2}));
  EXPECT_TRUE(si.a.isApprox(MatX::Identity(2, 2)));
  EXPECT_TRUE(si.b.isApprox(0.1 * MatX::Identity(2, 2)));
  const auto di = jacobians(make(DynamicsKind::DoubleIntegrator, 0.1), v({0, 0, 1, 1}), v({0, 0}));
  EXPECT_TRUE(di.a.topRightCorner(2, 2).isApprox(0.1 * MatX::Identity(2, 2)));
  EXPECT_TRUE(di.a.diagonal().isApprox(VecX::Ones(4)));
  EXPECT_TRUE(di.b.bottomRows(2).isApprox(0.1 * MatX::Identity(2, 2)));
}

TEST(Property, JacobiansMatchFiniteDifferences) {
  Gen gen(4);
  EXPECT_LT((jacobians(make(DynamicsKind::Bicycle, 0.1), v({0, 0, 0, 1}), v({0, 0})).a -
             finite_difference(make(DynamicsKind::Bicycle, 0.1), v({0, 0, 0, 1}), v({0, 0})).a)
                .cwiseAbs()
                .maxCoeff(),
            1e-6);
  for (DynamicsKind k : {DynamicsKind::SingleIntegrator, DynamicsKind::DoubleIntegrator, DynamicsKind::Bicycle}) {
    const DynamicsModel m = make(k, gen.uniform(0.05, 0.5));
    for (int rep = 0; rep < 200; ++rep) {
      VecX s(m.state_dim());
      for (Eigen::Index i = 0; i < s.size(); ++i) s(i) = gen.uniform(-3, 3);
      const VecX u = v({gen.uniform(-2, 2), gen.uniform(-0.5, 0.5)});
      const auto an = jacobians(m, s, u);
      const auto fd = finite_difference(m, s, u);
      EXPECT_LT((an.a - fd.a).cwiseAbs().maxCoeff(), 1e-6);
      EXPECT_LT((an.b - fd.b).cwiseAbs().maxCoeff(), 1e-6);
    }
  }
}

TEST(Property, JacobianSensitivityMatchesFiniteDifferences) {
  Gen gen(6);
  const DynamicsModel m = make(DynamicsKind::Bicycle, 0.2);
  const double h = 1e-6;
  for (int rep = 0; rep < 50; ++rep) {
    const VecX s = v({gen.uniform(-3, 3), gen.uniform(-3, 3), gen.uniform(-3, 3), gen.uniform(-3, 3)});
    const VecX u = v({gen.uniform(-2, 2), gen.uniform(-0.5, 0.5)});
    const auto sens = jacobian_sensitivity(m, s, u);
    for (int i = 0; i < 4; ++i) {
      VecX a = s, b = s;
      a(i) += h;
      b(i) -= h;
      const auto ja = jacobians(m, a, u), jb = jacobians(m, b, u);
      EXPECT_LT(((ja.a - jb.a) / (2 * h) - sens.da_dstate[i]).cwiseAbs().maxCoeff(), 1e-6);
      EXPECT_LT(((ja.b - jb.b) / (2 * h) - sens.db_dstate[i]).cwiseAbs().maxCoeff(), 1e-6);
    }
    for (int i = 0; i < 2; ++i) {
      VecX a = u, b = u;
      a(i) += h;
      b(i) -= h;
      const auto ja = jacobians(m, s, a), jb = jacobians(m, s, b);
      EXPECT_LT(((ja.a - jb.a) / (2 * h) - sens.da_dcontrol[i]).cwiseAbs().maxCoeff(), 1e-6);
      EXPECT_LT(((ja.b - jb.b) / (2 * h) - sens.db_dcontrol[i]).cwiseAbs().maxCoeff(), 1e-6);
    }
  }
}

TEST(Propagate, Examples) {
  const ControlMode zero{1.0, Vec2::Zero(), Mat2::Zero()};
  auto r = propagate_uncertainty(make(DynamicsKind::DoubleIntegrator, 0.1), v({0, 0, 1, 0}), MatX::Zero(4, 4),
                                 std::span(&zero, 1));
  EXPECT_EQ(r[0].position_cov.norm(), 0.0);

  const ControlMode unit{1.0, Vec2::Zero(), Mat2::Identity()};
  r = propagate_uncertainty(make(DynamicsKind::SingleIntegrator, 0.1), v({0, 0}), MatX::Zero(2, 2),
                            std::span(&unit, 1));
  EXPECT_TRUE(r[0].position_cov.isApprox(0.01 * Mat2::Identity(), 1e-12));

  r = propagate_uncertainty(make(DynamicsKind::DoubleIntegrator, 0.1), v({0, 0, 0, 0}), MatX::Identity(4, 4),
                            std::span(&zero, 1));
  EXPECT_TRUE(r[0].position_cov.isApprox(1.01 * Mat2::Identity(), 1e-12));
}

TEST(Property, PropagationPsdAndWeightsPreserved) {
  Gen gen(10);
  for (int rep = 0; rep < 10000; ++rep) {
    const auto kind = static_cast<DynamicsKind>(rep % 3);
    const DynamicsModel m = make(kind, gen.uniform(0.05, 0.5));
    const int d = m.state_dim();
    VecX s(d);
    for (int i = 0; i < d; ++i) s(i) = gen.uniform(-3, 3);
    MatX l = MatX::Zero(d, d);
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j <= i; ++j) l(i, j) = gen.uniform(-1, 1);
    }
    const MatX cov = l * l.transpose();
    std::vector<ControlMode> controls(3);
    for (auto& c : controls) {
      c.weight = 1.0 / 3.0;
      c.mean = gen.vec2(1.0);
      c.cov = gen.spd(0.0, 1.0);
    }
    controls[1].weight = 0.5;
    controls[2].weight = 1.0 / 6.0;
    const auto out = propagate_uncertainty(m, s, cov, controls);
    for (std::size_t k = 0; k < out.size(); ++k) {
      EXPECT_EQ(out[k].weight, controls[k].weight);
      EXPECT_TRUE(out[k].cov.isApprox(out[k].cov.transpose(), 1e-14));
      Eigen::SelfAdjointEigenSolver<MatX> es(out[k].cov);
      EXPECT_GT(es.eigenvalues().minCoeff(), -1e-10);
    }
  }
}

TEST(Property, LinearPropagationMatchesMonteCarlo) {
  Gen gen(12);
  for (DynamicsKind k : {DynamicsKind::SingleIntegrator, DynamicsKind::DoubleIntegrator}) {
    const DynamicsModel m = make(k, 0.3);
    const int d = m.state_dim();
    VecX s(d);
    for (int i = 0; i < d; ++i) s(i) = gen.uniform(1, 3);
    MatX l = MatX::Identity(d, d) * 0.5;
    l(1, 0) = 0.2;
    const MatX cov = l * l.transpose();
    const ControlMode c{1.0, Vec2(0.5, -0.3), Mat2::Identity() * 0.8};
    const auto pred = propagate_uncertainty(m, s, cov, std::span(&c, 1));
    const Mat2 lu = cholesky2(c.cov);
    const int n = 100000;
    VecX mean = VecX::Zero(d);
    MatX second = MatX::Zero(d, d);
    for (int i = 0; i < n; ++i) {
      VecX z(d);
      for (int j = 0; j < d; ++j) z(j) = gen.normal();
      const VecX x = s + l * z;
      const Vec2 u = c.mean + lu * Vec2(gen.normal(), gen.normal());
      const VecX y = step_mean(m, x, u);
      mean += y;
      second += y * y.transpose();
    }
    mean /= n;
    const MatX mc_cov = second / n - mean * mean.transpose();
    EXPECT_LT((mean - pred[0].mean).norm() / pred[0].mean.norm(), 0.02);
    for (int i = 0; i < d; ++i) EXPECT_NEAR(mc_cov(i, i), pred[0].cov(i, i), 0.02 * pred[0].cov(i, i));
  }
}

TEST(PositionMixture, CarriesWeights) {
  const ControlMode a{0.25, Vec2(1, 0), Mat2::Identity()};
  const ControlMode b{0.75, Vec2(-1, 0), Mat2::Identity()};
  const std::vector<ControlMode> cs{a, b};
  const auto out = propagate_uncertainty(make(DynamicsKind::SingleIntegrator, 0.1), v({0, 0}), MatX::Zero(2, 2), cs);
  const Gmm2 g = position_mixture(out);
  EXPECT_EQ(g.weight(0), 0.25);
  EXPECT_EQ(g.weight(1), 0.75);
  EXPECT_NEAR(g.component(0).mean().x(), 0.1, 1e-15);
}
