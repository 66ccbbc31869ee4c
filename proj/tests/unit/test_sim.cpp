#include <gtest/gtest.h>

#include <cmath>

#include "generators.hpp"
#include "utraj/sim.hpp"

using namespace utraj;
using namespace utraj::sim;

namespace {

bool same(const Scene& a, const Scene& b) {
  if (a.agents.size() != b.agents.size() || a.duration != b.duration) return false;
  for (std::size_t i = 0; i < a.agents.size(); ++i) {
    const auto& x = a.agents[i];
    const auto& y = b.agents[i];
    if (x.gt.size() != y.gt.size() || x.tracked.size() != y.tracked.size()) return false;
    for (std::size_t t = 0; t < x.gt.size(); ++t) {
      if (x.gt[t].position != y.gt[t].position || x.gt[t].velocity != y.gt[t].velocity) return false;
    }
    for (std::size_t t = 0; t < x.tracked.size(); ++t) {
      if (x.tracked[t].cov != y.tracked[t].cov) return false;
    }
  }
  return true;
}

SimConfig small_config() {
  SimConfig c;
  c.train_count = 4;
  c.val_count = 2;
  c.test_count = 2;
  return c;
}

}  // namespace

TEST(SocialForce, Examples) {
  SimConfig c;
  c.damping = 0.0;
  std::vector<Vec2> p{Vec2(0, 0), Vec2(1000, 0)};
  std::vector<Vec2> v{Vec2::Zero(), Vec2::Zero()};
  EXPECT_LT(social_force(p, v, 0, c).norm(), 1e-40);

  p = {Vec2(-0.7, 0.2), Vec2(0.7, -0.2)};
  EXPECT_TRUE((social_force(p, v, 0, c) + social_force(p, v, 1, c)).isZero(1e-15));

  p = {Vec2(0, 0), Vec2(1, 0)};
  EXPECT_NEAR(social_force(p, v, 0, c).norm(), 2.0 * std::exp(-1.0), 1e-15);
  EXPECT_NEAR(0.7358, 2.0 * std::exp(-1.0), 1e-4);

  p = {Vec2(0, 0), Vec2(0, 1e-7)};
  try {
    social_force(p, v, 0, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AgentsCoincident);
  }
}

TEST(SocialForce, DampingOpposesVelocity) {
  SimConfig c;
  std::vector<Vec2> p{Vec2(0, 0), Vec2(1000, 0)};
  std::vector<Vec2> v{Vec2(1, 2), Vec2::Zero()};
  EXPECT_TRUE(social_force(p, v, 0, c).isApprox(-0.1 * Vec2(1, 2), 1e-12));
}

TEST(Simulate, Shape) {
  const Scene s = simulate_scenario(SimConfig{}, 3);
  EXPECT_EQ(s.agents.size(), 3u);
  for (const auto& a : s.agents) {
    EXPECT_EQ(a.gt.size(), 301u);
    EXPECT_EQ(a.type, AgentType::Particle);
  }
  EXPECT_EQ(s.duration, 301);
}

TEST(Simulate, ForceFreeStraightLines) {
  SimConfig c;
  c.repulsion_strength = 0.0;
  c.damping = 0.0;
  const Scene s = simulate_scenario(c, 9);
  for (const auto& a : s.agents) {
    const Vec2 p0 = a.gt.front().position;
    const Vec2 v0 = a.gt.front().velocity;
    for (const auto& g : a.gt) EXPECT_LT((g.position - (p0 + v0 * (g.step * c.dt))).norm(), 1e-9);
  }
}

TEST(Simulate, Deterministic) {
  EXPECT_TRUE(same(simulate_scenario(SimConfig{}, 17), simulate_scenario(SimConfig{}, 17)));
  EXPECT_FALSE(same(simulate_scenario(SimConfig{}, 17), simulate_scenario(SimConfig{}, 18)));
}

TEST(Simulate, DampedSpeedNonIncreasingWhenFarApart) {
  SimConfig c;
  c.init_position_range = 1e4;
  c.n_agents = 2;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scene s = simulate_scenario(c, seed);
    for (const auto& a : s.agents) {
      for (std::size_t t = 1; t < a.gt.size(); ++t) {
        EXPECT_LE(a.gt[t].velocity.norm(), a.gt[t - 1].velocity.norm() + 1e-15);
      }
    }
  }
}

TEST(Property, PairwiseMomentumConserved) {
  SimConfig c;
  c.damping = 0.0;
  c.init_position_range = 1.5;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scene s = simulate_scenario(c, seed);
    Vec2 m0 = Vec2::Zero();
    for (const auto& a : s.agents) m0 += a.gt[0].velocity;
    for (std::size_t t = 1; t < s.agents[0].gt.size(); ++t) {
      Vec2 prev = Vec2::Zero(), now = Vec2::Zero();
      for (const auto& a : s.agents) {
        prev += a.gt[t - 1].velocity;
        now += a.gt[t].velocity;
      }
      EXPECT_LT((now - prev).norm(), 1e-6);
    }
  }
}

TEST(CovGen, Examples) {
  const Scene s = simulate_scenario(SimConfig{}, 1);
  CovarianceGenConfig g;
  g.step_noise_std = 0.0;
  Scene out = generate_covariances(s, g, 3);
  for (const auto& a : out.agents) {
    EXPECT_EQ(a.source, TrackSource::Synthetic);
    for (const auto& t : a.tracked) EXPECT_EQ(t.cov, a.tracked.front().cov);
  }
  g.base_var_std = 0.0;
  out = generate_covariances(s, g, 3);
  for (const auto& a : out.agents) {
    for (const auto& t : a.tracked) {
      EXPECT_DOUBLE_EQ(t.cov(0, 0), 0.2);
      EXPECT_DOUBLE_EQ(t.cov(1, 1), 0.2);
    }
  }
}

TEST(CovGen, LargeOverSmallRatio) {
  const CovarianceGenConfig base;
  const CovarianceGenConfig large = base.scaled(2.5);
  const CovarianceGenConfig small = base.scaled(0.25);
  EXPECT_DOUBLE_EQ(large.base_var_mean, 0.5);
  EXPECT_DOUBLE_EQ(small.base_var_mean, 0.05);
  double sum_l = 0.0, sum_s = 0.0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const Scene s = simulate_scenario(SimConfig{}, seed);
    for (const auto& a : generate_covariances(s, large, seed).agents) {
      for (const auto& t : a.tracked) sum_l += t.cov(0, 0) + t.cov(1, 1);
    }
    for (const auto& a : generate_covariances(s, small, seed).agents) {
      for (const auto& t : a.tracked) sum_s += t.cov(0, 0) + t.cov(1, 1);
    }
  }
  EXPECT_NEAR(sum_l / sum_s, 10.0, 1.0);
}

TEST(Property, CovariancesDiagonalAboveFloor) {
  CovarianceGenConfig g;
  g.step_noise_std = 0.3;  // force clamping often
  g.base_var_std = 0.01;
  g.base_var_mean = 0.05;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Scene s = generate_covariances(simulate_scenario(SimConfig{}, seed), g, seed);
    for (const auto& a : s.agents) {
      for (const auto& t : a.tracked) {
        EXPECT_GE(t.cov(0, 0), g.var_min);
        EXPECT_GE(t.cov(1, 1), g.var_min);
        EXPECT_EQ(t.cov(0, 1), 0.0);
        EXPECT_EQ(t.cov(1, 0), 0.0);
      }
    }
  }
}

TEST(Dataset, CountsAndDeterminism) {
  const Dataset d = build_dataset(SimConfig{}, 1);
  EXPECT_EQ(d.train.size(), 250u);
  EXPECT_EQ(d.val.size(), 75u);
  EXPECT_EQ(d.test.size(), 50u);
  for (const auto& s : d.test) {
    EXPECT_EQ(s.agents.size(), 3u);
    for (const auto& a : s.agents) EXPECT_EQ(a.gt.size(), 301u);
  }
  const Dataset a = build_dataset(small_config(), 1);
  const Dataset b = build_dataset(small_config(), 3);
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_TRUE(same(a.train[i], b.train[i]));
  EXPECT_FALSE(same(a.train[0], a.val[0]));
}

TEST(SimConfig, Validation) {
  SimConfig c;
  c.dt = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = SimConfig{};
  c.val_count = 0;
  EXPECT_THROW(c.validate(), Error);
  CovarianceGenConfig g;
  g.base_var_std = 0.1;  // mean must exceed 3 std
  EXPECT_THROW(g.validate(), Error);
}
