#include <gtest/gtest.h>

#include <cmath>

#include "generators.hpp"
#include "utraj/metrics.hpp"
#include "utraj/sim.hpp"

using namespace utraj;
using namespace utraj::metrics;
using utraj::testing::Gen;

namespace {

Gaussian2 iso(Vec2 m, double v) { return Gaussian2(m, v * Mat2::Identity()); }

model::Prediction single_step(const Gmm2& g) {
  model::Prediction p;
  p.weights = g.weights();
  p.steps = {g};
  return p;
}

}  // namespace

TEST(Nll, Examples) {
  const std::vector<Gmm2> p{Gmm2(iso(Vec2::Zero(), 1.0))};
  const std::vector<Vec2> y{Vec2::Zero()};
  EXPECT_NEAR(nll(p, y).mean, std::log(2 * M_PI), 1e-5);
  EXPECT_EQ(nll(p, y).std, 0.0);

  const std::vector<Gmm2> two{Gmm2(iso(Vec2::Zero(), 1.0)), Gmm2(iso(Vec2(1, 0), 1.0))};
  const std::vector<Vec2> yy{Vec2::Zero(), Vec2::Zero()};
  const NllStats s = nll(two, yy);
  EXPECT_NEAR(s.mean, std::log(2 * M_PI) + 0.25, 1e-5);
  EXPECT_NEAR(s.std, 0.25, 1e-5);  // population std
}

TEST(Fde, Modes) {
  const Gmm2 g({0.6, 0.4}, {iso(Vec2(1, 0), 1.0), iso(Vec2(-1, 0), 1.0)});
  const std::vector<Gmm2> p{g};
  const std::vector<Vec2> y{Vec2(1, 0)};
  EXPECT_NEAR(fde(p, y, FdeMode::MixtureMean), 0.8, 1e-12);
  EXPECT_NEAR(fde(p, y, FdeMode::TopMode), 0.0, 1e-12);
}

TEST(Esv, Examples) {
  const std::vector<Gmm2> p(4, Gmm2(iso(Vec2::Zero(), 1.0)));
  const std::vector<Vec2> y{Vec2(0.5, 0), Vec2(1.5, 0), Vec2(2.5, 0), Vec2(3.5, 0)};
  EXPECT_DOUBLE_EQ(esv_fraction(p, y, 1), 0.25);
  EXPECT_DOUBLE_EQ(esv_fraction(p, y, 2), 0.5);
  EXPECT_DOUBLE_EQ(esv_fraction(p, y, 3), 0.75);
  EXPECT_NEAR(delta_esv(p, y, 1), 0.25 - 0.39, 1e-15);
  EXPECT_THROW(esv_fraction(p, y, 4), Error);

  // truth sits on the minor mode: only any_mode counts it
  const std::vector<Gmm2> bi{Gmm2({0.7, 0.3}, {iso(Vec2(5, 0), 1.0), iso(Vec2(-5, 0), 1.0)})};
  const std::vector<Vec2> t{Vec2(-5, 0)};
  EXPECT_EQ(esv_fraction(bi, t, 1, EsvMode::TopMode), 0.0);
  EXPECT_EQ(esv_fraction(bi, t, 1, EsvMode::AnyMode), 1.0);
}

TEST(Esv, CalibratedSamplesNearZero) {
  Gen gen(3);
  const Gaussian2 g = gen.gaussian(2.0, 0.05, 2.0);
  const std::size_t n = 100000;
  std::vector<Gmm2> p(n, Gmm2(g));
  std::vector<Vec2> y(n);
  for (auto& v : y) v = utraj::testing::sample(g, gen);
  for (int i = 1; i <= 3; ++i) EXPECT_LT(std::abs(delta_esv(p, y, i)), 0.02) << i;
}

TEST(Esv, OverconfidentIsNegative) {
  Gen gen(4);
  const Gaussian2 truth(Vec2::Zero(), Mat2::Identity());
  const std::vector<Gmm2> p(20000, Gmm2(iso(Vec2::Zero(), 0.25)));
  std::vector<Vec2> y(p.size());
  for (auto& v : y) v = utraj::testing::sample(truth, gen);
  EXPECT_LT(delta_esv(p, y, 1), -0.1);
  const std::vector<Gmm2> wide(p.size(), Gmm2(iso(Vec2::Zero(), 4.0)));
  EXPECT_GT(delta_esv(wide, y, 1), 0.1);
}

TEST(Errors, HorizonMismatchAndEmpty) {
  const std::vector<Gmm2> p(2, Gmm2(iso(Vec2::Zero(), 1.0)));
  const std::vector<Vec2> y(3, Vec2::Zero());
  for (auto call : {+[](std::span<const Gmm2> a, std::span<const Vec2> b) { (void)nll(a, b); },
                    +[](std::span<const Gmm2> a, std::span<const Vec2> b) { (void)fde(a, b); },
                    +[](std::span<const Gmm2> a, std::span<const Vec2> b) { (void)esv_fraction(a, b, 1); }}) {
    try {
      call(p, y);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::HorizonMismatch);
    }
  }
  EvalConfig c;
  c.horizon_steps = {1};
  try {
    (void)evaluate_predictions({}, {}, 0.1, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyTestSet);
  }
  c.horizon_steps = {9};
  EXPECT_THROW(c.validate(8), Error);
  model::ModelConfig mc;
  model::Forecaster f(mc, 1);
  try {
    (void)evaluate(f, {}, EvalConfig{}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyTestSet);
  }
}

TEST(Report, PredictionsAndCsv) {
  std::vector<model::Prediction> preds;
  std::vector<std::vector<Vec2>> gt;
  for (int i = 0; i < 4; ++i) {
    model::Prediction p;
    p.weights = {1.0};
    for (int t = 0; t < 2; ++t) p.steps.emplace_back(iso(Vec2(t, 0), 1.0));
    preds.push_back(p);
    gt.push_back({Vec2(0, 0.5 * i), Vec2(1, 0)});
  }
  EvalConfig c;
  c.horizon_steps = {1, 2};
  const EvalReport r = evaluate_predictions(preds, gt, 0.4, c);
  ASSERT_EQ(r.horizons.size(), 2u);
  EXPECT_NEAR(r.horizons[0].horizon_s, 0.4, 1e-15);
  EXPECT_NEAR(r.horizons[1].horizon_s, 0.8, 1e-15);
  EXPECT_EQ(r.horizons[1].fde, 0.0);
  EXPECT_NEAR(r.horizons[0].fde, 0.75, 1e-12);
  EXPECT_EQ(r.horizons[0].n, 4u);
  EXPECT_NEAR(r.horizons[1].desv[0], 1.0 - 0.39, 1e-15);
  const std::string csv = eval_report_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "horizon_s,nll_mean,nll_std,fde,desv1,desv2,desv3,n");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);

  c.horizon_steps = {3};
  EXPECT_THROW(evaluate_predictions(preds, gt, 0.4, c), Error);
}

TEST(Report, EndToEndOnSimulatedScenes) {
  sim::SimConfig sc;
  sc.duration_s = 3.0;
  std::vector<Scene> test;
  for (std::uint64_t s = 0; s < 3; ++s) {
    test.push_back(sim::generate_covariances(sim::simulate_scenario(sc, s), sc.cov_gen, s + 9));
  }
  model::ModelConfig mc;
  mc.latent_size = 4;
  mc.hist_hidden = mc.dec_hidden = 8;
  const model::Forecaster f(mc, 2);
  EvalConfig c;
  const EvalReport a = evaluate(f, test, c, 1);
  const EvalReport b = evaluate(f, test, c, 3);
  EXPECT_EQ(eval_report_csv(a), eval_report_csv(b));
  ASSERT_EQ(a.horizons.size(), 4u);
  for (const auto& h : a.horizons) {
    EXPECT_TRUE(std::isfinite(h.nll_mean));
    EXPECT_GT(h.n, 0u);
  }
}
