#include <benchmark/benchmark.h>

#include <random>

#include "utraj/filters.hpp"
#include "utraj/model.hpp"
#include "utraj/sim.hpp"
#include "utraj/statdist.hpp"

using namespace utraj;

namespace {

Gaussian2 random_gaussian(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> v(0.1, 2.0);
  Mat2 l;
  l << v(rng), 0.0, u(rng), v(rng);
  return {Vec2(u(rng), u(rng)), l * l.transpose()};
}

void BM_Distance(benchmark::State& state) {
  const auto kind = static_cast<statdist::DistanceKind>(state.range(0));
  std::mt19937_64 rng(1);
  const Gaussian2 p = random_gaussian(rng);
  const Gaussian2 q = random_gaussian(rng);
  for (auto _ : state) benchmark::DoNotOptimize(statdist::distance(kind, p, q));
  state.SetLabel(std::string(statdist::to_string(kind)));
}
BENCHMARK(BM_Distance)->DenseRange(0, 2);

void BM_BhattacharyyaGmm(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const auto k = static_cast<std::size_t>(state.range(0));
  std::vector<Gaussian2> comps;
  for (std::size_t i = 0; i < k; ++i) comps.push_back(random_gaussian(rng));
  const Gmm2 p(std::vector<double>(k, 1.0 / static_cast<double>(k)), comps);
  const Gaussian2 q = random_gaussian(rng);
  for (auto _ : state) benchmark::DoNotOptimize(statdist::bhattacharyya_gmm(p, q));
}
BENCHMARK(BM_BhattacharyyaGmm)->Arg(1)->Arg(25);

void BM_TrackScene(benchmark::State& state) {
  sim::SimConfig c;
  const Scene scene = sim::simulate_scenario(c, 3);
  filters::FilterConfigs fc;
  fc[AgentType::Particle] = filters::default_filter_config(AgentType::Particle, c.dt);
  for (auto _ : state) benchmark::DoNotOptimize(filters::track_scene(scene, fc, 1, 1));
}
BENCHMARK(BM_TrackScene)->Unit(benchmark::kMillisecond);

struct ModelFixture {
  std::vector<model::Window> windows;
  model::Forecaster forecaster;

  explicit ModelFixture(std::size_t batch) : forecaster(model::ModelConfig{}, 1) {
    sim::SimConfig c;
    const Scene scene = sim::generate_covariances(sim::simulate_scenario(c, 4), c.cov_gen, 5);
    auto all = model::extract_windows(scene, forecaster.config(), 1);
    all.resize(std::min(all.size(), batch));
    windows = std::move(all);
  }
  [[nodiscard]] std::vector<const model::Window*> batch() const {
    std::vector<const model::Window*> b;
    for (const auto& w : windows) b.push_back(&w);
    return b;
  }
};

void BM_ForwardBackward(benchmark::State& state) {
  ModelFixture f(static_cast<std::size_t>(state.range(0)));
  const auto batch = f.batch();
  for (auto _ : state) {
    ad::Tape tape;
    f.forecaster.parameters().zero_grad();
    const auto r = f.forecaster.forward(tape, batch, true, true);
    tape.backward(r.loss);
    benchmark::DoNotOptimize(r.terms.loss);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBackward)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Predict(benchmark::State& state) {
  ModelFixture f(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(f.forecaster.predict(f.windows));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Predict)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
