#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "drrel/click_sim.hpp"
#include "drrel/estimators.hpp"
#include "drrel/examination.hpp"
#include "drrel/mlp.hpp"
#include "drrel/neural_dr.hpp"
#include "drrel/tracking.hpp"

namespace cs = drrel::click_sim;

namespace {

void BM_EnumerateMoments(benchmark::State& state) {
  const auto truth = cs::ClickModelParams::default_web(10);
  const auto est = drrel::estimators::EstimatorParams::from_truth(truth);
  std::vector<int> pos(static_cast<std::size_t>(state.range(0)));
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = 1 + static_cast<int>(i % 10);
  const drrel::estimators::ClickEstimator f = [&](std::span<const drrel::estimators::PositionClick> d) {
    return drrel::estimators::affine_estimate(d, est).value;
  };
  for (auto _ : state) benchmark::DoNotOptimize(drrel::estimators::enumerate_moments(f, truth, 0.4, pos));
}
BENCHMARK(BM_EnumerateMoments)->Arg(4)->Arg(8)->Arg(12);

void BM_GbdtTrain(benchmark::State& state) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<std::vector<double>> x(n, std::vector<double>(6));
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : x[i]) v = z(rng);
    y[i] = x[i][0] + 0.5 * z(rng) > 0 ? 1.0 : 0.0;
  }
  drrel::examination::GbdtConfig cfg;
  cfg.n_trees = 20;
  for (auto _ : state) benchmark::DoNotOptimize(drrel::examination::gbdt_train(x, y, cfg));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}
BENCHMARK(BM_GbdtTrain)->Arg(10000)->Unit(benchmark::kMillisecond);

void BM_MlpForwardBackward(benchmark::State& state) {
  const auto net = drrel::neural_dr::TradeoffModel::make(drrel::tracking::kFeatureDim, 3).net;
  std::vector<double> x(drrel::tracking::kFeatureDim, 0.1);
  for (auto _ : state) {
    auto g = net.zero_gradients();
    benchmark::DoNotOptimize(drrel::neural_dr::tradeoff_example_loss(net, x, 0.4, 0.3, true, &g));
  }
}
BENCHMARK(BM_MlpForwardBackward);

void BM_TrackingAdvance(benchmark::State& state) {
  const auto cat = cs::generate_catalog({500, 10, 1.0, {}}, 2);
  cs::SimulationConfig sc;
  sc.n_sessions = 20000;
  sc.span_hours = 200;
  const auto sims = cs::simulate_sessions(cat, cs::ClickModelParams::default_web(10), cs::noisy_relevance_policy(0.3), sc, 4);
  std::vector<std::vector<drrel::tracking::AnnotatedSession>> hours(200);
  for (const auto& s : sims) {
    drrel::tracking::AnnotatedSession a{s.log, std::vector<double>(s.log.interactions.size(), 0.5)};
    hours[static_cast<std::size_t>(s.log.timestamp())].push_back(std::move(a));
  }
  for (auto _ : state) {
    drrel::tracking::TrackingDicts d;
    for (std::size_t h = 0; h < hours.size(); ++h) d.advance(static_cast<std::int64_t>(h), hours[h]);
    benchmark::DoNotOptimize(d.snapshot());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * sims.size()));
}
BENCHMARK(BM_TrackingAdvance)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
