#include <benchmark/benchmark.h>

#include <vector>

#include "dmden/diffusion.hpp"
#include "dmden/gmm.hpp"
#include "dmden/model.hpp"
#include "dmden/schedule.hpp"

using namespace dmden;

namespace {

const Gmm& prior() {
  static const Gmm g = normalize_gmm(random_gmm(8, 4, 7));
  return g;
}

Batch inputs(Eigen::Index batch) {
  Rng rng(1);
  return rng.normal_batch(8, batch);
}

void BM_OracleStep(benchmark::State& state) {
  const OracleDenoiser d(prior(), reference_schedule(1000));
  const Batch x = inputs(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(d.step_batch(x, 500));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_OracleStep)->Arg(1)->Arg(64)->Arg(512);

void BM_MlpStep(benchmark::State& state) {
  Rng rng(2);
  const MlpDenoiser d(MlpNetwork::random(8, 32, {128, 128}, rng), reference_schedule(100));
  const Batch x = inputs(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(d.step_batch(x, 50));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MlpStep)->Arg(1)->Arg(64)->Arg(512);

void BM_DeterministicDenoise(benchmark::State& state) {
  const OracleDenoiser d(prior(), reference_schedule(1000));
  const Batch y = inputs(512);
  const std::vector<double> eta(512, db_to_linear(-static_cast<double>(state.range(0))));
  for (auto _ : state) benchmark::DoNotOptimize(deterministic_denoise(d, y, eta));
  state.SetItemsProcessed(state.iterations() * 512);
}
BENCHMARK(BM_DeterministicDenoise)->Arg(-10)->Arg(0)->Arg(10)->Arg(20)->Unit(benchmark::kMillisecond);

void BM_TrainingLoss(benchmark::State& state) {
  Rng rng(3);
  const auto s = reference_schedule(100);
  const MlpNetwork net = MlpNetwork::random(8, 32, {128, 128}, rng);
  const TrainingBatch batch = draw_training_batch(prior(), s, 128, 1, rng);
  for (auto _ : state) benchmark::DoNotOptimize(loss_eps(net, batch, s));
}
BENCHMARK(BM_TrainingLoss);

}  // namespace

BENCHMARK_MAIN();
