#include <benchmark/benchmark.h>

#include "mrdib/infotheory.hpp"
#include "mrdib/metrics.hpp"
#include "mrdib/objectives.hpp"
#include "mrdib/synth.hpp"

using namespace mrdib;

namespace {

num::Tensor random_tensor(std::size_t r, std::size_t c, num::Rng& rng, bool param = false) {
  std::vector<double> v(r * c);
  for (double& x : v) x = rng.normal();
  return param ? num::Tensor::parameter(r, c, std::move(v)) : num::Tensor(r, c, std::move(v));
}

data::IndexedSynth synth_fixture() {
  data::SynthConfig sc;
  sc.n_users = 200;
  sc.n_items = 300;
  sc.bits_unique_1 = sc.bits_unique_2 = sc.bits_redundant = sc.bits_synergy = 1;
  sc.positives_per_user = 10;
  sc.seed = 1;
  return data::index_synth(data::synth_pid_generate(sc), 1);
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  num::Rng rng(1);
  const auto a = random_tensor(n, n, rng), b = random_tensor(n, n, rng);
  for (auto _ : state) benchmark::DoNotOptimize(num::matmul(a, b).values().data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

// two-layer MLP on a batch of 256, forward plus backward
static void BM_MlpForwardBackward(benchmark::State& state) {
  num::Rng rng(2);
  const auto x = random_tensor(256, 64, rng);
  auto w1 = random_tensor(64, 128, rng, true), w2 = random_tensor(128, 1, rng, true);
  for (auto _ : state) {
    w1.zero_grad();
    w2.zero_grad();
    num::backward(num::mean(num::matmul(num::relu(num::matmul(x, w1)), w2)));
    benchmark::DoNotOptimize(w1.grad().data());
  }
}
BENCHMARK(BM_MlpForwardBackward);

static void BM_DvBound(benchmark::State& state) {
  num::Rng rng(3);
  info::MineNetwork f(32, 32, 64, rng);
  const auto z1 = random_tensor(256, 32, rng), z2 = random_tensor(256, 32, rng);
  for (auto _ : state) benchmark::DoNotOptimize(info::dv_bound(f, z1, z2, rng).item());
}
BENCHMARK(BM_DvBound);

static void BM_TrainEpoch(benchmark::State& state) {
  const auto ix = synth_fixture();
  model::ModelConfig mc;
  mc.dims = {32, 64, 64, 64};
  model::HostModel host(mc, ix.dataset.n_users(), ix.dataset.n_items(), ix.visual, ix.textual, 1);
  objectives::TrainOptions opt;
  opt.batch_size = 512;
  objectives::TrainerState st(opt, 1);
  const objectives::LossWeights w{0.001, 0.05, 0.005};
  for (auto _ : state) benchmark::DoNotOptimize(objectives::train_epoch(host, ix.dataset, w, st).mean.total);
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ix.dataset.n_train()));
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond);

static void BM_EvaluateTest(benchmark::State& state) {
  const auto ix = synth_fixture();
  model::ModelConfig mc;
  mc.dims = {32, 64, 64, 64};
  const model::HostModel host(mc, ix.dataset.n_users(), ix.dataset.n_items(), ix.visual, ix.textual, 1);
  for (auto _ : state)
    benchmark::DoNotOptimize(eval::evaluate(host, ix.dataset, eval::SplitKind::test).recall);
}
BENCHMARK(BM_EvaluateTest)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
