#include <benchmark/benchmark.h>

#include "uqvol/bayes.hpp"
#include "uqvol/inference.hpp"
#include "uqvol/layers.hpp"
#include "uqvol/model.hpp"
#include "uqvol/rng.hpp"

using namespace uqvol;

namespace {

Tensor random_tensor(std::vector<i64> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (i64 i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

void BM_Conv3dForward(benchmark::State& state) {
  const i64 c = state.range(0);
  Rng rng(1);
  const Tensor x = random_tensor({1, 32, 32, 32, c}, rng);
  const Tensor k = random_tensor({3, 3, 3, c, c}, rng);
  const std::vector<double> bias(static_cast<std::size_t>(c), 0.1);
  for (auto _ : state) {
    Tensor y = conv3d_forward(x, k, bias);
    benchmark::DoNotOptimize(y.data.data());
  }
  state.SetItemsProcessed(state.iterations() * 32 * 32 * 32);
}
BENCHMARK(BM_Conv3dForward)->Arg(8)->Arg(16)->Arg(32);

void BM_Conv3dBackward(benchmark::State& state) {
  const i64 c = state.range(0);
  Rng rng(2);
  const Tensor x = random_tensor({1, 16, 16, 16, c}, rng);
  const Tensor k = random_tensor({3, 3, 3, c, c}, rng);
  const Tensor up = random_tensor({1, 16, 16, 16, c}, rng);
  for (auto _ : state) {
    LayerGrads g = conv3d_backward(x, k, up);
    benchmark::DoNotOptimize(g.input_grad.data.data());
  }
}
BENCHMARK(BM_Conv3dBackward)->Arg(8)->Arg(16);

void BM_BayesConvForward(benchmark::State& state) {
  Rng rng(3);
  const Tensor x = random_tensor({2, 16, 16, 16, 8}, rng);
  PosteriorParams p;
  p.mean = random_tensor({3, 3, 3, 8, 8}, rng);
  p.rho = Tensor::full({3, 3, 3, 8, 8}, softplus_inverse(0.1));
  p.bias_mean.assign(8, 0.0);
  Rng draw(4);
  for (auto _ : state) {
    BayesConvResult r = bayes_conv3d(x, p, draw);
    benchmark::DoNotOptimize(r.y.data.data());
  }
}
BENCHMARK(BM_BayesConvForward);

void BM_ModelForward(benchmark::State& state) {
  ArchConfig cfg;
  cfg.base_filter_exponent = static_cast<int>(state.range(0));
  Rng rng(5);
  const ModelState m = build(cfg, rng);
  const Tensor x = random_tensor({1, 32, 32, 32, 1}, rng);
  Rng frng(6);
  for (auto _ : state) {
    ForwardResult r = forward(m, x, frng, true);
    benchmark::DoNotOptimize(r.sigmoid.data.data());
  }
}
BENCHMARK(BM_ModelForward)->Arg(1)->Arg(3)->Unit(benchmark::kMillisecond);

void BM_PredictStitch(benchmark::State& state) {
  Rng rng(7);
  Volume vol(16, 16, 16, 1);
  for (auto& v : vol.data) v = rng.uniform();
  BatchSampler identity = [](const Tensor& b, Rng&) { return b; };
  InferenceConfig cfg;
  cfg.chunk_size = {8, 8, 8};
  cfg.step = 2;
  cfg.mc_samples = 8;
  cfg.batch_size = 4;
  for (auto _ : state) {
    Rng prng(8);
    UncertaintyBundle b = predict(identity, vol, cfg, prng);
    benchmark::DoNotOptimize(b.sigmoid.data.data());
  }
  state.SetLabel("identity stub, 27 chunks");
}
BENCHMARK(BM_PredictStitch)->Unit(benchmark::kMillisecond);

void BM_Percentile(benchmark::State& state) {
  Rng rng(9);
  std::vector<double> samples(48);
  for (auto& s : samples) s = rng.uniform();
  for (auto _ : state) {
    const double v = percentile(samples, 33.0);
    benchmark::DoNotOptimize(v);
  }
}
BENCHMARK(BM_Percentile);

}  // namespace

BENCHMARK_MAIN();
