#include <benchmark/benchmark.h>

#include <numbers>
#include <random>

#include "confoundnet/kernels.hpp"
#include "confoundnet/network.hpp"
#include "confoundnet/pose.hpp"

namespace {

using namespace confoundnet;

void fill(Tensor& t, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (double& v : t.data()) v = n(rng);
}

// Desk-scale layer shapes: batch 100, 5x5 kernels, same padding.
void BM_Conv2dForward(benchmark::State& state) {
  const auto channels = static_cast<std::size_t>(state.range(0));
  const auto filters = static_cast<std::size_t>(state.range(1));
  const auto size = static_cast<std::size_t>(state.range(2));
  std::mt19937_64 rng(1);
  Tensor in(Shape{100, channels, size, size});
  fill(in, rng);
  LayerParams p(Shape{filters, channels, 5, 5}, filters);
  fill(p.weights, rng);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_forward(in, p, 1, 2));
}
BENCHMARK(BM_Conv2dForward)->Args({1, 16, 32})->Args({16, 32, 16})->Args({32, 64, 8})->Unit(benchmark::kMillisecond);

void BM_Conv2dBackward(benchmark::State& state) {
  const auto channels = static_cast<std::size_t>(state.range(0));
  const auto filters = static_cast<std::size_t>(state.range(1));
  const auto size = static_cast<std::size_t>(state.range(2));
  std::mt19937_64 rng(2);
  Tensor in(Shape{100, channels, size, size});
  fill(in, rng);
  LayerParams p(Shape{filters, channels, 5, 5}, filters);
  fill(p.weights, rng);
  Tensor out = conv2d_forward(in, p, 1, 2);
  std::normal_distribution<double> n(0.0, 1.0);
  for (double& g : out.grad()) g = n(rng);
  for (auto _ : state) {
    in.zero_grad();
    p.weights.zero_grad();
    p.bias.zero_grad();
    conv2d_backward(in, p, 1, 2, out);
  }
}
BENCHMARK(BM_Conv2dBackward)->Args({1, 16, 32})->Args({16, 32, 16})->Args({32, 64, 8})->Unit(benchmark::kMillisecond);

void BM_SoftmaxLogloss(benchmark::State& state) {
  std::mt19937_64 rng(3);
  Tensor logits(Shape{100, 10});
  fill(logits, rng);
  std::vector<int> labels(100);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 10);
  for (auto _ : state) benchmark::DoNotOptimize(softmax_logloss(logits, labels));
}
BENCHMARK(BM_SoftmaxLogloss);

void BM_PoseLoss(benchmark::State& state) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> raw(200);
  for (double& v : raw) v = n(rng);
  std::vector<Quaternion> truth;
  for (int i = 0; i < 100; ++i) truth.push_back(quat_from_azimuth(Azimuth(angle(rng))));
  for (auto _ : state) benchmark::DoNotOptimize(pose_loss(raw, 2, truth));
}
BENCHMARK(BM_PoseLoss);

// One training step's forward and backward on the default architecture.
void BM_NetworkStep(benchmark::State& state) {
  NetworkConfig cfg;
  cfg.init_std = 0.05;
  Network net = Network::build(cfg, 1);
  std::mt19937_64 rng(5);
  Tensor batch(Shape{100, 1, 32, 32});
  fill(batch, rng);
  std::vector<int> labels(100);
  std::vector<Quaternion> truth;
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  for (std::size_t i = 0; i < 100; ++i) {
    labels[i] = static_cast<int>(i % cfg.classes);
    truth.push_back(quat_from_azimuth(Azimuth(angle(rng))));
  }
  for (auto _ : state) {
    ForwardCache cache = net.forward(batch);
    const CombinedLoss loss = combined_loss(cache.logits, &*cache.pose_raw, labels, truth, 1.0);
    net.zero_grad();
    net.backward(cache, loss.grads);
  }
}
BENCHMARK(BM_NetworkStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
