#include <benchmark/benchmark.h>

#include <vector>

#include "fundus/architecture.hpp"
#include "fundus/gradcam.hpp"
#include "fundus/kernels.hpp"
#include "fundus/model.hpp"
#include "fundus/rng.hpp"
#include "fundus/synthetic.hpp"
#include "fundus/transforms.hpp"
#include "fundus/training.hpp"

using namespace fundus;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (auto& v : t.values()) v = rng.uniform() * 2.0 - 1.0;
  return t;
}

// state.range(0) is the spatial size, channels fixed at 16 -> 16
void conv_forward(benchmark::State& state) {
  Rng rng(1);
  const auto hw = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({4, 16, hw, hw}, rng);
  const Tensor w = random_tensor({16, 16, 3, 3}, rng);
  const Tensor b = random_tensor({16}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv2d_forward(x, w, b, 1, nn::Padding::same));
  state.SetItemsProcessed(state.iterations() * 4);
}
BENCHMARK(conv_forward)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);

void conv_backward(benchmark::State& state) {
  Rng rng(2);
  const auto hw = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({4, 16, hw, hw}, rng);
  const Tensor w = random_tensor({16, 16, 3, 3}, rng);
  const Tensor up = random_tensor({4, 16, hw, hw}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv2d_backward(x, w, 1, nn::Padding::same, up));
}
BENCHMARK(conv_backward)->Arg(16)->Arg(32)->Unit(benchmark::kMicrosecond);

std::vector<data::Sample> blob_samples(std::size_t n) {
  std::vector<data::Sample> out;
  for (auto& s : data::make_blob_corpus(n, 5)) out.push_back({s.image, s.label, ""});
  return out;
}

void cnn6_tiny_inference(benchmark::State& state) {
  const auto model = models::Model::initialize(models::preset("cnn6-tiny"), 42);
  const auto samples = blob_samples(16);
  for (auto _ : state) benchmark::DoNotOptimize(train::predict(model, samples));
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(cnn6_tiny_inference)->Unit(benchmark::kMillisecond);

// one epoch over 16 images, i.e. a single batch step plus bookkeeping
void cnn6_tiny_epoch(benchmark::State& state) {
  const auto samples = blob_samples(16);
  train::TrainConfig cfg;
  cfg.epochs = 1;
  for (auto _ : state) {
    state.PauseTiming();
    auto model = models::Model::initialize(models::preset("cnn6-tiny"), 42);
    state.ResumeTiming();
    benchmark::DoNotOptimize(train::train(model, samples, cfg, {}));
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(cnn6_tiny_epoch)->Unit(benchmark::kMillisecond);

void gradcam_single_image(benchmark::State& state) {
  const auto model = models::Model::initialize(models::preset("cnn6-tiny"), 42);
  const Tensor image = data::to_tensor(data::make_blob_corpus(1, 6)[0].image);
  for (auto _ : state) benchmark::DoNotOptimize(cam::gradcam_for_image(model, image));
}
BENCHMARK(gradcam_single_image)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
