#include <benchmark/benchmark.h>

#include "tempofuse/models/model.hpp"
#include "tempofuse/nn/adam.hpp"
#include "tempofuse/nn/ops.hpp"
#include "tempofuse/rng.hpp"

using namespace tempofuse;

namespace {

nn::Tensor<float> randn(nn::Shape shape, Rng& rng, bool grad = false) {
  std::vector<float> v(nn::numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return nn::Tensor<float>::from(std::move(shape), std::move(v), grad);
}

// 3x3 same-padding convolution on a batch of Mel-sized maps; arg = channels
void BM_conv2d_forward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  auto x = randn({8, c, 128, 200}, rng);
  auto w = randn({c, c, 3, 3}, rng);
  auto b = randn({c}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv2d(x, w, b, {1, 1, 1, 1}));
}
BENCHMARK(BM_conv2d_forward)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_conv2d_backward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  auto x = randn({8, c, 128, 200}, rng, true);
  auto w = randn({c, c, 3, 3}, rng, true);
  auto b = randn({c}, rng, true);
  for (auto _ : state) {
    auto y = nn::sum(nn::conv2d(x, w, b, {1, 1, 1, 1}));
    nn::backward(y);
    benchmark::DoNotOptimize(w.grad().data());
  }
}
BENCHMARK(BM_conv2d_backward)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

models::ModelInput<float> batch(const models::ModelConfig& cfg, std::size_t n, Rng& rng) {
  models::ModelInput<float> in;
  if (models::uses_mel(cfg.kind)) in.mel = randn({n, 1, cfg.backbone.mel_bands, cfg.frames}, rng);
  if (models::uses_fourier(cfg.kind)) in.fourier = randn({n, cfg.tempo.fourier_bins, cfg.frames}, rng);
  if (models::uses_autocorr(cfg.kind)) in.autocorr = randn({n, cfg.tempo.autocorr_bins, cfg.frames}, rng);
  return in;
}

// forward, backward and an Adam update on 32 chunks of a reduced late-fusion model
void BM_train_step(benchmark::State& state) {
  models::ModelConfig cfg;
  cfg.kind = static_cast<models::ModelKind>(state.range(0));
  cfg.backbone.channels = {8, 8};
  cfg.tempo.channels = 16;
  cfg.tempo.embed_channels = 16;
  cfg.classifier.hidden = 32;
  cfg.classifier.n_classes = 5;
  models::Model<float> model(cfg, 3);
  std::vector<nn::Tensor<float>*> params;
  for (auto& p : model.parameters()) params.push_back(p.tensor);
  nn::Adam<float> adam(params, {});
  Rng rng(4);
  const auto in = batch(cfg, 32, rng);
  std::vector<std::size_t> labels(32);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 5;
  for (auto _ : state) {
    adam.zero_grad();
    auto loss = nn::cross_entropy(model.forward(in, {true, true, &rng}),
                                  std::span<const std::size_t>(labels));
    nn::backward(loss);
    adam.step();
  }
}
BENCHMARK(BM_train_step)
    ->Arg(static_cast<int>(models::ModelKind::ftg_only))
    ->Arg(static_cast<int>(models::ModelKind::late_fusion))
    ->Unit(benchmark::kMillisecond);

}  // namespace
