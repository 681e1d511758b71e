#include <benchmark/benchmark.h>

#include "tempofuse/data.hpp"
#include "tempofuse/dsp.hpp"
#include "tempofuse/features.hpp"

using namespace tempofuse;

namespace {

const AudioClip& clip30() {
  static const AudioClip clip = data::synth_click_track(
      {"bpm120", 120.0, data::Timbre::click, 0.1}, 30.0, kCanonicalRate, 1);
  return clip;
}

const dsp::NoveltyCurve& novelty30() {
  static const dsp::NoveltyCurve n = dsp::novelty_curve(dsp::mel_spectrogram(clip30()));
  return n;
}

void BM_stft(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(dsp::stft(clip30()));
}
BENCHMARK(BM_stft)->Unit(benchmark::kMillisecond);

void BM_mel_spectrogram(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(dsp::mel_spectrogram(clip30()));
}
BENCHMARK(BM_mel_spectrogram)->Unit(benchmark::kMillisecond);

void BM_fourier_tempogram(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(dsp::fourier_tempogram(novelty30()));
}
BENCHMARK(BM_fourier_tempogram)->Unit(benchmark::kMillisecond);

void BM_autocorrelation_tempogram(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(dsp::autocorrelation_tempogram(novelty30()));
}
BENCHMARK(BM_autocorrelation_tempogram)->Unit(benchmark::kMillisecond);

void BM_extract_features(benchmark::State& state) {
  features::FeatureConfig cfg;
  cfg.mel_segment = features::Segment::parse("full");
  cfg.tempo_segment = cfg.mel_segment;
  for (auto _ : state) benchmark::DoNotOptimize(features::extract_features(clip30(), cfg, "s", 0));
}
BENCHMARK(BM_extract_features)->Unit(benchmark::kMillisecond);

}  // namespace
