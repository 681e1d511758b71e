#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "support.hpp"
#include "tempofuse/dsp.hpp"
#include "tempofuse/error.hpp"

using namespace tempofuse;
using namespace tempofuse::dsp;

namespace {

constexpr double kFrameRate = 22050.0 / 512.0;
constexpr double kBinWidth = 60.0 * kFrameRate / 384.0;

bool all_finite(const Matrix& m) {
  return std::all_of(m.data().begin(), m.data().end(), [](float v) { return std::isfinite(v); });
}

std::vector<std::size_t> local_peaks(const std::vector<float>& v, float rel) {
  const float top = *std::max_element(v.begin(), v.end());
  std::vector<std::size_t> peaks;
  for (std::size_t i = 1; i + 1 < v.size(); ++i) {
    if (v[i] > rel * top && v[i] >= v[i - 1] && v[i] > v[i + 1]) peaks.push_back(i);
  }
  return peaks;
}

}  // namespace

TEST_CASE("stft of silence is zero") {
  const auto s = stft(test_support::zeros(1.0));
  CHECK(s.bins == 1025);
  CHECK(std::all_of(s.values.begin(), s.values.end(),
                    [](std::complex<float> c) { return c == std::complex<float>{}; }));
}

TEST_CASE("frame counts under centered framing") {
  // 1 + floor(661500 / 512); the reported 1293 is met within one frame
  CHECK(frame_count(661500, 512) == 1292);
  CHECK(std::abs(static_cast<long>(stft(test_support::zeros(30.0)).frames) - 1293) <= 1);
  CHECK(frame_count(120 * 22050, 512) == 5168);
}

TEST_CASE("1 kHz sine peaks at bin 93") {
  const auto s = stft(test_support::sine(1000, 1.0, 22050));
  const auto expected = static_cast<std::size_t>(std::lround(1000.0 * 2048 / 22050));
  CHECK(expected == 93);
  for (std::size_t f = 5; f + 5 < s.frames; ++f) {
    std::size_t best = 0;
    for (std::size_t b = 1; b < s.bins; ++b) {
      if (std::abs(s.at(b, f)) > std::abs(s.at(best, f))) best = b;
    }
    REQUIRE(best == expected);
  }
}

TEST_CASE("stft magnitude scales linearly, Mel power quadratically") {
  auto a = test_support::click_track(120, 3.0);
  auto b = a;
  for (auto& x : b.samples) x *= 0.25f;
  const auto sa = stft(a), sb = stft(b);
  for (std::size_t i = 0; i < sa.values.size(); i += 97) {
    CHECK(std::abs(sb.values[i]) == doctest::Approx(0.25 * std::abs(sa.values[i])).epsilon(1e-4).scale(1e-3));
  }
  const auto ma = mel_spectrogram(a), mb = mel_spectrogram(b);
  for (std::size_t i = 0; i < ma.values.size(); i += 31) {
    CHECK(mb.values.data()[i] ==
          doctest::Approx(0.0625 * ma.values.data()[i]).epsilon(1e-3).scale(1e-6));
  }
}

TEST_CASE("mel filterbank shape, ordering and coverage") {
  const auto fb = mel_filterbank(128, 1025, 22050);
  CHECK(fb.rows() == 128);
  CHECK(fb.cols() == 1025);
  const auto centers = mel_center_frequencies(128, 22050);
  REQUIRE(centers.size() == 128);
  for (std::size_t i = 1; i < centers.size(); ++i) CHECK(centers[i] > centers[i - 1]);
  const double bin_hz = 22050.0 / 2048;
  const auto first = static_cast<std::size_t>(std::ceil(centers.front() / bin_hz));
  const auto last = static_cast<std::size_t>(std::floor(centers.back() / bin_hz));
  for (std::size_t b = first; b <= last; ++b) {
    double sum = 0;
    for (std::size_t m = 0; m < 128; ++m) sum += fb(m, b);
    REQUIRE(sum > 0.0);
  }
  CHECK(hz_to_mel(mel_to_hz(1234.5)) == doctest::Approx(1234.5));
  CHECK(hz_to_mel(700.0) == doctest::Approx(2595.0 * std::log10(2.0)));
}

TEST_CASE("mel spectrogram shapes and values") {
  const auto silent = mel_spectrogram(test_support::zeros(2.0));
  CHECK(std::all_of(silent.values.data().begin(), silent.values.data().end(),
                    [](float v) { return v == 0.0f; }));

  // 120 s preview: 5168 frames
  CHECK(mel_spectrogram(test_support::zeros(120.0)).values.cols() == 5168);

  AudioClip noise = test_support::zeros(3.0);
  std::mt19937 gen(7);
  std::normal_distribution<float> nd(0.0f, 0.1f);
  for (auto& x : noise.samples) x = nd(gen);
  const auto m = mel_spectrogram(noise);
  CHECK(m.values.rows() == 128);
  CHECK(m.frame_rate == doctest::Approx(kFrameRate));
  for (std::size_t r = 0; r < m.values.rows(); ++r) {
    for (std::size_t c = 2; c + 2 < m.values.cols(); ++c) REQUIRE(m.values(r, c) > 0.0f);
  }
}

TEST_CASE("novelty of a constant spectrogram is zero") {
  MelSpectrogram mel{Matrix(128, 100, 3.0f), kFrameRate};
  const auto nov = novelty_curve(mel);
  CHECK(nov.values.size() == 100);
  CHECK(std::all_of(nov.values.begin(), nov.values.end(), [](float v) { return v == 0.0f; }));
}

TEST_CASE("a single loud frame produces the novelty peak at that frame") {
  MelSpectrogram mel{Matrix(128, 100, 0.0f), kFrameRate};
  for (std::size_t r = 0; r < 128; ++r) mel.values(r, 40) = 5.0f;
  const auto nov = novelty_curve(mel);
  const auto peak = std::max_element(nov.values.begin(), nov.values.end()) - nov.values.begin();
  CHECK(peak == 40);
}

TEST_CASE("120 BPM clicks give novelty peaks about 21.5 frames apart") {
  const auto nov = novelty_curve(mel_spectrogram(test_support::click_track(120, 10.0, 22050, 0.25)));
  const auto peaks = local_peaks(nov.values, 0.5f);
  REQUIRE(peaks.size() >= 15);
  const double mean_gap =
      static_cast<double>(peaks.back() - peaks.front()) / static_cast<double>(peaks.size() - 1);
  CHECK(mean_gap == doctest::Approx(0.5 * kFrameRate).epsilon(0.02));
  for (std::size_t i = 1; i < peaks.size(); ++i) {
    CHECK(std::abs(static_cast<double>(peaks[i] - peaks[i - 1]) - 21.53) <= 1.0);
  }
}

TEST_CASE("delaying clicks by whole hops shifts novelty peaks by whole frames") {
  const auto a = test_support::click_track(110, 12.0, 22050, 0.3);
  AudioClip b = a;
  const std::size_t k = 7;
  b.samples.insert(b.samples.begin(), k * 512, 0.0f);
  b.samples.resize(a.samples.size());
  const auto na = novelty_curve(mel_spectrogram(a));
  const auto nb = novelty_curve(mel_spectrogram(b));
  const auto pa = local_peaks(na.values, 0.5f), pb = local_peaks(nb.values, 0.5f);
  REQUIRE(pa.size() > 5);
  REQUIRE(pb.size() > 5);
  // compare peaks in the middle, away from the boundaries
  for (std::size_t i = 2; i + 2 < std::min(pa.size(), pb.size()); ++i) {
    const auto it = std::find(pb.begin(), pb.end(), pa[i] + k);
    CHECK(it != pb.end());
  }
  CHECK(std::abs(estimate_global_tempo(a) - estimate_global_tempo(b)) <= kBinWidth + 1e-9);
}

TEST_CASE("tempogram shapes on a 30 s segment") {
  const auto nov = novelty_curve(mel_spectrogram(test_support::click_track(128, 30.0)));
  CHECK(nov.values.size() == 1292);
  const auto ft = fourier_tempogram(nov);
  const auto ac = autocorrelation_tempogram(nov);
  CHECK(ft.values.rows() == 193);
  CHECK(std::abs(static_cast<long>(ft.values.cols()) - 1293) <= 1);
  CHECK(ac.values.rows() == 384);
  CHECK(std::abs(static_cast<long>(ac.values.cols()) - 1292) <= 1);
  CHECK(ft.bpm[1] == doctest::Approx(kBinWidth));
  CHECK(kBinWidth == doctest::Approx(6.73).epsilon(1e-3));
}

TEST_CASE("bin counts follow the tempo window") {
  NoveltyCurve nov{std::vector<float>(300, 0.0f), kFrameRate};
  nov.values[100] = 1.0f;
  for (int w : {16, 64, 100, 256, 384}) {
    CHECK(fourier_tempogram(nov, w).values.rows() == static_cast<std::size_t>(w / 2 + 1));
    CHECK(autocorrelation_tempogram(nov, w).values.rows() == static_cast<std::size_t>(w));
  }
}

TEST_CASE("zero novelty gives zero tempograms") {
  NoveltyCurve nov{std::vector<float>(500, 0.0f), kFrameRate};
  const auto ft = fourier_tempogram(nov);
  const auto ac = autocorrelation_tempogram(nov);
  for (const auto* m : {&ft.values, &ac.values}) {
    CHECK(std::all_of(m->data().begin(), m->data().end(), [](float v) { return v == 0.0f; }));
  }
  CHECK_THROWS_AS(estimate_global_tempo(ft), Error);
}

TEST_CASE("120 BPM Fourier tempogram frames peak within one bin of 120") {
  const auto tg = fourier_tempogram(novelty_curve(mel_spectrogram(test_support::click_track(120, 30.0))));
  std::size_t hits = 0, frames = 0;
  for (std::size_t t = 200; t + 200 < tg.values.cols(); ++t) {
    std::size_t best = 0;
    float best_v = -1;
    for (std::size_t b = 0; b < tg.values.rows(); ++b) {
      if (tg.bpm[b] < 30 || tg.bpm[b] > 300) continue;
      if (tg.values(b, t) > best_v) best_v = tg.values(b, t), best = b;
    }
    ++frames;
    if (std::abs(tg.bpm[best] - 120) <= kBinWidth) ++hits;
  }
  CHECK(hits == frames);
}

TEST_CASE("120 BPM autocorrelation peaks near lag 21.5 and its multiple") {
  const auto tg = autocorrelation_tempogram(novelty_curve(mel_spectrogram(test_support::click_track(120, 30.0))));
  std::vector<float> avg(tg.values.rows(), 0.0f);
  for (std::size_t b = 0; b < avg.size(); ++b) {
    for (std::size_t t = 200; t + 200 < tg.values.cols(); ++t) avg[b] += tg.values(b, t);
  }
  auto best_in = [&](std::size_t lo, std::size_t hi) {
    return static_cast<double>(std::max_element(avg.begin() + lo, avg.begin() + hi) - avg.begin());
  };
  CHECK(std::abs(best_in(10, 32) - 21.53) <= 1.0);
  CHECK(std::abs(best_in(33, 54) - 43.07) <= 1.0);
  // lag 0 is the normalization reference
  for (std::size_t t = 0; t < tg.values.cols(); t += 50) CHECK(tg.values(0, t) == doctest::Approx(1.0f));
}

TEST_CASE("global tempo of click tracks") {
  for (double bpm : {120.0, 140.0}) {
    CAPTURE(bpm);
    CHECK(std::abs(estimate_global_tempo(test_support::click_track(bpm, 30.0)) - bpm) <= kBinWidth);
  }
}

TEST_CASE("dsp outputs are finite on random clips") {
  std::mt19937 gen(11);
  for (int trial = 0; trial < 5; ++trial) {
    AudioClip clip = test_support::zeros(12.0);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    const float scale = std::pow(10.0f, -static_cast<float>(trial));
    for (auto& x : clip.samples) x = scale * u(gen);
    const auto mel = mel_spectrogram(clip);
    const auto nov = novelty_curve(mel);
    CHECK(all_finite(mel.values));
    CHECK(std::all_of(nov.values.begin(), nov.values.end(), [](float v) { return std::isfinite(v); }));
    CHECK(all_finite(fourier_tempogram(nov).values));
    CHECK(all_finite(autocorrelation_tempogram(nov).values));
  }
}
