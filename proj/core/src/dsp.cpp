#include "tempofuse/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "fft.hpp"
#include "tempofuse/error.hpp"

namespace tempofuse::dsp {

namespace {

constexpr double kLogCompression = 1000.0;
constexpr double kLocalMeanSeconds = 0.37;

/// Index into a signal of length n after symmetric (reflect, edge excluded)
/// padding; folds repeatedly so any offset is valid.
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<std::ptrdiff_t>(n)) m = period - m;
  return static_cast<std::size_t>(m);
}

/// Row-wise sparse view of a filterbank: each row's nonzero bin range.
struct SparseFilterbank {
  Matrix weights;
  std::vector<std::pair<std::size_t, std::size_t>> ranges;  // [first, last)
};

SparseFilterbank sparse_filterbank(int n_mels, int n_bins, int sample_rate) {
  SparseFilterbank fb{mel_filterbank(n_mels, n_bins, sample_rate), {}};
  for (std::size_t m = 0; m < fb.weights.rows(); ++m) {
    const auto row = fb.weights.row(m);
    std::size_t first = row.size();
    std::size_t last = 0;
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (row[k] > 0.0f) {
        first = std::min(first, k);
        last = k + 1;
      }
    }
    if (first >= last) first = last = 0;
    fb.ranges.emplace_back(first, last);
  }
  return fb;
}

/// Runs the centered, Hamming-windowed framing of `clip` and hands every
/// frame's spectrum to `sink(frame_index, spectrum)`.
template <typename Sink>
void for_each_frame(const AudioClip& clip, const StftConfig& cfg, Sink&& sink) {
  cfg.validate();
  require(!clip.samples.empty(), ErrorCode::empty_input, "stft: empty clip");
  const auto n = clip.samples.size();
  const auto win_len = static_cast<std::size_t>(cfg.window_len);
  const auto window = hamming_window(win_len);
  const std::size_t frames = frame_count(n, cfg.hop);
  const auto pad = static_cast<std::ptrdiff_t>(win_len / 2);

  detail::RealFft fft(win_len);
  auto in = fft.input();
  for (std::size_t f = 0; f < frames; ++f) {
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(f) * cfg.hop - pad;
    for (std::size_t i = 0; i < win_len; ++i) {
      const std::ptrdiff_t idx = start + static_cast<std::ptrdiff_t>(i);
      const double s = (idx >= 0 && idx < static_cast<std::ptrdiff_t>(n))
                           ? clip.samples[static_cast<std::size_t>(idx)]
                           : clip.samples[reflect_index(idx, n)];
      in[i] = s * window[i];
    }
    fft.execute();
    sink(f, fft.output());
  }
}

void require_novelty(const NoveltyCurve& novelty, int tempo_window, bool even) {
  require(tempo_window >= 2, ErrorCode::invalid_argument, "tempo_window must be >= 2");
  if (even) {
    require(tempo_window % 2 == 0, ErrorCode::invalid_argument, "tempo_window must be even");
  }
  require(novelty.values.size() >= 2, ErrorCode::empty_input,
          "novelty curve shorter than 2 frames");
}

}  // namespace

void StftConfig::validate() const {
  require(window_len > 0 && hop > 0 && hop <= window_len, ErrorCode::invalid_argument,
          "STFT config requires 0 < hop <= window_len (got window_len=" +
              std::to_string(window_len) + ", hop=" + std::to_string(hop) + ")");
}

std::vector<double> hamming_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                  static_cast<double>(n));
  }
  return w;
}

std::size_t frame_count(std::size_t n_samples, int hop) {
  return 1 + n_samples / static_cast<std::size_t>(hop);
}

ComplexSpectrogram stft(const AudioClip& clip, const StftConfig& cfg) {
  ComplexSpectrogram out;
  out.bins = static_cast<std::size_t>(cfg.n_bins());
  out.frames = frame_count(clip.samples.size(), cfg.hop);
  out.values.resize(out.bins * out.frames);
  for_each_frame(clip, cfg, [&](std::size_t f, std::span<const std::complex<double>> spec) {
    for (std::size_t k = 0; k < out.bins; ++k) {
      out.values[k * out.frames + f] = std::complex<float>(spec[k]);
    }
  });
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {
/// n_mels + 2 band edges equally spaced in Mel between 0 Hz and Nyquist.
std::vector<double> mel_band_edges(int n_mels, int sample_rate) {
  const double top = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  return edges;
}
}  // namespace

std::vector<double> mel_center_frequencies(int n_mels, int sample_rate) {
  const auto edges = mel_band_edges(n_mels, sample_rate);
  return {edges.begin() + 1, edges.end() - 1};
}

Matrix mel_filterbank(int n_mels, int n_fft_bins, int sample_rate) {
  require(n_mels >= 1, ErrorCode::invalid_argument, "n_mels must be >= 1");
  require(n_fft_bins >= 2, ErrorCode::invalid_argument, "n_fft_bins must be >= 2");
  require(sample_rate > 0, ErrorCode::invalid_argument, "sample_rate must be positive");
  const auto edges = mel_band_edges(n_mels, sample_rate);
  const double bin_hz = sample_rate / (2.0 * (n_fft_bins - 1));

  Matrix fb(static_cast<std::size_t>(n_mels), static_cast<std::size_t>(n_fft_bins));
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[m];
    const double mid = edges[m + 1];
    const double hi = edges[m + 2];
    const double area_norm = 2.0 / (hi - lo);
    for (int k = 0; k < n_fft_bins; ++k) {
      const double f = k * bin_hz;
      const double rising = (f - lo) / (mid - lo);
      const double falling = (hi - f) / (hi - mid);
      const double w = std::max(0.0, std::min(rising, falling));
      fb(m, k) = static_cast<float>(w * area_norm);
    }
  }
  return fb;
}

MelSpectrogram mel_spectrogram(const AudioClip& clip, const StftConfig& cfg, int n_mels) {
  cfg.validate();
  require(!clip.samples.empty(), ErrorCode::empty_input, "mel_spectrogram: empty clip");
  const auto fb = sparse_filterbank(n_mels, cfg.n_bins(), clip.sample_rate);
  const std::size_t frames = frame_count(clip.samples.size(), cfg.hop);

  MelSpectrogram out{Matrix(static_cast<std::size_t>(n_mels), frames),
                     static_cast<double>(clip.sample_rate) / cfg.hop};
  std::vector<double> power(static_cast<std::size_t>(cfg.n_bins()));
  for_each_frame(clip, cfg, [&](std::size_t f, std::span<const std::complex<double>> spec) {
    for (std::size_t k = 0; k < power.size(); ++k) power[k] = std::norm(spec[k]);
    for (std::size_t m = 0; m < fb.ranges.size(); ++m) {
      const auto [first, last] = fb.ranges[m];
      const auto w = fb.weights.row(m);
      double acc = 0.0;
      for (std::size_t k = first; k < last; ++k) acc += w[k] * power[k];
      out.values(m, f) = static_cast<float>(acc);
    }
  });
  return out;
}

NoveltyCurve novelty_curve(const MelSpectrogram& mel) {
  const std::size_t bands = mel.values.rows();
  const std::size_t frames = mel.values.cols();
  NoveltyCurve out{std::vector<float>(frames, 0.0f), mel.frame_rate};
  if (frames == 0 || bands == 0) return out;

  std::vector<double> flux(frames, 0.0);
  for (std::size_t b = 0; b < bands; ++b) {
    const auto row = mel.values.row(b);
    double prev = std::log1p(kLogCompression * row[0]);
    for (std::size_t t = 1; t < frames; ++t) {
      const double cur = std::log1p(kLogCompression * row[t]);
      flux[t] += std::max(0.0, cur - prev);
      prev = cur;
    }
  }
  for (auto& v : flux) v /= static_cast<double>(bands);

  const auto half = static_cast<std::ptrdiff_t>(
      std::lround(kLocalMeanSeconds * std::max(mel.frame_rate, 0.0) / 2.0));
  // Prefix sums give the truncated centered mean in O(1) per frame.
  std::vector<double> prefix(frames + 1, 0.0);
  for (std::size_t t = 0; t < frames; ++t) prefix[t + 1] = prefix[t] + flux[t];
  const auto n = static_cast<std::ptrdiff_t>(frames);
  for (std::ptrdiff_t t = 1; t < n; ++t) {
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, t - half);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n, t + half + 1);
    const double mean = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
    out.values[static_cast<std::size_t>(t)] =
        static_cast<float>(std::max(0.0, flux[static_cast<std::size_t>(t)] - mean));
  }
  return out;
}

Tempogram fourier_tempogram(const NoveltyCurve& novelty, int tempo_window) {
  require_novelty(novelty, tempo_window, true);
  const auto w = static_cast<std::size_t>(tempo_window);
  const std::size_t n = novelty.values.size();
  const std::size_t bins = w / 2 + 1;
  const std::size_t frames = n + 1;  // centered framing with hop 1
  const auto window = hamming_window(w);
  const auto pad = static_cast<std::ptrdiff_t>(w / 2);

  Tempogram tg;
  tg.kind = TempogramKind::fourier;
  tg.tempo_window = tempo_window;
  tg.frame_rate = novelty.frame_rate;
  tg.values = Matrix(bins, frames);
  tg.bpm.resize(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    tg.bpm[k] = 60.0 * static_cast<double>(k) * novelty.frame_rate / static_cast<double>(w);
  }

  detail::RealFft fft(w);
  auto in = fft.input();
  for (std::size_t f = 0; f < frames; ++f) {
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(f) - pad;
    for (std::size_t i = 0; i < w; ++i) {
      const std::ptrdiff_t idx = start + static_cast<std::ptrdiff_t>(i);
      const double v = (idx >= 0 && idx < static_cast<std::ptrdiff_t>(n))
                           ? novelty.values[static_cast<std::size_t>(idx)]
                           : 0.0;
      in[i] = v * window[i];
    }
    fft.execute();
    const auto spec = fft.output();
    for (std::size_t k = 0; k < bins; ++k) tg.values(k, f) = static_cast<float>(std::abs(spec[k]));
  }
  return tg;
}

Tempogram autocorrelation_tempogram(const NoveltyCurve& novelty, int tempo_window) {
  require_novelty(novelty, tempo_window, false);
  const auto w = static_cast<std::size_t>(tempo_window);
  const std::size_t n = novelty.values.size();
  const auto window = hamming_window(w);
  const auto pad = static_cast<std::ptrdiff_t>(w / 2);
  const std::size_t n_fft = 2 * w;  // >= 2w - 1, so no circular wrap

  Tempogram tg;
  tg.kind = TempogramKind::autocorrelation;
  tg.tempo_window = tempo_window;
  tg.frame_rate = novelty.frame_rate;
  tg.values = Matrix(w, n);
  tg.bpm.resize(w);
  tg.bpm[0] = std::numeric_limits<double>::infinity();
  for (std::size_t lag = 1; lag < w; ++lag) {
    tg.bpm[lag] = 60.0 * novelty.frame_rate / static_cast<double>(lag);
  }

  detail::RealFft fwd(n_fft);
  detail::InverseRealFft inv(n_fft);
  auto in = fwd.input();
  std::fill(in.begin(), in.end(), 0.0);
  for (std::size_t f = 0; f < n; ++f) {
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(f) - pad;
    bool any = false;
    for (std::size_t i = 0; i < w; ++i) {
      const std::ptrdiff_t idx = start + static_cast<std::ptrdiff_t>(i);
      const double v = (idx >= 0 && idx < static_cast<std::ptrdiff_t>(n))
                           ? novelty.values[static_cast<std::size_t>(idx)]
                           : 0.0;
      in[i] = v * window[i];
      any = any || v != 0.0;
    }
    if (!any) continue;  // column stays zero
    fwd.execute();
    const auto spec = fwd.output();
    auto pin = inv.input();
    for (std::size_t k = 0; k < pin.size(); ++k) pin[k] = std::norm(spec[k]);
    inv.execute();
    const auto ac = inv.output();
    const double lag0 = ac[0];
    const double scale = lag0 > 0.0 ? 1.0 / lag0 : 1.0;
    for (std::size_t lag = 0; lag < w; ++lag) {
      tg.values(lag, f) = static_cast<float>(std::max(0.0, ac[lag] * scale));
    }
  }
  return tg;
}

double estimate_global_tempo(const Tempogram& tempogram, double bpm_min, double bpm_max) {
  require(tempogram.kind == TempogramKind::fourier, ErrorCode::invalid_argument,
          "global tempo needs a Fourier tempogram");
  require(bpm_min < bpm_max, ErrorCode::invalid_argument, "bpm_min must be < bpm_max");
  const auto& m = tempogram.values;
  std::size_t best = m.rows();
  double best_value = 0.0;
  for (std::size_t k = 0; k < m.rows(); ++k) {
    const double bpm = tempogram.bpm[k];
    if (bpm < bpm_min || bpm > bpm_max) continue;
    double sum = 0.0;
    for (float v : m.row(k)) sum += v;
    const double mean = m.cols() > 0 ? sum / static_cast<double>(m.cols()) : 0.0;
    if (best == m.rows() || mean > best_value) {
      best = k;
      best_value = mean;
    }
  }
  require(best < m.rows(), ErrorCode::invalid_argument,
          "no tempogram bins within [" + std::to_string(bpm_min) + ", " +
              std::to_string(bpm_max) + "] BPM");
  require(best_value > 0.0, ErrorCode::numeric, "no tempo: tempogram is silent in range");
  return tempogram.bpm[best];
}

double estimate_global_tempo(const AudioClip& clip, double bpm_min, double bpm_max) {
  return estimate_global_tempo(fourier_tempogram(novelty_curve(mel_spectrogram(clip))), bpm_min,
                               bpm_max);
}

}  // namespace tempofuse::dsp
