#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "tempofuse/audio_io.hpp"
#include "tempofuse/matrix.hpp"

namespace tempofuse::dsp {

/// STFT framing. The analysis window is always a periodic Hamming window.
struct StftConfig {
  int window_len = 2048;
  int hop = 512;

  void validate() const;
  int n_bins() const { return window_len / 2 + 1; }
};

inline constexpr int kMelBands = 128;
inline constexpr int kTempoWindow = 384;

/// Complex STFT, rows = frequency bins, cols = frames.
struct ComplexSpectrogram {
  std::size_t bins = 0;
  std::size_t frames = 0;
  std::vector<std::complex<float>> values;

  std::complex<float> at(std::size_t bin, std::size_t frame) const {
    return values[bin * frames + frame];
  }
};

struct MelSpectrogram {
  Matrix values;  // n_mels x n_frames, power
  double frame_rate = 0.0;
};

struct NoveltyCurve {
  std::vector<float> values;
  double frame_rate = 0.0;
};

enum class TempogramKind { fourier, autocorrelation };

struct Tempogram {
  TempogramKind kind = TempogramKind::fourier;
  Matrix values;            // n_bins x n_frames
  std::vector<double> bpm;  // tempo label per bin; lag 0 of the autocorrelation kind is +inf
  int tempo_window = kTempoWindow;
  double frame_rate = 0.0;
};

/// Periodic Hamming window of length n.
std::vector<double> hamming_window(std::size_t n);

/// Number of centered frames: 1 + floor(n_samples / hop).
std::size_t frame_count(std::size_t n_samples, int hop);

/// Centered STFT: the signal is reflect-padded by window_len/2 on both sides.
ComplexSpectrogram stft(const AudioClip& clip, const StftConfig& cfg = {});

/// HTK Mel scale conversions.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Center frequency (Hz) of every triangular filter.
std::vector<double> mel_center_frequencies(int n_mels, int sample_rate);

/// Triangular filters on the HTK Mel scale from 0 Hz to Nyquist with Slaney
/// area normalization. Shape n_mels x n_fft_bins.
Matrix mel_filterbank(int n_mels, int n_fft_bins, int sample_rate);

/// |STFT|^2 projected onto the Mel filterbank.
MelSpectrogram mel_spectrogram(const AudioClip& clip, const StftConfig& cfg = {},
                               int n_mels = kMelBands);

/// Onset strength per frame:
///   log(1 + 1000 S), positive first difference per band, band mean,
///   minus a centered ~0.37 s local mean, half-wave rectified.
NoveltyCurve novelty_curve(const MelSpectrogram& mel);

/// Magnitude STFT of the novelty curve (Hamming window of tempo_window
/// frames, hop 1, zero-padded centered framing). tempo_window/2 + 1 bins,
/// n + 1 frames; bin k is labelled 60 * k * frame_rate / tempo_window BPM.
Tempogram fourier_tempogram(const NoveltyCurve& novelty, int tempo_window = kTempoWindow);

/// Hamming-windowed local autocorrelation at lags 0..tempo_window-1, one
/// column per novelty frame, each column scaled by its lag-0 value.
Tempogram autocorrelation_tempogram(const NoveltyCurve& novelty,
                                    int tempo_window = kTempoWindow);

/// BPM label of the strongest time-averaged Fourier tempogram bin inside
/// [bpm_min, bpm_max]. Throws when no bin lies in range or the tempogram is
/// silent.
double estimate_global_tempo(const Tempogram& tempogram, double bpm_min = 60.0,
                             double bpm_max = 200.0);

/// Convenience: audio -> Mel -> novelty -> Fourier tempogram -> tempo.
double estimate_global_tempo(const AudioClip& clip, double bpm_min = 60.0,
                             double bpm_max = 200.0);

}  // namespace tempofuse::dsp
