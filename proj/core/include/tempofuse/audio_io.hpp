#pragma once

#include <filesystem>
#include <vector>

namespace tempofuse {

/// Mono PCM audio. Samples are nominally in [-1, 1].
struct AudioClip {
  std::vector<float> samples;
  int sample_rate = 0;

  double duration() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

/// Sample rate every feature in this project is computed at.
inline constexpr int kCanonicalRate = 22050;

/// Decodes a RIFF/WAVE file holding 16-bit PCM or 32-bit IEEE float data with
/// one or two channels. 16-bit values are scaled by 1/32768; stereo is mixed
/// down to the channel mean.
AudioClip load_wav(const std::filesystem::path& path);

/// Writes 16-bit PCM mono. Samples are clipped to [-1, 32767/32768].
void write_wav16(const std::filesystem::path& path, const AudioClip& clip);

/// Reads only the header and returns the duration in seconds.
double wav_duration(const std::filesystem::path& path);

/// Band-limited resampling with a Kaiser-windowed sinc kernel (beta 12,
/// 64 zero crossings). Output length is round(len * target / source).
AudioClip resample(const AudioClip& clip, int target_rate);

/// Samples [round(start*rate), +round((end-start)*rate)). Requires
/// 0 <= start < end <= duration.
AudioClip slice_segment(const AudioClip& clip, double start_s, double end_s);

/// load_wav followed by a resample to `rate` when needed.
AudioClip load_audio(const std::filesystem::path& path, int rate = kCanonicalRate);

}  // namespace tempofuse
