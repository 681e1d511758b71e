#include "tempofuse/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <bit>
#include <cstring>
#include <fstream>
#include <numbers>
#include <string>

#include "tempofuse/binary_format.hpp"
#include "tempofuse/error.hpp"

namespace tempofuse {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

struct WavFormat {
  std::uint16_t audio_format = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t bits_per_sample = 0;
};

struct ParsedWav {
  WavFormat format;
  std::span<const std::uint8_t> data;
  std::uint32_t data_size = 0;  // as declared in the header
};

std::uint16_t read_u16(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint16_t>(b[off] | (b[off + 1] << 8));
}
std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t off) {
  return std::uint32_t{b[off]} | (std::uint32_t{b[off + 1]} << 8) |
         (std::uint32_t{b[off + 2]} << 16) | (std::uint32_t{b[off + 3]} << 24);
}

ParsedWav parse_wav(std::span<const std::uint8_t> bytes, const std::string& name,
                    bool need_full_data) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0) {
    fail(ErrorCode::format, name + ": not a RIFF file (bad chunk id)");
  }
  if (std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    fail(ErrorCode::format, name + ": RIFF form type is not WAVE");
  }
  ParsedWav out;
  bool have_fmt = false;
  bool have_data = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const auto id = bytes.subspan(pos, 4);
    const std::uint32_t size = read_u32(bytes, pos + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(id.data(), "fmt ", 4) == 0) {
      if (size < 16 || body + 16 > bytes.size()) {
        fail(ErrorCode::format, name + ": fmt chunk too short");
      }
      out.format.audio_format = read_u16(bytes, body);
      out.format.channels = read_u16(bytes, body + 2);
      out.format.sample_rate = read_u32(bytes, body + 4);
      out.format.bits_per_sample = read_u16(bytes, body + 14);
      if (out.format.audio_format == kFormatExtensible) {
        if (size < 40 || body + 26 > bytes.size()) {
          fail(ErrorCode::format, name + ": extensible fmt chunk too short");
        }
        // First two bytes of the subformat GUID carry the format code.
        out.format.audio_format = read_u16(bytes, body + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(id.data(), "data", 4) == 0) {
      out.data_size = size;
      const std::size_t avail = bytes.size() - body;
      if (need_full_data && size > avail) {
        fail(ErrorCode::format, name + ": data chunk truncated (declared " +
                                    std::to_string(size) + " bytes, found " +
                                    std::to_string(avail) + ")");
      }
      out.data = bytes.subspan(body, std::min<std::size_t>(size, avail));
      have_data = true;
      break;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt) fail(ErrorCode::format, name + ": missing fmt chunk");
  if (!have_data) fail(ErrorCode::format, name + ": missing data chunk");

  const auto& f = out.format;
  if (f.channels != 1 && f.channels != 2) {
    fail(ErrorCode::format,
         name + ": unsupported channels=" + std::to_string(f.channels) + " (expected 1 or 2)");
  }
  if (f.sample_rate == 0) fail(ErrorCode::format, name + ": sample_rate=0");
  if (f.audio_format == kFormatPcm) {
    if (f.bits_per_sample != 16) {
      fail(ErrorCode::format, name + ": unsupported bits_per_sample=" +
                                  std::to_string(f.bits_per_sample) +
                                  " for PCM (expected 16)");
    }
  } else if (f.audio_format == kFormatFloat) {
    if (f.bits_per_sample != 32) {
      fail(ErrorCode::format, name + ": unsupported bits_per_sample=" +
                                  std::to_string(f.bits_per_sample) +
                                  " for IEEE float (expected 32)");
    }
  } else {
    fail(ErrorCode::format, name + ": unsupported audio_format=" +
                                std::to_string(f.audio_format) +
                                " (expected 1=PCM or 3=IEEE float)");
  }
  return out;
}

double kaiser(double x, double beta) {
  // x in [-1, 1]
  const double t = 1.0 - x * x;
  if (t <= 0.0) return 0.0;
  return std::cyl_bessel_i(0.0, beta * std::sqrt(t)) / std::cyl_bessel_i(0.0, beta);
}

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

constexpr double kBeta = 12.0;
constexpr int kZeroCrossings = 64;
constexpr int kTableDensity = 512;  // kernel samples per zero crossing

/// sinc(u) * kaiser(u / kZeroCrossings) sampled on u >= 0.
const std::vector<double>& sinc_table() {
  static const std::vector<double> table = [] {
    std::vector<double> t(kZeroCrossings * kTableDensity + 2);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double u = static_cast<double>(i) / kTableDensity;
      t[i] = sinc(u) * kaiser(std::min(1.0, u / kZeroCrossings), kBeta);
    }
    return t;
  }();
  return table;
}

}  // namespace

AudioClip load_wav(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  const auto wav = parse_wav(bytes, path.string(), true);
  const auto& f = wav.format;
  const std::size_t bytes_per_sample = f.bits_per_sample / 8;
  const std::size_t frame_bytes = bytes_per_sample * f.channels;
  const std::size_t n_frames = wav.data.size() / frame_bytes;

  AudioClip clip;
  clip.sample_rate = static_cast<int>(f.sample_rate);
  clip.samples.resize(n_frames);
  for (std::size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < f.channels; ++c) {
      const std::size_t off = i * frame_bytes + c * bytes_per_sample;
      if (f.audio_format == kFormatPcm) {
        const auto raw = static_cast<std::int16_t>(read_u16(wav.data, off));
        acc += raw / 32768.0;
      } else {
        const float v = std::bit_cast<float>(read_u32(wav.data, off));
        if (!std::isfinite(v)) {
          fail(ErrorCode::format, path.string() + ": non-finite float sample at frame " +
                                      std::to_string(i));
        }
        acc += v;
      }
    }
    clip.samples[i] = static_cast<float>(acc / f.channels);
  }
  return clip;
}

double wav_duration(const std::filesystem::path& path) {
  // Header plus a little slack is enough to find fmt and data.
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  std::vector<std::uint8_t> head(4096);
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  const auto wav = parse_wav(head, path.string(), false);
  const std::size_t frame_bytes = wav.format.bits_per_sample / 8 * wav.format.channels;
  return static_cast<double>(wav.data_size / frame_bytes) / wav.format.sample_rate;
}

void write_wav16(const std::filesystem::path& path, const AudioClip& clip) {
  require(clip.sample_rate > 0, ErrorCode::invalid_argument, "sample_rate must be positive");
  const auto n = static_cast<std::uint32_t>(clip.samples.size());
  ByteWriter w;
  w.put_tag("RIFF");
  w.put_u32(36 + 2 * n);
  w.put_tag("WAVE");
  w.put_tag("fmt ");
  w.put_u32(16);
  w.put_u8(kFormatPcm & 0xFF);
  w.put_u8(kFormatPcm >> 8);
  w.put_u8(1);  // channels
  w.put_u8(0);
  w.put_u32(static_cast<std::uint32_t>(clip.sample_rate));
  w.put_u32(static_cast<std::uint32_t>(clip.sample_rate) * 2);
  w.put_u8(2);  // block align
  w.put_u8(0);
  w.put_u8(16);  // bits per sample
  w.put_u8(0);
  w.put_tag("data");
  w.put_u32(2 * n);
  for (float s : clip.samples) {
    const long v = std::lround(std::clamp(static_cast<double>(s), -1.0, 1.0) * 32768.0);
    const auto q = static_cast<std::int16_t>(std::clamp(v, -32768L, 32767L));
    const auto u = static_cast<std::uint16_t>(q);
    w.put_u8(static_cast<std::uint8_t>(u & 0xFF));
    w.put_u8(static_cast<std::uint8_t>(u >> 8));
  }
  write_file_atomic(path, w.bytes());
}

AudioClip resample(const AudioClip& clip, int target_rate) {
  require(target_rate > 0, ErrorCode::invalid_argument, "target_rate must be positive");
  require(clip.sample_rate > 0, ErrorCode::invalid_argument, "source sample_rate must be positive");
  if (target_rate == clip.sample_rate) return clip;

  const double ratio = static_cast<double>(target_rate) / clip.sample_rate;
  const auto out_len =
      static_cast<std::size_t>(std::llround(static_cast<double>(clip.samples.size()) * ratio));
  // Cutoff relative to the source Nyquist; below 1 when downsampling.
  const double cutoff = std::min(1.0, ratio);
  const double half_width = kZeroCrossings / cutoff;  // in source samples
  const auto& table = sinc_table();

  const auto n_in = static_cast<std::ptrdiff_t>(clip.samples.size());
  AudioClip out;
  out.sample_rate = target_rate;
  out.samples.resize(out_len);
  for (std::size_t n = 0; n < out_len; ++n) {
    const double t = static_cast<double>(n) / ratio;  // position in source samples
    const auto lo = static_cast<std::ptrdiff_t>(std::ceil(t - half_width));
    const auto hi = static_cast<std::ptrdiff_t>(std::floor(t + half_width));
    double acc = 0.0;
    for (std::ptrdiff_t k = std::max<std::ptrdiff_t>(lo, 0); k <= std::min(hi, n_in - 1); ++k) {
      const double u = std::abs(t - static_cast<double>(k)) * cutoff * kTableDensity;
      const auto i = static_cast<std::size_t>(u);
      if (i + 1 >= table.size()) continue;
      const double frac = u - static_cast<double>(i);
      const double h = table[i] + frac * (table[i + 1] - table[i]);
      acc += clip.samples[static_cast<std::size_t>(k)] * h;
    }
    out.samples[n] = static_cast<float>(acc * cutoff);
  }
  return out;
}

AudioClip slice_segment(const AudioClip& clip, double start_s, double end_s) {
  require(clip.sample_rate > 0, ErrorCode::invalid_argument, "clip has no sample rate");
  const double duration = clip.duration();
  // Half a sample of slack absorbs rounding in the duration.
  const double slack = 0.5 / clip.sample_rate;
  if (!(start_s >= 0.0 && start_s < end_s && end_s <= duration + slack)) {
    fail(ErrorCode::invalid_argument,
         "segment [" + std::to_string(start_s) + ", " + std::to_string(end_s) +
             "] s out of range for a " + std::to_string(duration) + " s clip");
  }
  const auto begin = static_cast<std::size_t>(std::llround(start_s * clip.sample_rate));
  const auto count = static_cast<std::size_t>(std::llround((end_s - start_s) * clip.sample_rate));
  if (begin + count > clip.samples.size()) {
    fail(ErrorCode::invalid_argument, "segment [" + std::to_string(start_s) + ", " +
                                          std::to_string(end_s) + "] s exceeds clip length");
  }
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                     clip.samples.begin() + static_cast<std::ptrdiff_t>(begin + count));
  return out;
}

AudioClip load_audio(const std::filesystem::path& path, int rate) {
  return resample(load_wav(path), rate);
}

}  // namespace tempofuse
