#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "tempofuse/audio_io.hpp"

namespace test_support {

namespace fs = std::filesystem;

/// Directory removed on scope exit.
struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    std::random_device rd;
    path = fs::temp_directory_path() /
           ("tempofuse-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  fs::path operator/(const std::string& name) const { return path / name; }
};

inline void put_u16(std::ofstream& f, std::uint16_t v) {
  const char b[2] = {char(v & 0xff), char(v >> 8)};
  f.write(b, 2);
}
inline void put_u32(std::ofstream& f, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) f.put(char((v >> (8 * i)) & 0xff));
}

/// Hand-rolled PCM16 RIFF writer, independent of the library's writer.
inline void write_pcm16(const fs::path& path, int rate, int channels,
                        const std::vector<std::int16_t>& interleaved) {
  std::ofstream f(path, std::ios::binary);
  const auto data_bytes = static_cast<std::uint32_t>(interleaved.size() * 2);
  f.write("RIFF", 4);
  put_u32(f, 36 + data_bytes);
  f.write("WAVEfmt ", 8);
  put_u32(f, 16);
  put_u16(f, 1);
  put_u16(f, static_cast<std::uint16_t>(channels));
  put_u32(f, static_cast<std::uint32_t>(rate));
  put_u32(f, static_cast<std::uint32_t>(rate * channels * 2));
  put_u16(f, static_cast<std::uint16_t>(channels * 2));
  put_u16(f, 16);
  f.write("data", 4);
  put_u32(f, data_bytes);
  for (auto s : interleaved) put_u16(f, static_cast<std::uint16_t>(s));
}

/// Clicks at exact beat times: 10 ms decaying 2 kHz bursts.
inline tempofuse::AudioClip click_track(double bpm, double seconds, int rate = 22050,
                                        double phase_s = 0.0) {
  tempofuse::AudioClip clip;
  clip.sample_rate = rate;
  clip.samples.assign(static_cast<std::size_t>(seconds * rate), 0.0f);
  const double period = 60.0 / bpm;
  const auto burst = static_cast<std::size_t>(0.01 * rate);
  for (double t = phase_s; t < seconds; t += period) {
    const auto start = static_cast<std::size_t>(std::llround(t * rate));
    for (std::size_t i = 0; i < burst && start + i < clip.samples.size(); ++i) {
      const double u = static_cast<double>(i) / rate;
      clip.samples[start + i] +=
          static_cast<float>(0.8 * std::exp(-u * 400.0) * std::sin(2 * std::numbers::pi * 2000 * u));
    }
  }
  return clip;
}

inline tempofuse::AudioClip sine(double hz, double seconds, int rate, double amp = 0.5) {
  tempofuse::AudioClip clip;
  clip.sample_rate = rate;
  clip.samples.resize(static_cast<std::size_t>(seconds * rate));
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    clip.samples[i] = static_cast<float>(amp * std::sin(2 * std::numbers::pi * hz * i / rate));
  }
  return clip;
}

inline tempofuse::AudioClip zeros(double seconds, int rate = 22050) {
  tempofuse::AudioClip clip;
  clip.sample_rate = rate;
  clip.samples.assign(static_cast<std::size_t>(seconds * rate), 0.0f);
  return clip;
}

}  // namespace test_support
