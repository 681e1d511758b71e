#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tempofuse/audio_io.hpp"
#include "tempofuse/dsp.hpp"
#include "tempofuse/matrix.hpp"

namespace tempofuse::features {

/// Feature matrices a record carries. Values double as the cache-file tags.
enum class FeatureKind : std::uint8_t { mel = 1, fourier_tg = 2, ac_tg = 3 };

inline constexpr std::size_t kChunkLen = 200;
inline constexpr float kStdFloor = 1e-8f;

std::string_view to_string(FeatureKind kind);
FeatureKind feature_kind_from_string(std::string_view s);

/// Time window of a clip used for a feature. `full` ignores start/end.
struct Segment {
  bool full = false;
  double start_s = 15.0;
  double end_s = 45.0;

  static Segment parse(std::string_view text);  // "15:45" or "full"
  std::string to_string() const;
  AudioClip apply(const AudioClip& clip) const;
  double min_duration() const { return full ? 0.0 : end_s; }
  bool operator==(const Segment&) const = default;
};

/// Everything that determines the cached matrices of a song.
struct FeatureConfig {
  dsp::StftConfig stft;
  int n_mels = dsp::kMelBands;
  int tempo_window = dsp::kTempoWindow;
  Segment mel_segment;
  Segment tempo_segment;

  std::size_t n_bins(FeatureKind kind) const;
  bool operator==(const FeatureConfig& o) const {
    return stft.window_len == o.stft.window_len && stft.hop == o.stft.hop &&
           n_mels == o.n_mels && tempo_window == o.tempo_window &&
           mel_segment == o.mel_segment && tempo_segment == o.tempo_segment;
  }
};

void to_json(nlohmann::json& j, const FeatureConfig& cfg);
void from_json(const nlohmann::json& j, FeatureConfig& cfg);

/// The three input representations of one song. The Mel matrix holds
/// decibels (10 log10 of the power Mel-spectrogram, floored at -100 dB).
struct FeatureRecord {
  std::string song_id;
  std::uint32_t label = 0;
  Matrix mel;
  Matrix fourier;
  Matrix autocorr;

  const Matrix& get(FeatureKind kind) const;
  Matrix& get(FeatureKind kind);
};

/// Fixed-width slices of one feature matrix, all labelled with the song's class.
struct ChunkSet {
  std::vector<Matrix> chunks;
  std::string source_id;
  std::uint32_t label = 0;
};

struct NormalizationStats {
  FeatureKind kind = FeatureKind::mel;
  std::vector<float> mean;
  std::vector<float> std;

  bool operator==(const NormalizationStats&) const = default;
};

/// Power to decibels, floored at 1e-10 power (-100 dB).
Matrix to_decibels(const Matrix& power);

/// floor(cols / chunk_len) non-overlapping chunks; the remainder is dropped.
std::vector<Matrix> chunk_time_axis(const Matrix& m, std::size_t chunk_len = kChunkLen);

ChunkSet make_chunk_set(const FeatureRecord& rec, FeatureKind kind,
                        std::size_t chunk_len = kChunkLen);

/// Per-bin mean and population std pooled over every frame of every record;
/// std is floored at kStdFloor.
NormalizationStats fit_zscore(std::span<const FeatureRecord> records, FeatureKind kind);

/// (m[b, t] - mean[b]) / std[b]
Matrix apply_zscore(const Matrix& m, const NormalizationStats& stats);
void apply_zscore_inplace(Matrix& m, const NormalizationStats& stats);

/// Computes all three matrices for an audio clip at the canonical rate.
FeatureRecord extract_features(const AudioClip& clip, const FeatureConfig& cfg,
                               std::string song_id, std::uint32_t label);

/// Binary cache: "TFR1" | u32 version | u32 label | u32 count |
/// per matrix: u8 kind, u32 rows, u32 cols, f32 data | u32 CRC32.
/// The song id is the file stem.
void write_feature_file(const FeatureRecord& rec, const std::filesystem::path& path);
FeatureRecord read_feature_file(const std::filesystem::path& path);

/// Same framing; one [2 x n_bins] matrix (mean row, std row) per kind,
/// tagged 0x10 + kind.
void write_stats_file(std::span<const NormalizationStats> stats, const std::filesystem::path& path);
std::vector<NormalizationStats> read_stats_file(const std::filesystem::path& path);

inline constexpr std::uint32_t kFeatureFileVersion = 1;
inline constexpr std::uint8_t kStatsTagBase = 0x10;

}  // namespace tempofuse::features
