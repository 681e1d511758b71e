#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tempofuse/audio_io.hpp"

namespace tempofuse::data {

struct ManifestEntry {
  std::string song_id;
  std::filesystem::path relative_path;  // relative to DatasetManifest::root
  std::string class_name;

  bool operator==(const ManifestEntry&) const = default;
};

/// Songs with their class. Class indices are positions in `classes`, which is
/// sorted lexicographically.
struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;
  std::vector<std::string> classes;

  std::size_t class_index(std::string_view name) const;
  std::size_t label_of(const ManifestEntry& e) const { return class_index(e.class_name); }
  std::filesystem::path audio_path(const ManifestEntry& e) const { return root / e.relative_path; }
  const ManifestEntry& entry(std::string_view song_id) const;

  /// Checks unique song ids and that every class has at least one entry.
  void validate() const;
};

/// Scans root/<class_name>/<song>.wav. The song id is the file stem. When
/// `min_duration_s` is set, shorter files are rejected.
DatasetManifest build_manifest(const std::filesystem::path& root,
                               std::optional<double> min_duration_s = std::nullopt);

/// CSV `song_id,relative_path,class_name` with a header row. Paths are stored
/// relative to the manifest root, which is the CSV's directory on read.
void write_manifest_csv(const DatasetManifest& manifest, const std::filesystem::path& csv);
DatasetManifest read_manifest_csv(const std::filesystem::path& csv);

enum class Partition { train, valid, test };
std::string_view to_string(Partition p);
Partition partition_from_string(std::string_view s);

struct SplitRatios {
  unsigned train = 8;
  unsigned valid = 1;
  unsigned test = 1;
};

struct SplitSpec {
  SplitRatios ratios;
  std::uint64_t seed = 0;
  std::map<std::string, Partition> assignment;

  /// Song ids in manifest order that belong to `p`.
  std::vector<std::string> songs_in(Partition p, const DatasetManifest& manifest) const;
};

/// Per-class stratified split: each class is shuffled with a seed-derived
/// stream and cut into contiguous runs sized by largest remainders.
SplitSpec split_dataset(const DatasetManifest& manifest, SplitRatios ratios = {},
                        std::uint64_t seed = 0);

/// Per-partition song counts for a class of `n` songs.
std::array<std::size_t, 3> split_counts(std::size_t n, SplitRatios ratios);

/// CSV `song_id,partition`.
void write_split_csv(const SplitSpec& split, const std::filesystem::path& csv);
SplitSpec read_split_csv(const std::filesystem::path& csv);

enum class Timbre { click, noise_burst, tone_burst };

struct SyntheticClass {
  std::string name;
  double bpm = 120.0;
  Timbre timbre = Timbre::click;
  double jitter = 0.0;  // event timing jitter as a fraction of the beat period
};

struct SyntheticSpec {
  std::vector<SyntheticClass> classes;
  int songs_per_class = 100;
  double duration_s = 30.0;
  int sample_rate = kCanonicalRate;
  std::uint64_t seed = 0;

  void validate() const;

  /// Five classes at 90/110/128/140/170 BPM.
  static SyntheticSpec default_suite();
};

void to_json(nlohmann::json& j, const SyntheticSpec& spec);
void from_json(const nlohmann::json& j, SyntheticSpec& spec);

/// One synthetic song: events at the class tempo with a random phase,
/// per-event jitter and the class timbre, over faint background noise.
AudioClip synth_click_track(const SyntheticClass& cls, double duration_s, int sample_rate,
                            std::uint64_t seed);

/// Onset times (seconds) synth_click_track places for the same arguments.
std::vector<double> synth_event_times(const SyntheticClass& cls, double duration_s,
                                      std::uint64_t seed);

/// Writes out_dir/<class>/<class>_<nnn>.wav for every song plus
/// out_dir/manifest.csv and returns the manifest.
DatasetManifest synth_click_dataset(const SyntheticSpec& spec, const std::filesystem::path& out_dir,
                                    int jobs = 1);

}  // namespace tempofuse::data
