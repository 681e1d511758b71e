#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tempofuse/data.hpp"
#include "tempofuse/features.hpp"
#include "tempofuse/models/gradient_suite.hpp"

namespace tempofuse::cli {

namespace fs = std::filesystem;

inline constexpr const char* kCacheEnv = "TEMPOFUSE_CACHE";
inline constexpr const char* kDefaultCache = ".tempofuse-cache";

struct FeatureOptions {
  /// Tempogram segment; also the Mel segment unless mel_segment is set.
  std::string segment = "15:45";
  std::string mel_segment;
  int n_fft = 2048;
  int hop = 512;
  int n_mels = 128;
  int tempo_window = 384;

  features::FeatureConfig config() const;
};

/// Cache subdirectory holding the features computed with `cfg`.
fs::path feature_cache_dir(const fs::path& cache_root, const features::FeatureConfig& cfg);

/// A manifest CSV, or a dataset directory laid out as <class>/<song>.wav.
data::DatasetManifest load_manifest(const fs::path& path);

struct SynthOptions {
  fs::path out;
  fs::path spec;
  std::optional<int> songs_per_class;
  std::optional<double> duration;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
};

struct ExtractOptions {
  fs::path manifest;
  fs::path cache = kDefaultCache;
  FeatureOptions features;
  int jobs = 1;
};

struct ExtractSummary {
  fs::path dir;
  std::size_t extracted = 0;
  std::size_t skipped = 0;
};

struct TempoOptions {
  fs::path manifest;
  fs::path out;
  std::string segment = "15:45";
  int jobs = 1;
};

struct TrainOptions {
  fs::path manifest;
  /// Read when it exists; otherwise a fresh split is drawn from the seed.
  fs::path split;
  fs::path cache = kDefaultCache;
  fs::path out;
  FeatureOptions features;
  std::string mode = "late";
  std::size_t epochs = 200;
  std::size_t batch_size = 256;
  double lr = 0.005;
  double dropout = 0.5;
  std::size_t patience = 20;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::size_t blocks = 7;
  std::size_t channels = 128;
  std::size_t tempo_channels = 64;
  std::size_t embed_channels = 64;
  std::size_t pool_len = 8;
  std::size_t hidden = 512;
};

struct EvalOptions {
  fs::path checkpoint;
  fs::path manifest;
  fs::path split;
  std::string partition = "test";
  fs::path cache = kDefaultCache;
  fs::path out;
  std::size_t batch_size = 256;
  int jobs = 1;
};

struct PredictOptions {
  fs::path checkpoint;
  fs::path wav;
  std::size_t batch_size = 256;
  int jobs = 1;
};

void cmd_synth(const SynthOptions& o, std::ostream& out);
ExtractSummary cmd_extract(const ExtractOptions& o, std::ostream& out);
void cmd_tempo(const TempoOptions& o, std::ostream& out);
void cmd_train(const TrainOptions& o, std::ostream& out);
void cmd_eval(const EvalOptions& o, std::ostream& out);
void cmd_predict(const PredictOptions& o, std::ostream& out);
/// Throws ErrorCode::numeric when any case fails.
void cmd_gradcheck(const models::GradientSuiteOptions& o, std::ostream& out);

}  // namespace tempofuse::cli
