#include "tempofuse/features.hpp"

#include <cmath>
#include <string>

#include "tempofuse/binary_format.hpp"
#include "tempofuse/error.hpp"

namespace tempofuse::features {

namespace {

constexpr std::string_view kMagic = "TFR1";

bool is_feature_kind(std::uint8_t tag) { return tag >= 1 && tag <= 3; }

TaggedMatrix tagged(std::uint8_t tag, const Matrix& m) {
  return {tag, static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols()),
          m.data()};
}

}  // namespace

std::string_view to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::mel: return "mel";
    case FeatureKind::fourier_tg: return "fourier_tg";
    case FeatureKind::ac_tg: return "ac_tg";
  }
  return "mel";
}

FeatureKind feature_kind_from_string(std::string_view s) {
  if (s == "mel") return FeatureKind::mel;
  if (s == "fourier_tg") return FeatureKind::fourier_tg;
  if (s == "ac_tg") return FeatureKind::ac_tg;
  fail(ErrorCode::invalid_argument, "unknown feature kind \"" + std::string(s) + "\"");
}

Segment Segment::parse(std::string_view text) {
  if (text == "full") return {true, 0.0, 0.0};
  const auto colon = text.find(':');
  require(colon != std::string_view::npos, ErrorCode::invalid_argument,
          "segment must be START:END or full, got \"" + std::string(text) + "\"");
  try {
    const double a = std::stod(std::string(text.substr(0, colon)));
    const double b = std::stod(std::string(text.substr(colon + 1)));
    require(a >= 0.0 && a < b, ErrorCode::invalid_argument,
            "segment needs 0 <= START < END, got \"" + std::string(text) + "\"");
    return {false, a, b};
  } catch (const std::logic_error&) {
    fail(ErrorCode::invalid_argument, "segment bounds are not numbers: \"" + std::string(text) + "\"");
  }
}

std::string Segment::to_string() const {
  if (full) return "full";
  auto fmt = [](double v) {
    std::string s = std::to_string(v);
    s.erase(s.find_last_not_of('0') + 1);
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
  };
  return fmt(start_s) + ":" + fmt(end_s);
}

AudioClip Segment::apply(const AudioClip& clip) const {
  return full ? clip : slice_segment(clip, start_s, end_s);
}

std::size_t FeatureConfig::n_bins(FeatureKind kind) const {
  switch (kind) {
    case FeatureKind::mel: return static_cast<std::size_t>(n_mels);
    case FeatureKind::fourier_tg: return static_cast<std::size_t>(tempo_window / 2 + 1);
    case FeatureKind::ac_tg: return static_cast<std::size_t>(tempo_window);
  }
  return 0;
}

void to_json(nlohmann::json& j, const FeatureConfig& cfg) {
  j = {{"window_len", cfg.stft.window_len},
       {"hop", cfg.stft.hop},
       {"n_mels", cfg.n_mels},
       {"tempo_window", cfg.tempo_window},
       {"mel_segment", cfg.mel_segment.to_string()},
       {"tempo_segment", cfg.tempo_segment.to_string()}};
}

void from_json(const nlohmann::json& j, FeatureConfig& cfg) {
  cfg = FeatureConfig{};
  cfg.stft.window_len = j.value("window_len", cfg.stft.window_len);
  cfg.stft.hop = j.value("hop", cfg.stft.hop);
  cfg.n_mels = j.value("n_mels", cfg.n_mels);
  cfg.tempo_window = j.value("tempo_window", cfg.tempo_window);
  cfg.mel_segment = Segment::parse(j.value("mel_segment", cfg.mel_segment.to_string()));
  cfg.tempo_segment = Segment::parse(j.value("tempo_segment", cfg.tempo_segment.to_string()));
}

const Matrix& FeatureRecord::get(FeatureKind kind) const {
  switch (kind) {
    case FeatureKind::mel: return mel;
    case FeatureKind::fourier_tg: return fourier;
    case FeatureKind::ac_tg: return autocorr;
  }
  return mel;
}

Matrix& FeatureRecord::get(FeatureKind kind) {
  return const_cast<Matrix&>(std::as_const(*this).get(kind));
}

Matrix to_decibels(const Matrix& power) {
  Matrix out(power.rows(), power.cols());
  for (std::size_t i = 0; i < power.size(); ++i) {
    out.data()[i] =
        static_cast<float>(10.0 * std::log10(std::max(1e-10, double{power.data()[i]})));
  }
  return out;
}

std::vector<Matrix> chunk_time_axis(const Matrix& m, std::size_t chunk_len) {
  require(chunk_len >= 1, ErrorCode::invalid_argument, "chunk_len must be >= 1");
  std::vector<Matrix> chunks;
  const std::size_t n = m.cols() / chunk_len;
  chunks.reserve(n);
  for (std::size_t i = 0; i < n; ++i) chunks.push_back(m.col_range(i * chunk_len, chunk_len));
  return chunks;
}

ChunkSet make_chunk_set(const FeatureRecord& rec, FeatureKind kind, std::size_t chunk_len) {
  return {chunk_time_axis(rec.get(kind), chunk_len), rec.song_id, rec.label};
}

NormalizationStats fit_zscore(std::span<const FeatureRecord> records, FeatureKind kind) {
  require(!records.empty(), ErrorCode::empty_input, "fit_zscore: no training records");
  const std::size_t bins = records.front().get(kind).rows();
  std::vector<double> sum(bins, 0.0);
  std::size_t count = 0;
  for (const auto& rec : records) {
    const auto& m = rec.get(kind);
    require(m.rows() == bins, ErrorCode::shape,
            "fit_zscore: record " + rec.song_id + " has " + std::to_string(m.rows()) +
                " bins, expected " + std::to_string(bins));
    for (std::size_t b = 0; b < bins; ++b) {
      for (float v : m.row(b)) sum[b] += v;
    }
    count += m.cols();
  }
  require(count > 0, ErrorCode::empty_input, "fit_zscore: records have no frames");
  std::vector<double> mean(bins);
  for (std::size_t b = 0; b < bins; ++b) mean[b] = sum[b] / static_cast<double>(count);
  // Second pass for the variance keeps cancellation error small.
  std::vector<double> sq(bins, 0.0);
  for (const auto& rec : records) {
    const auto& m = rec.get(kind);
    for (std::size_t b = 0; b < bins; ++b) {
      for (float v : m.row(b)) {
        const double d = v - mean[b];
        sq[b] += d * d;
      }
    }
  }
  NormalizationStats stats{kind, std::vector<float>(bins), std::vector<float>(bins)};
  for (std::size_t b = 0; b < bins; ++b) {
    stats.mean[b] = static_cast<float>(mean[b]);
    stats.std[b] = std::max(kStdFloor, static_cast<float>(std::sqrt(sq[b] / static_cast<double>(count))));
  }
  return stats;
}

void apply_zscore_inplace(Matrix& m, const NormalizationStats& stats) {
  require(m.rows() == stats.mean.size() && m.rows() == stats.std.size(), ErrorCode::shape,
          "apply_zscore: matrix has " + std::to_string(m.rows()) + " rows, stats have " +
              std::to_string(stats.mean.size()));
  for (std::size_t b = 0; b < m.rows(); ++b) {
    const double mu = stats.mean[b];
    const double sd = stats.std[b];
    for (float& v : m.row(b)) v = static_cast<float>((v - mu) / sd);
  }
}

Matrix apply_zscore(const Matrix& m, const NormalizationStats& stats) {
  Matrix out = m;
  apply_zscore_inplace(out, stats);
  return out;
}

FeatureRecord extract_features(const AudioClip& clip, const FeatureConfig& cfg,
                               std::string song_id, std::uint32_t label) {
  const AudioClip mel_clip = cfg.mel_segment.apply(clip);
  const auto mel = dsp::mel_spectrogram(mel_clip, cfg.stft, cfg.n_mels);

  FeatureRecord rec;
  rec.song_id = std::move(song_id);
  rec.label = label;
  rec.mel = to_decibels(mel.values);

  const auto novelty = cfg.tempo_segment == cfg.mel_segment
                           ? dsp::novelty_curve(mel)
                           : dsp::novelty_curve(dsp::mel_spectrogram(
                                 cfg.tempo_segment.apply(clip), cfg.stft, cfg.n_mels));
  rec.fourier = dsp::fourier_tempogram(novelty, cfg.tempo_window).values;
  rec.autocorr = dsp::autocorrelation_tempogram(novelty, cfg.tempo_window).values;
  return rec;
}

void write_feature_file(const FeatureRecord& rec, const std::filesystem::path& path) {
  for (auto kind : {FeatureKind::mel, FeatureKind::fourier_tg, FeatureKind::ac_tg}) {
    require(!rec.get(kind).empty(), ErrorCode::invalid_argument,
            "refusing to write record " + rec.song_id + ": empty " +
                std::string(to_string(kind)) + " matrix");
  }
  const std::vector<TaggedMatrix> mats{
      tagged(static_cast<std::uint8_t>(FeatureKind::mel), rec.mel),
      tagged(static_cast<std::uint8_t>(FeatureKind::fourier_tg), rec.fourier),
      tagged(static_cast<std::uint8_t>(FeatureKind::ac_tg), rec.autocorr)};
  write_file_atomic(path, encode_container(kMagic, kFeatureFileVersion, rec.label, mats));
}

FeatureRecord read_feature_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  const auto c = decode_container(bytes, kMagic, path.string());
  require(c.version == kFeatureFileVersion, ErrorCode::format,
          path.string() + ": unsupported version " + std::to_string(c.version));
  FeatureRecord rec;
  rec.song_id = path.stem().string();
  rec.label = c.label;
  for (const auto& m : c.matrices) {
    require(is_feature_kind(m.tag), ErrorCode::format,
            path.string() + ": unknown matrix tag " + std::to_string(m.tag));
    rec.get(static_cast<FeatureKind>(m.tag)) = Matrix(m.rows, m.cols, m.values);
  }
  for (auto kind : {FeatureKind::mel, FeatureKind::fourier_tg, FeatureKind::ac_tg}) {
    require(!rec.get(kind).empty(), ErrorCode::format,
            path.string() + ": missing " + std::string(to_string(kind)) + " matrix");
  }
  return rec;
}

void write_stats_file(std::span<const NormalizationStats> stats, const std::filesystem::path& path) {
  std::vector<TaggedMatrix> mats;
  for (const auto& s : stats) {
    require(s.mean.size() == s.std.size(), ErrorCode::shape, "stats mean/std length mismatch");
    TaggedMatrix m{static_cast<std::uint8_t>(kStatsTagBase + static_cast<std::uint8_t>(s.kind)), 2,
                   static_cast<std::uint32_t>(s.mean.size()), s.mean};
    m.values.insert(m.values.end(), s.std.begin(), s.std.end());
    mats.push_back(std::move(m));
  }
  write_file_atomic(path, encode_container(kMagic, kFeatureFileVersion, 0, mats));
}

std::vector<NormalizationStats> read_stats_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  const auto c = decode_container(bytes, kMagic, path.string());
  std::vector<NormalizationStats> out;
  for (const auto& m : c.matrices) {
    require(m.tag > kStatsTagBase && is_feature_kind(m.tag - kStatsTagBase) && m.rows == 2,
            ErrorCode::format, path.string() + ": not a stats matrix (tag " +
                                   std::to_string(m.tag) + ")");
    NormalizationStats s;
    s.kind = static_cast<FeatureKind>(m.tag - kStatsTagBase);
    s.mean.assign(m.values.begin(), m.values.begin() + m.cols);
    s.std.assign(m.values.begin() + m.cols, m.values.end());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace tempofuse::features
