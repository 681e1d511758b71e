#include "tempofuse/train/dataset.hpp"

#include <algorithm>

#include "tempofuse/error.hpp"

namespace tempofuse::train {

using features::FeatureKind;
using features::FeatureRecord;
using models::ModelKind;

std::vector<FeatureKind> feature_kinds(ModelKind kind) {
  std::vector<FeatureKind> kinds;
  if (models::uses_mel(kind)) kinds.push_back(FeatureKind::mel);
  if (models::uses_fourier(kind)) kinds.push_back(FeatureKind::fourier_tg);
  if (models::uses_autocorr(kind)) kinds.push_back(FeatureKind::ac_tg);
  return kinds;
}

std::vector<features::NormalizationStats> fit_normalization(const TrainRecords& train,
                                                            ModelKind kind) {
  require(!train.empty(), ErrorCode::empty_input, "empty split: no training songs");
  std::vector<features::NormalizationStats> stats;
  for (auto k : feature_kinds(kind)) stats.push_back(features::fit_zscore(train.records, k));
  return stats;
}

void normalize_records(std::span<FeatureRecord> records,
                       std::span<const features::NormalizationStats> stats) {
  for (auto& rec : records) {
    for (auto k : {FeatureKind::mel, FeatureKind::fourier_tg, FeatureKind::ac_tg}) {
      const auto it = std::find_if(stats.begin(), stats.end(),
                                   [k](const auto& s) { return s.kind == k; });
      if (it == stats.end()) {
        rec.get(k) = Matrix();
      } else {
        features::apply_zscore_inplace(rec.get(k), *it);
      }
    }
  }
}

namespace {

std::size_t chunks_of(const FeatureRecord& rec, FeatureKind kind, std::size_t chunk_len) {
  return rec.get(kind).cols() / chunk_len;
}

void need_chunks(std::size_t n, const FeatureRecord& rec, FeatureKind kind) {
  require(n > 0, ErrorCode::shape,
          "song " + rec.song_id + ": " + std::string(features::to_string(kind)) +
              " matrix is shorter than one chunk");
}

}  // namespace

std::size_t chunk_count(const FeatureRecord& rec, ModelKind kind, std::size_t chunk_len) {
  require(chunk_len > 0, ErrorCode::invalid_argument, "chunk length must be > 0");
  const auto kinds = feature_kinds(kind);
  for (auto k : kinds) need_chunks(chunks_of(rec, k, chunk_len), rec, k);
  if (models::uses_mel(kind)) return chunks_of(rec, FeatureKind::mel, chunk_len);
  return chunks_of(rec, kinds.front(), chunk_len);
}

std::vector<ChunkRef> enumerate_chunks(std::span<const FeatureRecord> records, ModelKind kind,
                                       std::size_t chunk_len) {
  std::vector<ChunkRef> refs;
  for (std::size_t r = 0; r < records.size(); ++r) {
    const std::size_t n = chunk_count(records[r], kind, chunk_len);
    for (std::size_t c = 0; c < n; ++c) {
      refs.push_back({static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(c)});
    }
  }
  return refs;
}

namespace {

template <typename T>
void copy_chunk(const Matrix& m, std::size_t chunk, std::size_t chunk_len, T* dst) {
  const std::size_t begin = chunk * chunk_len;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r).subspan(begin, chunk_len);
    std::copy(row.begin(), row.end(), dst + r * chunk_len);
  }
}

template <typename T>
nn::Tensor<T> gather(std::span<const FeatureRecord> records, std::span<const ChunkRef> refs,
                     FeatureKind kind, bool mel_aligned, std::size_t chunk_len, bool four_d) {
  const std::size_t rows = records[refs.front().record].get(kind).rows();
  const std::size_t per = rows * chunk_len;
  std::vector<T> values(refs.size() * per);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& rec = records[refs[i].record];
    const auto& m = rec.get(kind);
    require(m.rows() == rows, ErrorCode::shape,
            "song " + rec.song_id + ": " + std::string(features::to_string(kind)) + " has " +
                std::to_string(m.rows()) + " rows, batch expects " + std::to_string(rows));
    const std::size_t available = m.cols() / chunk_len;
    need_chunks(available, rec, kind);
    std::size_t chunk = refs[i].chunk;
    if (mel_aligned) chunk %= available;
    require(chunk < available, ErrorCode::shape,
            "song " + rec.song_id + ": chunk " + std::to_string(chunk) + " out of range");
    copy_chunk(m, chunk, chunk_len, values.data() + i * per);
  }
  nn::Shape shape = four_d ? nn::Shape{refs.size(), 1, rows, chunk_len}
                           : nn::Shape{refs.size(), rows, chunk_len};
  return nn::Tensor<T>::from(std::move(shape), std::move(values));
}

}  // namespace

template <typename T>
models::ModelInput<T> assemble_batch(std::span<const FeatureRecord> records,
                                     std::span<const ChunkRef> refs, ModelKind kind,
                                     std::size_t chunk_len) {
  require(!refs.empty(), ErrorCode::empty_input, "empty batch");
  const bool mel = models::uses_mel(kind);
  models::ModelInput<T> in;
  if (mel) in.mel = gather<T>(records, refs, FeatureKind::mel, false, chunk_len, true);
  if (models::uses_fourier(kind)) {
    in.fourier = gather<T>(records, refs, FeatureKind::fourier_tg, mel, chunk_len, false);
  }
  if (models::uses_autocorr(kind)) {
    in.autocorr = gather<T>(records, refs, FeatureKind::ac_tg, mel, chunk_len, false);
  }
  return in;
}

template models::ModelInput<float> assemble_batch<float>(std::span<const FeatureRecord>,
                                                         std::span<const ChunkRef>, ModelKind,
                                                         std::size_t);
template models::ModelInput<double> assemble_batch<double>(std::span<const FeatureRecord>,
                                                           std::span<const ChunkRef>, ModelKind,
                                                           std::size_t);

}  // namespace tempofuse::train
