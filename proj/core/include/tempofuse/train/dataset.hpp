#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tempofuse/data.hpp"
#include "tempofuse/features.hpp"
#include "tempofuse/models/model.hpp"

namespace tempofuse::train {

/// Feature records tagged with the split they came from, so that statistics
/// can only be fitted on training data.
template <data::Partition P>
struct PartitionedRecords {
  std::vector<features::FeatureRecord> records;

  std::size_t size() const noexcept { return records.size(); }
  bool empty() const noexcept { return records.empty(); }
};

using TrainRecords = PartitionedRecords<data::Partition::train>;
using ValidRecords = PartitionedRecords<data::Partition::valid>;
using TestRecords = PartitionedRecords<data::Partition::test>;

/// Feature kinds a model kind consumes.
std::vector<features::FeatureKind> feature_kinds(models::ModelKind kind);

/// z-score statistics of every kind the model consumes, from training songs only.
std::vector<features::NormalizationStats> fit_normalization(const TrainRecords& train,
                                                            models::ModelKind kind);

/// Normalizes the matrices named by `stats` in place and frees the matrices
/// of kinds not listed.
void normalize_records(std::span<features::FeatureRecord> records,
                       std::span<const features::NormalizationStats> stats);

/// One chunk of one song.
struct ChunkRef {
  std::uint32_t record = 0;
  std::uint32_t chunk = 0;
};

/// Chunks a song contributes. Mel-based kinds use the Mel chunk count and
/// map chunk i to tempogram chunk i mod (tempogram chunk count), which is the
/// identity when all features span the same segment.
std::size_t chunk_count(const features::FeatureRecord& rec, models::ModelKind kind,
                        std::size_t chunk_len = features::kChunkLen);

std::vector<ChunkRef> enumerate_chunks(std::span<const features::FeatureRecord> records,
                                       models::ModelKind kind,
                                       std::size_t chunk_len = features::kChunkLen);

/// Copies the referenced chunks into model input tensors.
template <typename T>
models::ModelInput<T> assemble_batch(std::span<const features::FeatureRecord> records,
                                     std::span<const ChunkRef> refs, models::ModelKind kind,
                                     std::size_t chunk_len = features::kChunkLen);

}  // namespace tempofuse::train
