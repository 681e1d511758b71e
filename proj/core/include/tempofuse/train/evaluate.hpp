#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tempofuse/features.hpp"
#include "tempofuse/models/model.hpp"

namespace tempofuse::train {

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const float> values);

/// Modal class of a song's chunk predictions; ties go to the lowest class index.
std::uint32_t vote_song_predictions(std::span<const std::uint32_t> chunk_preds);

/// Fraction of positions where `pred` equals `truth`.
double accuracy(std::span<const std::uint32_t> truth, std::span<const std::uint32_t> pred);

/// counts[true][pred]
struct ConfusionMatrix {
  std::size_t n_classes = 0;
  std::vector<std::string> classes;
  std::vector<std::uint64_t> counts;

  std::uint64_t at(std::size_t truth, std::size_t pred) const {
    return counts[truth * n_classes + pred];
  }
  std::uint64_t row_sum(std::size_t truth) const;
  std::uint64_t trace() const;
  std::uint64_t total() const;
};

ConfusionMatrix confusion_matrix(std::span<const std::uint32_t> truth,
                                 std::span<const std::uint32_t> pred, std::size_t n_classes,
                                 std::vector<std::string> classes = {});

/// Chunk- and song-level predictions of a model over normalized records.
struct Predictions {
  std::vector<std::uint32_t> chunk_label;
  std::vector<std::uint32_t> chunk_pred;
  std::vector<std::uint32_t> chunk_song;  // record index of each chunk
  std::vector<std::vector<float>> chunk_probs;
  std::vector<std::string> song_id;
  std::vector<std::uint32_t> song_label;
  std::vector<std::uint32_t> song_pred;
};

/// Eval-mode forward over every chunk, batched, then per-song voting.
/// Songs are split across up to `jobs` threads; the result does not depend on `jobs`.
Predictions predict(models::Model<float>& model,
                    std::span<const features::FeatureRecord> records,
                    std::size_t batch_size = 256, int jobs = 1);

struct ClassAccuracy {
  std::string name;
  std::size_t chunks = 0;
  std::size_t songs = 0;
  double chunk_acc = 0.0;
  double song_acc = 0.0;
};

struct Evaluation {
  double chunk_acc = 0.0;
  double song_acc = 0.0;
  ConfusionMatrix song_confusion;
  std::vector<ClassAccuracy> per_class;
  Predictions predictions;
};

Evaluation summarize(const Predictions& preds, std::size_t n_classes,
                     const std::vector<std::string>& classes);

double evaluate_chunk_accuracy(models::Model<float>& model,
                               std::span<const features::FeatureRecord> records,
                               std::size_t batch_size = 256);
double evaluate_song_accuracy(models::Model<float>& model,
                              std::span<const features::FeatureRecord> records,
                              std::size_t batch_size = 256);

}  // namespace tempofuse::train
