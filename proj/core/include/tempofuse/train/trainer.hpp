#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tempofuse/models/checkpoint.hpp"
#include "tempofuse/models/model.hpp"
#include "tempofuse/train/dataset.hpp"

namespace tempofuse::train {

struct TrainConfig {
  std::size_t batch_size = 256;
  std::size_t epochs = 200;
  double lr = 0.005;
  double dropout = 0.5;
  std::uint64_t seed = 0;
  /// Stop after this many epochs without a better validation song accuracy;
  /// 0 runs every epoch.
  std::size_t patience = 20;
  /// Architecture; its kind, dropout, class count and class names are
  /// overwritten from this config and the training data.
  models::ModelConfig model;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

struct EpochReport {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_chunk_acc = 0.0;
  double val_song_acc = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  /// Parameters at the best validation song accuracy (ties: higher chunk
  /// accuracy, then the earlier epoch).
  models::Checkpoint best;
  std::size_t best_epoch = 0;
  std::vector<EpochReport> epochs;
};

using EpochCallback = std::function<void(const EpochReport&)>;

/// Fits normalization on `train`, trains with Adam on shuffled chunk
/// minibatches and keeps the best checkpoint. A final minibatch of one chunk
/// is dropped because train-mode batch normalization needs two samples.
TrainResult train_model(TrainRecords train, ValidRecords valid,
                        const std::vector<std::string>& class_names, const TrainConfig& cfg,
                        const EpochCallback& on_epoch = {});

}  // namespace tempofuse::train
