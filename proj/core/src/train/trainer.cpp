#include "tempofuse/train/trainer.hpp"

#include <chrono>
#include <cmath>

#include <nlohmann/json.hpp>

#include "tempofuse/error.hpp"
#include "tempofuse/nn/adam.hpp"
#include "tempofuse/nn/ops.hpp"
#include "tempofuse/rng.hpp"
#include "tempofuse/train/evaluate.hpp"

namespace tempofuse::train {

void TrainConfig::validate() const {
  require(batch_size >= 2, ErrorCode::invalid_argument,
          "batch size must be >= 2 (batch normalization)");
  require(epochs >= 1, ErrorCode::invalid_argument, "epochs must be >= 1");
  require(lr > 0.0 && std::isfinite(lr), ErrorCode::invalid_argument, "lr must be > 0");
  require(dropout >= 0.0 && dropout < 1.0, ErrorCode::invalid_argument,
          "dropout must be in [0, 1)");
}

void to_json(nlohmann::json& j, const TrainConfig& cfg) {
  j = nlohmann::json{{"batch_size", cfg.batch_size}, {"epochs", cfg.epochs},
                     {"lr", cfg.lr},                 {"dropout", cfg.dropout},
                     {"seed", cfg.seed},             {"patience", cfg.patience},
                     {"model", cfg.model}};
}

void from_json(const nlohmann::json& j, TrainConfig& cfg) {
  try {
    TrainConfig out;
    out.batch_size = j.value("batch_size", out.batch_size);
    out.epochs = j.value("epochs", out.epochs);
    out.lr = j.value("lr", out.lr);
    out.dropout = j.value("dropout", out.dropout);
    out.seed = j.value("seed", out.seed);
    out.patience = j.value("patience", out.patience);
    if (j.contains("model")) out.model = j.at("model").get<models::ModelConfig>();
    cfg = std::move(out);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::format, std::string("train config: ") + e.what());
  }
}

TrainResult train_model(TrainRecords train, ValidRecords valid,
                        const std::vector<std::string>& class_names, const TrainConfig& cfg,
                        const EpochCallback& on_epoch) {
  cfg.validate();
  require(!train.empty(), ErrorCode::empty_input, "empty split: no training songs");
  require(!valid.empty(), ErrorCode::empty_input, "empty split: no validation songs");
  require(!class_names.empty(), ErrorCode::invalid_argument, "class table is empty");
  for (const auto* set : {&train.records, &valid.records}) {
    for (const auto& rec : *set) {
      require(rec.label < class_names.size(), ErrorCode::invalid_argument,
              "song " + rec.song_id + " has label " + std::to_string(rec.label) + " but only " +
                  std::to_string(class_names.size()) + " classes exist");
    }
  }

  models::ModelConfig mcfg = cfg.model;
  mcfg.classifier.dropout = cfg.dropout;
  mcfg.classifier.n_classes = class_names.size();
  mcfg.class_names = class_names;
  const auto kind = mcfg.kind;

  const auto stats = fit_normalization(train, kind);
  normalize_records(train.records, stats);
  normalize_records(valid.records, stats);

  models::Model<float> model(mcfg, mix_seed(cfg.seed, 1));
  std::vector<nn::Tensor<float>*> params;
  for (auto& p : model.parameters()) params.push_back(p.tensor);
  nn::Adam<float> optimizer(params, nn::AdamConfig{cfg.lr});
  Rng shuffle_rng(mix_seed(cfg.seed, 2));
  Rng dropout_rng(mix_seed(cfg.seed, 3));

  auto refs = enumerate_chunks(train.records, kind);
  require(refs.size() >= 2, ErrorCode::empty_input, "training split has fewer than two chunks");
  std::vector<std::size_t> labels;

  TrainResult result;
  double best_song = -1.0, best_chunk = -1.0;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(refs);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < refs.size(); b += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, refs.size() - b);
      if (n < 2) break;
      const auto batch = std::span<const ChunkRef>(refs).subspan(b, n);
      const auto input = assemble_batch<float>(train.records, batch, kind);
      labels.clear();
      for (const auto& r : batch) labels.push_back(train.records[r.record].label);

      optimizer.zero_grad();
      const nn::ForwardContext ctx{true, true, &dropout_rng};
      auto loss = nn::cross_entropy(model.forward(input, ctx), std::span<const std::size_t>(labels));
      const double value = loss.item();
      if (!std::isfinite(value)) {
        fail(ErrorCode::numeric, "non-finite training loss at epoch " + std::to_string(epoch) +
                                     ", batch " + std::to_string(b / cfg.batch_size) +
                                     " (lr " + std::to_string(cfg.lr) + ")");
      }
      nn::backward(loss);
      optimizer.step();
      loss_sum += value * static_cast<double>(n);
      seen += n;
    }

    const auto preds = predict(model, valid.records);
    EpochReport report;
    report.epoch = epoch;
    report.train_loss = loss_sum / static_cast<double>(seen);
    report.val_chunk_acc = accuracy(preds.chunk_label, preds.chunk_pred);
    report.val_song_acc = accuracy(preds.song_label, preds.song_pred);
    report.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.epochs.push_back(report);
    if (on_epoch) on_epoch(report);

    if (report.val_song_acc > best_song ||
        (report.val_song_acc == best_song && report.val_chunk_acc > best_chunk)) {
      best_song = report.val_song_acc;
      best_chunk = report.val_chunk_acc;
      result.best = models::capture(model, &optimizer, stats);
      result.best_epoch = epoch;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

}  // namespace tempofuse::train
