#include "tempofuse/train/evaluate.hpp"

#include <algorithm>
#include <numeric>

#include "tempofuse/error.hpp"
#include "tempofuse/nn/ops.hpp"
#include "tempofuse/parallel.hpp"
#include "tempofuse/train/dataset.hpp"

namespace tempofuse::train {

std::size_t argmax(std::span<const float> values) {
  require(!values.empty(), ErrorCode::empty_input, "argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::uint32_t vote_song_predictions(std::span<const std::uint32_t> chunk_preds) {
  require(!chunk_preds.empty(), ErrorCode::empty_input, "cannot vote over zero chunks");
  const std::uint32_t top = *std::max_element(chunk_preds.begin(), chunk_preds.end());
  std::vector<std::size_t> votes(static_cast<std::size_t>(top) + 1, 0);
  for (auto p : chunk_preds) ++votes[p];
  return static_cast<std::uint32_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

double accuracy(std::span<const std::uint32_t> truth, std::span<const std::uint32_t> pred) {
  require(truth.size() == pred.size(), ErrorCode::shape,
          "accuracy: " + std::to_string(truth.size()) + " labels vs " +
              std::to_string(pred.size()) + " predictions");
  require(!truth.empty(), ErrorCode::empty_input, "accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += truth[i] == pred[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < n_classes; ++p) s += at(truth, p);
  return s;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t s = 0;
  for (std::size_t c = 0; c < n_classes; ++c) s += at(c, c);
  return s;
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

ConfusionMatrix confusion_matrix(std::span<const std::uint32_t> truth,
                                 std::span<const std::uint32_t> pred, std::size_t n_classes,
                                 std::vector<std::string> classes) {
  require(truth.size() == pred.size(), ErrorCode::shape,
          "confusion_matrix: " + std::to_string(truth.size()) + " labels vs " +
              std::to_string(pred.size()) + " predictions");
  require(classes.empty() || classes.size() == n_classes, ErrorCode::invalid_argument,
          "confusion_matrix: class table length does not match n_classes");
  ConfusionMatrix cm;
  cm.n_classes = n_classes;
  cm.classes = std::move(classes);
  cm.counts.assign(n_classes * n_classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    require(truth[i] < n_classes && pred[i] < n_classes, ErrorCode::invalid_argument,
            "confusion_matrix: label " + std::to_string(std::max(truth[i], pred[i])) +
                " out of range for " + std::to_string(n_classes) + " classes");
    ++cm.counts[truth[i] * n_classes + pred[i]];
  }
  return cm;
}

Predictions predict(models::Model<float>& model, std::span<const features::FeatureRecord> records,
                    std::size_t batch_size, int jobs) {
  require(!records.empty(), ErrorCode::empty_input, "empty split: nothing to evaluate");
  require(batch_size >= 1, ErrorCode::invalid_argument, "batch size must be >= 1");
  const auto kind = model.config().kind;
  const std::size_t n_classes = model.config().classifier.n_classes;

  // Per-song work units; each writes only its own slot.
  struct SongResult {
    std::vector<std::uint32_t> preds;
    std::vector<std::vector<float>> probs;
  };
  std::vector<SongResult> per_song(records.size());
  const auto refs = enumerate_chunks(records, kind);
  std::vector<std::size_t> first(records.size() + 1, refs.size());
  for (std::size_t i = refs.size(); i-- > 0;) first[refs[i].record] = i;
  for (std::size_t r = records.size(); r-- > 0;) first[r] = std::min(first[r], first[r + 1]);

  parallel_for(records.size(), jobs, [&](std::size_t r) {
    nn::NoGradGuard no_grad;
    const nn::ForwardContext ctx{false, false, nullptr};
    const std::size_t begin = first[r], end = first[r + 1];
    auto& out = per_song[r];
    for (std::size_t b = begin; b < end; b += batch_size) {
      const std::size_t e = std::min(end, b + batch_size);
      const auto input = assemble_batch<float>(
          records, std::span<const ChunkRef>(refs).subspan(b, e - b), kind);
      const auto probs = nn::softmax(model.forward(input, ctx));
      const auto pv = probs.data();
      for (std::size_t i = 0; i < e - b; ++i) {
        std::vector<float> row(pv.begin() + i * n_classes, pv.begin() + (i + 1) * n_classes);
        out.preds.push_back(static_cast<std::uint32_t>(argmax(row)));
        out.probs.push_back(std::move(row));
      }
    }
  });

  Predictions p;
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    for (std::size_t i = 0; i < per_song[r].preds.size(); ++i) {
      p.chunk_label.push_back(rec.label);
      p.chunk_pred.push_back(per_song[r].preds[i]);
      p.chunk_song.push_back(static_cast<std::uint32_t>(r));
      p.chunk_probs.push_back(std::move(per_song[r].probs[i]));
    }
    p.song_id.push_back(rec.song_id);
    p.song_label.push_back(rec.label);
    p.song_pred.push_back(vote_song_predictions(per_song[r].preds));
  }
  return p;
}

Evaluation summarize(const Predictions& preds, std::size_t n_classes,
                     const std::vector<std::string>& classes) {
  Evaluation ev;
  ev.chunk_acc = accuracy(preds.chunk_label, preds.chunk_pred);
  ev.song_acc = accuracy(preds.song_label, preds.song_pred);
  ev.song_confusion = confusion_matrix(preds.song_label, preds.song_pred, n_classes, classes);
  ev.per_class.resize(n_classes);
  std::vector<std::size_t> chunk_hits(n_classes, 0), song_hits(n_classes, 0);
  for (std::size_t i = 0; i < preds.chunk_label.size(); ++i) {
    const auto c = preds.chunk_label[i];
    require(c < n_classes, ErrorCode::invalid_argument, "label out of range");
    ++ev.per_class[c].chunks;
    chunk_hits[c] += preds.chunk_pred[i] == c;
  }
  for (std::size_t i = 0; i < preds.song_label.size(); ++i) {
    const auto c = preds.song_label[i];
    ++ev.per_class[c].songs;
    song_hits[c] += preds.song_pred[i] == c;
  }
  for (std::size_t c = 0; c < n_classes; ++c) {
    auto& pc = ev.per_class[c];
    pc.name = classes.empty() ? std::to_string(c) : classes[c];
    pc.chunk_acc = pc.chunks ? static_cast<double>(chunk_hits[c]) / pc.chunks : 0.0;
    pc.song_acc = pc.songs ? static_cast<double>(song_hits[c]) / pc.songs : 0.0;
  }
  ev.predictions = preds;
  return ev;
}

double evaluate_chunk_accuracy(models::Model<float>& model,
                               std::span<const features::FeatureRecord> records,
                               std::size_t batch_size) {
  const auto p = predict(model, records, batch_size);
  return accuracy(p.chunk_label, p.chunk_pred);
}

double evaluate_song_accuracy(models::Model<float>& model,
                              std::span<const features::FeatureRecord> records,
                              std::size_t batch_size) {
  const auto p = predict(model, records, batch_size);
  return accuracy(p.song_label, p.song_pred);
}

}  // namespace tempofuse::train
