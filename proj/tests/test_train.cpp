#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "model_support.hpp"
#include "support.hpp"
#include "tempofuse/binary_format.hpp"
#include "tempofuse/error.hpp"
#include "tempofuse/models/checkpoint.hpp"
#include "tempofuse/train/dataset.hpp"
#include "tempofuse/train/evaluate.hpp"
#include "tempofuse/train/report.hpp"
#include "tempofuse/train/trainer.hpp"

using namespace tempofuse;
using namespace tempofuse::train;
using features::FeatureRecord;
using models::ModelKind;

namespace {

/// Random tempogram-only records; `offset` shifts class c by c * offset so
/// that separability can be dialed in.
std::vector<FeatureRecord> random_records(std::size_t n_classes, std::size_t per_class,
                                          std::size_t frames, float offset, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<FeatureRecord> recs;
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      FeatureRecord r;
      r.song_id = "s" + std::to_string(c) + "_" + std::to_string(i);
      r.label = static_cast<std::uint32_t>(c);
      r.fourier = Matrix(193, frames);
      for (std::size_t b = 0; b < 193; ++b) {
        for (std::size_t t = 0; t < frames; ++t) {
          r.fourier(b, t) = static_cast<float>(rng.normal()) + (b % 7 == c ? offset : 0.0f);
        }
      }
      recs.push_back(std::move(r));
    }
  }
  return recs;
}

TrainConfig small_train_config(std::size_t epochs) {
  TrainConfig cfg;
  cfg.model = test_support::small_config(ModelKind::ftg_only);
  cfg.batch_size = 8;
  cfg.epochs = epochs;
  cfg.patience = 0;
  cfg.dropout = 0.0;
  cfg.seed = 5;
  return cfg;
}

std::vector<std::string> names(std::size_t n) {
  std::vector<std::string> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back("class" + std::to_string(i));
  return v;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("voting examples") {
  using V = std::vector<std::uint32_t>;
  CHECK(vote_song_predictions(V{4, 4, 2}) == 4);
  CHECK(vote_song_predictions(V{7}) == 7);
  CHECK(vote_song_predictions(V{3, 1}) == 1);
  CHECK(vote_song_predictions(V{2, 5, 5, 2, 9}) == 2);
  CHECK_THROWS_AS(vote_song_predictions(V{}), Error);
  CHECK(argmax(std::vector<float>{0.2f, 0.5f, 0.5f}) == 1);
}

TEST_CASE("voting is invariant to chunk order") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::uint32_t> v(1 + rng.below(25));
    for (auto& x : v) x = static_cast<std::uint32_t>(rng.below(6));
    const auto expected = vote_song_predictions(v);
    for (int k = 0; k < 5; ++k) {
      rng.shuffle(v);
      REQUIRE(vote_song_predictions(v) == expected);
    }
  }
}

TEST_CASE("accuracy examples") {
  using V = std::vector<std::uint32_t>;
  const V truth{0, 1, 2, 3, 4};
  CHECK(accuracy(truth, truth) == 1.0);
  CHECK(accuracy(V{2}, V{1}) == 0.0);
  CHECK_THROWS_AS(accuracy(V{}, V{}), Error);

  Rng rng(8);
  const std::size_t n = 30000;
  V t(n), p(n);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = static_cast<std::uint32_t>(rng.below(30));
    p[i] = static_cast<std::uint32_t>(rng.below(30));
  }
  const double sigma = std::sqrt((1.0 / 30) * (29.0 / 30) / n);
  CHECK(std::abs(accuracy(t, p) - 1.0 / 30) < 3 * sigma);
}

TEST_CASE("confusion matrix examples") {
  using V = std::vector<std::uint32_t>;
  const auto cm = confusion_matrix(V{0, 0, 1}, V{0, 1, 1}, 2, {"a", "b"});
  CHECK(cm.at(0, 0) == 1);
  CHECK(cm.at(0, 1) == 1);
  CHECK(cm.at(1, 0) == 0);
  CHECK(cm.at(1, 1) == 1);
  CHECK(cm.total() == 3);

  const V all{0, 1, 2, 2, 1};
  const auto diag = confusion_matrix(all, all, 3, {});
  CHECK(diag.trace() == diag.total());
  CHECK(diag.row_sum(2) == 2);
  CHECK_THROWS_AS(confusion_matrix(V{0}, V{3}, 3, {}), Error);
}

TEST_CASE("chunk accuracy equals the chunk-level confusion trace over total") {
  Rng rng(9);
  std::vector<std::uint32_t> t(500), p(500);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<std::uint32_t>(rng.below(4));
    p[i] = rng.below(3) == 0 ? static_cast<std::uint32_t>(rng.below(4)) : t[i];
  }
  const auto cm = confusion_matrix(t, p, 4, {});
  CHECK(accuracy(t, p) == doctest::Approx(static_cast<double>(cm.trace()) / cm.total()));
  std::array<std::uint64_t, 4> counts{};
  for (auto x : t) ++counts[x];
  for (std::size_t c = 0; c < 4; ++c) CHECK(cm.row_sum(c) == counts[c]);
}

TEST_CASE("majority voting lifts song accuracy above chunk accuracy") {
  Predictions preds;
  // two songs of class 1 with three chunks each, one wrong chunk per song
  preds.chunk_label = {1, 1, 1, 1, 1, 1};
  preds.chunk_pred = {1, 0, 1, 2, 1, 1};
  preds.chunk_song = {0, 0, 0, 1, 1, 1};
  preds.chunk_probs.assign(6, std::vector<float>(3, 1.0f / 3));
  preds.song_id = {"x", "y"};
  preds.song_label = {1, 1};
  preds.song_pred = {1, 1};
  const auto ev = summarize(preds, 3, {"a", "b", "c"});
  CHECK(ev.song_acc == 1.0);
  CHECK(ev.chunk_acc == doctest::Approx(4.0 / 6));
  CHECK(ev.song_confusion.row_sum(1) == 2);
  CHECK(ev.per_class[1].songs == 2);
  CHECK(ev.per_class[1].chunks == 6);
}

TEST_CASE("chunk enumeration and tempogram index mapping") {
  FeatureRecord r;
  r.mel = Matrix(4, 5168);
  r.fourier = Matrix(193, 1293);
  r.autocorr = Matrix(384, 1292);
  CHECK(chunk_count(r, ModelKind::mel_only) == 25);
  CHECK(chunk_count(r, ModelKind::ftg_only) == 6);
  CHECK(chunk_count(r, ModelKind::late_fusion) == 25);

  for (std::size_t t = 0; t < 1293; ++t) r.fourier(0, t) = static_cast<float>(t);
  for (std::size_t t = 0; t < 5168; ++t) r.mel(0, t) = static_cast<float>(t);
  std::vector<FeatureRecord> recs{r};
  const auto refs = enumerate_chunks(recs, ModelKind::late_fusion);
  REQUIRE(refs.size() == 25);
  const std::vector<ChunkRef> pick{refs[7]};
  const auto batch = assemble_batch<float>(recs, pick, ModelKind::late_fusion);
  CHECK(batch.mel.shape() == nn::Shape{1, 1, 4, 200});
  CHECK(batch.mel.data()[0] == 1400.0f);
  // tempogram chunk 7 mod 6 = 1
  CHECK(batch.fourier.data()[0] == 200.0f);
  CHECK(batch.autocorr.shape() == nn::Shape{1, 384, 200});
}

TEST_CASE("normalization is fitted on the training partition") {
  auto recs = random_records(2, 3, 200, 2.0f, 1);
  TrainRecords tr{recs};
  const auto stats = fit_normalization(tr, ModelKind::ftg_only);
  REQUIRE(stats.size() == 1);
  CHECK(stats[0] == features::fit_zscore(recs, features::FeatureKind::fourier_tg));
  normalize_records(tr.records, stats);
  CHECK(tr.records[0].mel.empty());
  CHECK(std::abs(features::fit_zscore(tr.records, features::FeatureKind::fourier_tg).mean[3]) < 1e-5);
}

TEST_CASE("a one-class dataset is learned immediately") {
  auto recs = random_records(1, 4, 400, 0.0f, 2);
  auto cfg = small_train_config(3);
  const auto result = train_model(TrainRecords{recs}, ValidRecords{recs}, names(1), cfg);
  CHECK(result.epochs.back().val_song_acc == 1.0);
  CHECK(result.epochs.back().train_loss < 1e-6);
}

TEST_CASE("a tiny random two-class set is memorized") {
  auto recs = random_records(2, 6, 200, 0.0f, 3);
  auto cfg = small_train_config(50);
  const auto result = train_model(TrainRecords{recs}, ValidRecords{recs}, names(2), cfg);
  const bool memorized = std::any_of(result.epochs.begin(), result.epochs.end(),
                                     [](const EpochReport& e) { return e.val_chunk_acc == 1.0; });
  CHECK(memorized);
}

TEST_CASE("training is reproducible and evaluation is pure") {
  auto train = random_records(3, 6, 400, 0.7f, 4);
  auto valid = random_records(3, 2, 400, 0.7f, 5);
  auto cfg = small_train_config(3);
  cfg.dropout = 0.5;
  const auto a = train_model(TrainRecords{train}, ValidRecords{valid}, names(3), cfg);
  const auto b = train_model(TrainRecords{train}, ValidRecords{valid}, names(3), cfg);
  REQUIRE(a.epochs.size() == b.epochs.size());
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    CHECK(a.epochs[i].train_loss == doctest::Approx(b.epochs[i].train_loss).epsilon(1e-6));
  }
  CHECK(models::encode_checkpoint(a.best) == models::encode_checkpoint(b.best));
  CHECK(*a.best.optimizer == *b.best.optimizer);
  CHECK(a.best_epoch == b.best_epoch);

  auto model = models::build_model(a.best);
  auto test = random_records(3, 2, 400, 0.7f, 6);
  normalize_records(test, a.best.stats);
  const auto p1 = predict(model, test, 4, 1);
  const auto p2 = predict(model, test, 7, 3);
  CHECK(p1.chunk_probs == p2.chunk_probs);
  CHECK(p1.song_pred == p2.song_pred);
}

TEST_CASE("separable data trains to high accuracy") {
  auto train = random_records(3, 8, 400, 1.5f, 7);
  auto valid = random_records(3, 3, 400, 1.5f, 8);
  auto cfg = small_train_config(8);
  std::vector<EpochReport> seen;
  const auto result = train_model(TrainRecords{train}, ValidRecords{valid}, names(3), cfg,
                                  [&](const EpochReport& e) { seen.push_back(e); });
  CHECK(seen.size() == 8);
  CHECK(result.epochs.size() == 8);
  CHECK(result.best.config.class_names == names(3));
  const auto& best = result.epochs[result.best_epoch - 1];
  CHECK(best.val_song_acc >= 0.99);
}

TEST_CASE("training rejects empty partitions") {
  auto recs = random_records(2, 2, 200, 0.0f, 9);
  CHECK_THROWS_AS(train_model(TrainRecords{}, ValidRecords{recs}, names(2), small_train_config(1)), Error);
  CHECK_THROWS_AS(train_model(TrainRecords{recs}, ValidRecords{}, names(2), small_train_config(1)), Error);
}

TEST_CASE("report export") {
  test_support::TempDir dir;
  Predictions preds;
  preds.chunk_label = {0, 1, 2, 2};
  preds.chunk_pred = {0, 2, 2, 2};
  preds.chunk_song = {0, 1, 2, 3};
  preds.chunk_probs.assign(4, std::vector<float>(3, 0.0f));
  preds.song_id = {"a", "b", "c", "d"};
  preds.song_label = {0, 1, 2, 2};
  preds.song_pred = {0, 2, 2, 2};
  const auto ev = summarize(preds, 3, {"house", "techno", "trance"});
  const std::vector<EpochReport> epochs{{1, 0.5, 0.7, 0.75, 1.0}};
  export_report(dir.path, epochs, ev);

  const auto csv = slurp(dir / "confusion.csv");
  std::istringstream lines(csv);
  std::string header;
  std::getline(lines, header);
  CHECK(header == "class,house,techno,trance");
  std::size_t rows = 0;
  for (std::string l; std::getline(lines, l);) ++rows;
  CHECK(rows == 3);
  CHECK(csv.find("techno,0,0,1") != std::string::npos);

  const auto pgm = slurp(dir / "confusion.pgm");
  CHECK(pgm.rfind("P5\n3 3\n255\n", 0) == 0);
  CHECK(pgm.size() == std::string("P5\n3 3\n255\n").size() + 9);
  CHECK(slurp(dir / "epochs.csv").find("1,0.500000") != std::string::npos);
  CHECK(std::filesystem::exists(dir / "per_class.csv"));

  test_support::TempDir again;
  export_report(again.path, epochs, ev);
  for (auto f : {"confusion.csv", "confusion.pgm", "per_class.csv", "epochs.csv"}) {
    CHECK(slurp(dir / f) == slurp(again / f));
  }

  Matrix m(2, 5);
  m(1, 4) = 3.0f;
  write_pgm(m, dir / "m.pgm");
  const auto img = slurp(dir / "m.pgm");
  CHECK(img.rfind("P5\n5 2\n255\n", 0) == 0);
  CHECK(static_cast<unsigned char>(img.back()) == 255);
}
