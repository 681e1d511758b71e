#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tempofuse/audio_io.hpp"
#include "tempofuse/binary_format.hpp"
#include "tempofuse/dsp.hpp"
#include "tempofuse/error.hpp"
#include "tempofuse/models/checkpoint.hpp"
#include "tempofuse/models/model.hpp"
#include "tempofuse/parallel.hpp"
#include "tempofuse/train/dataset.hpp"
#include "tempofuse/train/evaluate.hpp"
#include "tempofuse/train/report.hpp"
#include "tempofuse/train/trainer.hpp"

namespace tempofuse::cli {

namespace {

using features::FeatureConfig;
using features::FeatureKind;
using features::FeatureRecord;

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string segment_key(const features::Segment& s) {
  if (s.full) return "full";
  auto text = s.to_string();
  std::replace(text.begin(), text.end(), ':', '-');
  return text;
}

void write_text(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

fs::path record_path(const fs::path& dir, const std::string& song_id) {
  return dir / (song_id + ".tfr");
}

double required_duration(const FeatureConfig& cfg) {
  return std::max(cfg.mel_segment.min_duration(), cfg.tempo_segment.min_duration());
}

void check_duration(const AudioClip& clip, const FeatureConfig& cfg, const std::string& what) {
  const double need = required_duration(cfg);
  require(clip.duration() + 1e-9 >= need, ErrorCode::invalid_argument,
          what + " is " + fixed(clip.duration(), 2) + " s long but the segment needs " +
              fixed(need, 2) + " s (use --segment full for short clips)");
}

/// Records the cache directory's feature config, or checks it against an
/// existing one.
void claim_cache_dir(const fs::path& dir, const FeatureConfig& cfg) {
  fs::create_directories(dir);
  const auto meta = dir / "features.json";
  if (fs::exists(meta)) {
    const auto bytes = read_file_bytes(meta);
    FeatureConfig existing = nlohmann::json::parse(bytes.begin(), bytes.end());
    require(existing == cfg, ErrorCode::state,
            "cache directory " + dir.string() + " holds features of a different configuration");
    return;
  }
  write_text(meta, nlohmann::json(cfg).dump(2) + "\n");
}

/// Extracts every listed song whose cache file is missing.
ExtractSummary ensure_features(const data::DatasetManifest& manifest,
                               const std::vector<std::string>& song_ids, const FeatureConfig& cfg,
                               const fs::path& cache_root, int jobs) {
  ExtractSummary summary;
  summary.dir = feature_cache_dir(cache_root, cfg);
  claim_cache_dir(summary.dir, cfg);
  std::vector<const data::ManifestEntry*> todo;
  for (const auto& id : song_ids) {
    if (fs::exists(record_path(summary.dir, id))) {
      ++summary.skipped;
    } else {
      todo.push_back(&manifest.entry(id));
    }
  }
  parallel_for(todo.size(), jobs, [&](std::size_t i) {
    const auto& e = *todo[i];
    const auto clip = load_audio(manifest.audio_path(e));
    check_duration(clip, cfg, "song " + e.song_id);
    const auto rec = features::extract_features(
        clip, cfg, e.song_id, static_cast<std::uint32_t>(manifest.label_of(e)));
    features::write_feature_file(rec, record_path(summary.dir, e.song_id));
  });
  summary.extracted = todo.size();
  return summary;
}

std::vector<std::string> all_song_ids(const data::DatasetManifest& manifest) {
  std::vector<std::string> ids;
  ids.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) ids.push_back(e.song_id);
  return ids;
}

/// Drops matrices the model does not consume.
void keep_kinds(FeatureRecord& rec, const std::vector<FeatureKind>& kinds) {
  for (auto k : {FeatureKind::mel, FeatureKind::fourier_tg, FeatureKind::ac_tg}) {
    if (std::find(kinds.begin(), kinds.end(), k) == kinds.end()) rec.get(k) = Matrix{};
  }
}

std::uint32_t class_label(const std::vector<std::string>& classes, const std::string& name) {
  const auto it = std::find(classes.begin(), classes.end(), name);
  require(it != classes.end(), ErrorCode::invalid_argument,
          "class '" + name + "' is not known to the model");
  return static_cast<std::uint32_t>(it - classes.begin());
}

/// Reads cached records in `song_ids` order, labelled by position in `classes`.
std::vector<FeatureRecord> load_records(const data::DatasetManifest& manifest,
                                        const std::vector<std::string>& song_ids,
                                        const fs::path& dir, const std::vector<FeatureKind>& kinds,
                                        const std::vector<std::string>& classes, int jobs) {
  std::vector<FeatureRecord> records(song_ids.size());
  parallel_for(song_ids.size(), jobs, [&](std::size_t i) {
    auto rec = features::read_feature_file(record_path(dir, song_ids[i]));
    rec.label = class_label(classes, manifest.entry(song_ids[i]).class_name);
    keep_kinds(rec, kinds);
    records[i] = std::move(rec);
  });
  return records;
}

std::string kind_file_name(FeatureKind k) {
  switch (k) {
    case FeatureKind::mel: return "mel";
    case FeatureKind::fourier_tg: return "fourier_tempogram";
    case FeatureKind::ac_tg: return "autocorr_tempogram";
  }
  return "feature";
}

}  // namespace

FeatureConfig FeatureOptions::config() const {
  FeatureConfig cfg;
  cfg.stft.window_len = n_fft;
  cfg.stft.hop = hop;
  cfg.stft.validate();
  require(n_mels > 0, ErrorCode::invalid_argument, "--n-mels must be positive");
  require(tempo_window > 1, ErrorCode::invalid_argument, "--tempo-window must exceed 1");
  cfg.n_mels = n_mels;
  cfg.tempo_window = tempo_window;
  cfg.tempo_segment = features::Segment::parse(segment);
  cfg.mel_segment = mel_segment.empty() ? cfg.tempo_segment : features::Segment::parse(mel_segment);
  return cfg;
}

fs::path feature_cache_dir(const fs::path& cache_root, const FeatureConfig& cfg) {
  return cache_root / ("w" + std::to_string(cfg.stft.window_len) + "-h" +
                       std::to_string(cfg.stft.hop) + "-m" + std::to_string(cfg.n_mels) + "-t" +
                       std::to_string(cfg.tempo_window) + "-mel_" + segment_key(cfg.mel_segment) +
                       "-tempo_" + segment_key(cfg.tempo_segment));
}

data::DatasetManifest load_manifest(const fs::path& path) {
  require(fs::exists(path), ErrorCode::io, "manifest not found: " + path.string());
  auto manifest = fs::is_directory(path) ? data::build_manifest(path) : data::read_manifest_csv(path);
  manifest.validate();
  return manifest;
}

void cmd_synth(const SynthOptions& o, std::ostream& out) {
  auto spec = data::SyntheticSpec::default_suite();
  if (!o.spec.empty()) {
    const auto bytes = read_file_bytes(o.spec);
    try {
      spec = nlohmann::json::parse(bytes.begin(), bytes.end()).get<data::SyntheticSpec>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::format, "bad synthetic spec " + o.spec.string() + ": " + e.what());
    }
  }
  if (o.songs_per_class) spec.songs_per_class = *o.songs_per_class;
  if (o.duration) spec.duration_s = *o.duration;
  if (o.seed) spec.seed = *o.seed;
  spec.validate();
  const auto manifest = data::synth_click_dataset(spec, o.out, o.jobs);
  out << "wrote " << manifest.entries.size() << " songs in " << manifest.classes.size()
      << " classes to " << (o.out / "manifest.csv").string() << "\n";
}

ExtractSummary cmd_extract(const ExtractOptions& o, std::ostream& out) {
  const auto manifest = load_manifest(o.manifest);
  const auto summary =
      ensure_features(manifest, all_song_ids(manifest), o.features.config(), o.cache, o.jobs);
  out << "extracted " << summary.extracted << ", skipped " << summary.skipped << " cached, in "
      << summary.dir.string() << "\n";
  return summary;
}

void cmd_tempo(const TempoOptions& o, std::ostream& out) {
  const auto manifest = load_manifest(o.manifest);
  const auto segment = features::Segment::parse(o.segment);
  std::vector<train::TempoRow> rows(manifest.entries.size());
  parallel_for(rows.size(), o.jobs, [&](std::size_t i) {
    const auto& e = manifest.entries[i];
    const auto clip = load_audio(manifest.audio_path(e));
    require(clip.duration() + 1e-9 >= segment.min_duration(), ErrorCode::invalid_argument,
            "song " + e.song_id + " is shorter than segment " + o.segment);
    rows[i] = {e.song_id, e.class_name, dsp::estimate_global_tempo(segment.apply(clip))};
  });
  train::write_tempo_csv(rows, o.out);
  out << "wrote tempo of " << rows.size() << " songs to " << o.out.string() << "\n";
}

void cmd_train(const TrainOptions& o, std::ostream& out) {
  require(!o.out.empty(), ErrorCode::invalid_argument, "--out is required");
  const auto manifest = load_manifest(o.manifest);
  const auto fcfg = o.features.config();

  train::TrainConfig cfg;
  cfg.batch_size = o.batch_size;
  cfg.epochs = o.epochs;
  cfg.lr = o.lr;
  cfg.dropout = o.dropout;
  cfg.seed = o.seed;
  cfg.patience = o.patience;
  auto& m = cfg.model;
  m.kind = models::model_kind_from_string(o.mode);
  m.backbone.channels.assign(o.blocks, o.channels);
  m.backbone.mel_bands = static_cast<std::size_t>(fcfg.n_mels);
  m.tempo.channels = o.tempo_channels;
  m.tempo.embed_channels = o.embed_channels;
  m.tempo.pool_len = o.pool_len;
  m.tempo.fourier_bins = fcfg.n_bins(FeatureKind::fourier_tg);
  m.tempo.autocorr_bins = fcfg.n_bins(FeatureKind::ac_tg);
  m.classifier.hidden = o.hidden;
  m.classifier.n_classes = manifest.classes.size();
  cfg.validate();

  const auto split = !o.split.empty() && fs::exists(o.split)
                         ? data::read_split_csv(o.split)
                         : data::split_dataset(manifest, {}, o.seed);
  fs::create_directories(o.out);
  data::write_split_csv(split, o.out / "split.csv");

  const auto train_ids = split.songs_in(data::Partition::train, manifest);
  const auto valid_ids = split.songs_in(data::Partition::valid, manifest);
  require(!train_ids.empty(), ErrorCode::empty_input, "empty split: no training songs");
  require(!valid_ids.empty(), ErrorCode::empty_input, "empty split: no validation songs");

  auto wanted = train_ids;
  wanted.insert(wanted.end(), valid_ids.begin(), valid_ids.end());
  const auto cache = ensure_features(manifest, wanted, fcfg, o.cache, o.jobs);
  if (cache.extracted > 0) out << "extracted " << cache.extracted << " songs\n";

  const auto kinds = train::feature_kinds(m.kind);
  train::TrainRecords train_set{load_records(manifest, train_ids, cache.dir, kinds, manifest.classes, o.jobs)};
  train::ValidRecords valid_set{load_records(manifest, valid_ids, cache.dir, kinds, manifest.classes, o.jobs)};

  out << "training " << models::to_string(m.kind) << " on " << train_set.size() << " songs, "
      << valid_set.size() << " for validation\n";
  auto result = train::train_model(std::move(train_set), std::move(valid_set), manifest.classes, cfg,
                                   [&](const train::EpochReport& r) {
                                     out << "epoch " << r.epoch << " loss " << fixed(r.train_loss)
                                         << " val_chunk_acc " << fixed(r.val_chunk_acc)
                                         << " val_song_acc " << fixed(r.val_song_acc) << " ("
                                         << fixed(r.seconds, 1) << " s)\n"
                                         << std::flush;
                                   });
  result.best.features = fcfg;
  models::save_checkpoint(result.best, o.out / "model.tfck");
  train::write_epochs_csv(result.epochs, o.out / "epochs.csv");
  write_text(o.out / "train_config.json", nlohmann::json(cfg).dump(2) + "\n");
  out << "best epoch " << result.best_epoch << ", checkpoint " << (o.out / "model.tfck").string()
      << "\n";
}

void cmd_eval(const EvalOptions& o, std::ostream& out) {
  require(!o.out.empty(), ErrorCode::invalid_argument, "--out is required");
  const auto ckpt = models::load_checkpoint(o.checkpoint);
  auto model = models::build_model(ckpt);
  const auto manifest = load_manifest(o.manifest);
  const auto split = data::read_split_csv(o.split);
  const auto partition = data::partition_from_string(o.partition);
  const auto ids = split.songs_in(partition, manifest);
  require(!ids.empty(), ErrorCode::empty_input,
          "empty split: partition " + o.partition + " has no songs");

  const auto cache = ensure_features(manifest, ids, ckpt.features, o.cache, o.jobs);
  const auto kinds = train::feature_kinds(ckpt.config.kind);
  const auto& classes = ckpt.config.class_names;
  auto records = load_records(manifest, ids, cache.dir, kinds, classes, o.jobs);

  fs::create_directories(o.out);
  for (auto k : kinds) train::write_pgm(records.front().get(k), o.out / (kind_file_name(k) + "_" + ids.front() + ".pgm"));

  train::normalize_records(records, ckpt.stats);
  const auto preds = train::predict(model, records, o.batch_size, o.jobs);
  const auto ev = train::summarize(preds, classes.size(), classes);
  train::export_report(o.out, {}, ev);

  std::ostringstream csv;
  csv << "song_id,label,prediction\n";
  for (std::size_t i = 0; i < preds.song_id.size(); ++i) {
    csv << preds.song_id[i] << "," << classes[preds.song_label[i]] << ","
        << classes[preds.song_pred[i]] << "\n";
  }
  write_text(o.out / "predictions.csv", csv.str());

  out << "partition " << o.partition << ": " << preds.song_id.size() << " songs, "
      << preds.chunk_pred.size() << " chunks, chunk_acc " << fixed(ev.chunk_acc) << ", song_acc "
      << fixed(ev.song_acc) << "\n";
}

void cmd_predict(const PredictOptions& o, std::ostream& out) {
  const auto ckpt = models::load_checkpoint(o.checkpoint);
  auto model = models::build_model(ckpt);
  const auto clip = load_audio(o.wav);
  check_duration(clip, ckpt.features, o.wav.string());
  auto rec = features::extract_features(clip, ckpt.features, o.wav.stem().string(), 0);
  keep_kinds(rec, train::feature_kinds(ckpt.config.kind));
  std::vector<FeatureRecord> records{std::move(rec)};
  train::normalize_records(records, ckpt.stats);
  const auto preds = train::predict(model, records, o.batch_size, o.jobs);

  const auto& classes = ckpt.config.class_names;
  std::vector<std::size_t> votes(classes.size(), 0);
  std::vector<double> scores(classes.size(), 0.0);
  for (std::size_t c = 0; c < preds.chunk_pred.size(); ++c) {
    ++votes[preds.chunk_pred[c]];
    for (std::size_t k = 0; k < classes.size(); ++k) scores[k] += preds.chunk_probs[c][k];
  }
  nlohmann::json j;
  j["file"] = o.wav.string();
  j["class"] = classes[preds.song_pred.front()];
  j["class_index"] = preds.song_pred.front();
  j["chunks"] = preds.chunk_pred.size();
  j["chunk_predictions"] = nlohmann::json::array();
  for (auto p : preds.chunk_pred) j["chunk_predictions"].push_back(classes[p]);
  for (std::size_t k = 0; k < classes.size(); ++k) {
    j["votes"][classes[k]] = votes[k];
    // mean softmax probability over chunks
    j["scores"][classes[k]] = scores[k] / static_cast<double>(preds.chunk_pred.size());
  }
  out << j.dump(2) << "\n";
}

void cmd_gradcheck(const models::GradientSuiteOptions& o, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> failed;
  models::run_gradient_suite(o, [&](const models::GradientCaseResult& r) {
    char line[256];
    std::snprintf(line, sizeof line, "%-20s %s max_rel_error %.3e checked %zu skipped %zu worst %s",
                  r.name.c_str(), r.passed ? "pass" : "FAIL", r.max_rel_error, r.checked,
                  r.skipped, r.worst.c_str());
    out << line << "\n" << std::flush;
    if (!r.passed) failed.push_back(r.name);
  });
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out << "seeds " << o.seeds << ", tolerance " << o.tolerance << ", " << fixed(secs, 1) << " s\n";
  if (!failed.empty()) {
    std::string names;
    for (const auto& n : failed) names += (names.empty() ? "" : ",") + n;
    fail(ErrorCode::numeric, "gradient check failed: " + names);
  }
}

}  // namespace tempofuse::cli
