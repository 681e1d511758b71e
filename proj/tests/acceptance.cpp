// Acceptance run: one PASS/FAIL line per criterion. Exit status 0 only when all pass.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "tempofuse/audio_io.hpp"
#include "tempofuse/data.hpp"
#include "tempofuse/dsp.hpp"
#include "tempofuse/error.hpp"
#include "tempofuse/features.hpp"
#include "tempofuse/models/checkpoint.hpp"
#include "tempofuse/models/gradient_suite.hpp"
#include "tempofuse/models/model.hpp"
#include "tempofuse/nn/ops.hpp"
#include "tempofuse/parallel.hpp"
#include "tempofuse/rng.hpp"
#include "tempofuse/train/dataset.hpp"
#include "tempofuse/train/evaluate.hpp"
#include "tempofuse/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace tempofuse;
using features::FeatureConfig;
using features::FeatureKind;
using features::FeatureRecord;
using models::ModelKind;

namespace {

struct Verdict {
  bool ok = false;
  std::string detail;
};

struct Context {
  fs::path work;
  int jobs = 1;
  std::uint64_t seed = 0;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void info(const std::string& line) { std::cout << "  info: " << line << "\n" << std::flush; }

data::SyntheticClass click_class(double bpm, double jitter) {
  return {"bpm" + std::to_string(static_cast<int>(bpm)), bpm, data::Timbre::click, jitter};
}

// 1. Mel chunking of a 120 s clip
Verdict mel_chunks(const Context&) {
  const auto clip = data::synth_click_track(click_class(120, 0.0), 120.0, kCanonicalRate, 1);
  FeatureConfig cfg;
  cfg.mel_segment = features::Segment::parse("full");
  const auto mel = features::to_decibels(dsp::mel_spectrogram(clip, cfg.stft, cfg.n_mels).values);
  const auto chunks = features::chunk_time_axis(mel);
  const std::size_t dropped = mel.cols() - chunks.size() * features::kChunkLen;
  const bool shapes = std::all_of(chunks.begin(), chunks.end(), [](const Matrix& c) {
    return c.rows() == 128 && c.cols() == features::kChunkLen;
  });
  std::ostringstream d;
  d << mel.cols() << " frames, " << chunks.size() << " chunks of " << chunks.front().rows() << "x"
    << chunks.front().cols() << ", " << dropped << " discarded";
  return {chunks.size() == 25 && shapes && dropped == 168, d.str()};
}

// 2. Tempogram shapes on the 15-45 s segment
Verdict tempogram_shapes(const Context&) {
  const auto clip = data::synth_click_track(click_class(120, 0.1), 60.0, kCanonicalRate, 2);
  const FeatureConfig cfg;  // 15:45 for every feature
  const auto rec = features::extract_features(clip, cfg, "probe", 0);
  std::ostringstream d;
  d << "fourier " << rec.fourier.rows() << "x" << rec.fourier.cols() << ", autocorrelation "
    << rec.autocorr.rows() << "x" << rec.autocorr.cols();
  const auto near = [](std::size_t v, long want) {
    return std::abs(static_cast<long>(v) - want) <= 1;
  };
  return {rec.fourier.rows() == 193 && near(rec.fourier.cols(), 1293) &&
              rec.autocorr.rows() == 384 && near(rec.autocorr.cols(), 1292),
          d.str()};
}

struct TempoScore {
  std::size_t hits = 0;
  std::size_t total = 0;
  std::string misses;
};

TempoScore score_tempo(const Context& ctx, double jitter, const fs::path& dir) {
  const std::vector<double> tempi{90, 110, 120, 128, 140, 170};
  constexpr int kPerTempo = 10;
  fs::create_directories(dir);
  const double bin = 60.0 * kCanonicalRate / 512.0 / dsp::kTempoWindow;
  std::vector<double> est(tempi.size() * kPerTempo);
  parallel_for(est.size(), ctx.jobs, [&](std::size_t i) {
    const double bpm = tempi[i / kPerTempo];
    const auto path = dir / ("click_" + std::to_string(i) + ".wav");
    write_wav16(path, data::synth_click_track(click_class(bpm, jitter), 30.0, kCanonicalRate,
                                              mix_seed(ctx.seed, 300 + i)));
    est[i] = dsp::estimate_global_tempo(load_audio(path));
  });
  TempoScore s;
  s.total = est.size();
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double bpm = tempi[i / kPerTempo];
    if (std::abs(est[i] - bpm) <= bin) {
      ++s.hits;
    } else {
      s.misses += " " + fmt("%.0f", bpm) + "->" + fmt("%.1f", est[i]);
    }
  }
  return s;
}

// 3. Global tempo of click tracks
Verdict tempo_accuracy(const Context& ctx) {
  const auto s = score_tempo(ctx, 0.1, ctx.work / "tempo");
  const double rate = static_cast<double>(s.hits) / static_cast<double>(s.total);
  std::ostringstream d;
  d << s.hits << "/" << s.total << " within one bin (" << fmt("%.2f", 60.0 * kCanonicalRate / 512.0 / 384.0)
    << " BPM), jitter 0.1" << (s.misses.empty() ? "" : ", misses:" + s.misses);
  const auto strict = score_tempo(ctx, 0.0, ctx.work / "tempo-strict");
  info("jitter 0: " + std::to_string(strict.hits) + "/" + std::to_string(strict.total) +
       (strict.misses.empty() ? "" : ", misses:" + strict.misses));
  return {rate >= 0.95, d.str()};
}

// 4. Finite-difference gradient suite
Verdict gradients(const Context& ctx) {
  models::GradientSuiteOptions o;
  o.seeds = 50;
  o.base_seed = ctx.seed;
  o.blocks = 2;
  o.channels = 8;
  o.tolerance = 1e-4;
  double worst = 0.0;
  std::string worst_name;
  std::vector<std::string> failed;
  std::size_t cases = 0;
  models::run_gradient_suite(o, [&](const models::GradientCaseResult& r) {
    ++cases;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
    if (!r.passed) failed.push_back(r.name);
  });
  std::ostringstream d;
  d << cases << " cases x 50 seeds, worst " << fmt("%.2e", worst) << " (" << worst_name << ")";
  for (const auto& f : failed) d << ", failed " << f;
  return {failed.empty() && cases > 0, d.str()};
}

struct SyntheticSet {
  data::DatasetManifest manifest;
  data::SplitSpec split;
  fs::path cache;
  FeatureConfig features;
};

SyntheticSet build_synthetic_set(const Context& ctx) {
  SyntheticSet s;
  auto spec = data::SyntheticSpec::default_suite();
  spec.seed = ctx.seed;
  s.manifest = data::synth_click_dataset(spec, ctx.work / "synthetic", ctx.jobs);
  s.split = data::split_dataset(s.manifest, {}, ctx.seed);
  // 30 s songs: every feature spans the whole clip
  s.features.mel_segment = features::Segment::parse("full");
  s.features.tempo_segment = features::Segment::parse("full");
  s.cache = ctx.work / "synthetic-features";
  fs::create_directories(s.cache);
  parallel_for(s.manifest.entries.size(), ctx.jobs, [&](std::size_t i) {
    const auto& e = s.manifest.entries[i];
    const auto rec = features::extract_features(load_audio(s.manifest.audio_path(e)), s.features,
                                                e.song_id,
                                                static_cast<std::uint32_t>(s.manifest.label_of(e)));
    features::write_feature_file(rec, s.cache / (e.song_id + ".tfr"));
  });
  return s;
}

std::vector<FeatureRecord> load_partition(const SyntheticSet& s, data::Partition p,
                                          ModelKind kind) {
  const auto ids = s.split.songs_in(p, s.manifest);
  const auto kinds = train::feature_kinds(kind);
  std::vector<FeatureRecord> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto rec = features::read_feature_file(s.cache / (id + ".tfr"));
    for (auto k : {FeatureKind::mel, FeatureKind::fourier_tg, FeatureKind::ac_tg}) {
      if (std::find(kinds.begin(), kinds.end(), k) == kinds.end()) rec.get(k) = Matrix();
    }
    out.push_back(std::move(rec));
  }
  return out;
}

train::TrainConfig reduced_config(ModelKind kind, std::uint64_t seed) {
  train::TrainConfig cfg;
  cfg.model.kind = kind;
  cfg.model.backbone.channels = {8, 8};
  cfg.model.tempo.channels = 16;
  cfg.model.tempo.embed_channels = 16;
  cfg.model.classifier.hidden = 32;
  cfg.batch_size = 32;
  cfg.lr = 0.005;
  cfg.epochs = 30;
  cfg.patience = 4;
  cfg.seed = seed;
  return cfg;
}

// 5. Song-level accuracy on the default synthetic set
Verdict synthetic_accuracy(const Context& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto set = build_synthetic_set(ctx);
  info("synthesized and extracted " + std::to_string(set.manifest.entries.size()) + " songs in " +
       fmt("%.0f", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) +
       " s");

  struct Target {
    ModelKind kind;
    double min_acc;
  };
  const std::vector<Target> targets{{ModelKind::ftg_only, 0.90},
                                    {ModelKind::late_fusion, 0.90},
                                    {ModelKind::early_fusion, 0.85}};
  bool ok = true;
  std::ostringstream d;
  for (const auto& t : targets) {
    const auto t1 = std::chrono::steady_clock::now();
    auto cfg = reduced_config(t.kind, ctx.seed);
    train::TrainRecords tr{load_partition(set, data::Partition::train, t.kind)};
    train::ValidRecords va{load_partition(set, data::Partition::valid, t.kind)};
    auto test = load_partition(set, data::Partition::test, t.kind);
    const auto result = train::train_model(
        std::move(tr), std::move(va), set.manifest.classes, cfg, [&](const train::EpochReport& e) {
          info(std::string(models::to_string(t.kind)) + " epoch " + std::to_string(e.epoch) +
               ": loss " + fmt("%.4f", e.train_loss) + ", valid song " +
               fmt("%.3f", e.val_song_acc) + " (" + fmt("%.0f", e.seconds) + " s)");
        });
    auto model = models::build_model(result.best);
    train::normalize_records(test, result.best.stats);
    const auto preds = train::predict(model, test, 256, ctx.jobs);
    const auto ev = train::summarize(preds, set.manifest.classes.size(), set.manifest.classes);
    const bool pass = ev.song_acc >= t.min_acc;
    ok = ok && pass;
    info(std::string(models::to_string(t.kind)) + ": " + std::to_string(result.epochs.size()) +
         " epochs, best " + std::to_string(result.best_epoch) + ", test chunk " +
         fmt("%.3f", ev.chunk_acc) + ", song " + fmt("%.3f", ev.song_acc) + " (" +
         fmt("%.0f", std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count()) +
         " s)");
    d << (d.tellp() > 0 ? ", " : "") << models::to_string(t.kind) << " " << fmt("%.3f", ev.song_acc)
      << (pass ? "" : " < ") << (pass ? "" : fmt("%.2f", t.min_acc));
  }
  return {ok, "song accuracy " + d.str()};
}

// 6. Voting, confusion and the uniform loss
Verdict evaluation_rules(const Context& ctx) {
  bool ok = true;
  std::vector<std::string> bad;
  const std::vector<std::pair<std::vector<std::uint32_t>, std::uint32_t>> votes{
      {{1, 0, 1, 0}, 0}, {{2, 2, 1, 1, 3}, 1}, {{4, 3}, 3}, {{0}, 0}, {{2, 1, 2}, 2}};
  for (const auto& [chunks, want] : votes) {
    if (train::vote_song_predictions(chunks) != want) bad.push_back("vote");
  }

  Rng rng(mix_seed(ctx.seed, 6));
  std::vector<std::uint32_t> truth(997), pred(997);
  std::vector<std::uint64_t> per_class(30, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    truth[i] = static_cast<std::uint32_t>(rng.below(30));
    pred[i] = static_cast<std::uint32_t>(rng.below(30));
    ++per_class[truth[i]];
  }
  const auto cm = train::confusion_matrix(truth, pred, 30);
  for (std::size_t c = 0; c < 30; ++c) {
    if (cm.row_sum(c) != per_class[c]) bad.push_back("confusion row " + std::to_string(c));
  }

  std::vector<std::size_t> labels(8);
  for (auto& l : labels) l = rng.below(30);
  const double ln30 = std::log(30.0);
  const auto loss_d = nn::cross_entropy(nn::Tensor<double>::zeros({8, 30}),
                                        std::span<const std::size_t>(labels))
                          .item();
  const auto loss_f = nn::cross_entropy(nn::Tensor<float>::zeros({8, 30}),
                                        std::span<const std::size_t>(labels))
                          .item();
  // a 30-class model whose output layer is zeroed
  models::ModelConfig mcfg;
  mcfg.kind = ModelKind::ftg_only;
  mcfg.tempo.channels = 8;
  mcfg.tempo.embed_channels = 8;
  mcfg.classifier.hidden = 16;
  models::Model<float> model(mcfg, ctx.seed);
  for (auto& p : model.parameters()) {
    if (p.name.rfind("classifier.output", 0) == 0) {
      for (auto& v : p.tensor->data()) v = 0.0f;
    }
  }
  std::vector<float> x(2 * 193 * 200);
  for (auto& v : x) v = static_cast<float>(rng.normal());
  models::ModelInput<float> in;
  in.fourier = nn::Tensor<float>::from({2, 193, 200}, std::move(x));
  std::vector<std::size_t> two{3, 17};
  const auto loss_m =
      nn::cross_entropy(model.forward(in, {}), std::span<const std::size_t>(two)).item();
  const double err = std::max({std::abs(loss_d - ln30), std::abs(loss_f - ln30),
                               std::abs(loss_m - ln30)});
  if (err > 1e-6) bad.push_back("uniform loss");
  ok = bad.empty();
  std::ostringstream d;
  d << "ties to lowest index, " << 30 << " confusion rows checked, |loss - ln 30| "
    << fmt("%.1e", err);
  for (const auto& b : bad) d << ", bad " << b;
  return {ok, d.str()};
}

// small separable tempogram records for the determinism checks
std::vector<FeatureRecord> toy_records(std::size_t per_class, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<FeatureRecord> recs;
  for (std::uint32_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      FeatureRecord r;
      r.song_id = "toy" + std::to_string(c) + "_" + std::to_string(i);
      r.label = c;
      r.fourier = Matrix(193, 400);
      for (std::size_t b = 0; b < 193; ++b) {
        for (std::size_t t = 0; t < 400; ++t) {
          r.fourier(b, t) = static_cast<float>(rng.normal()) + (b % 7 == c ? 0.7f : 0.0f);
        }
      }
      recs.push_back(std::move(r));
    }
  }
  return recs;
}

// 7. Reproducible training and exact checkpoints
Verdict reproducibility(const Context& ctx) {
  const auto train_set = toy_records(6, mix_seed(ctx.seed, 71));
  const auto valid_set = toy_records(2, mix_seed(ctx.seed, 72));
  train::TrainConfig cfg;
  cfg.model.kind = ModelKind::ftg_only;
  cfg.model.tempo.channels = 8;
  cfg.model.tempo.embed_channels = 8;
  cfg.model.classifier.hidden = 16;
  cfg.batch_size = 8;
  cfg.epochs = 4;
  cfg.patience = 0;
  cfg.seed = ctx.seed;
  const std::vector<std::string> names{"a", "b", "c"};
  const auto a = train::train_model(train::TrainRecords{train_set}, train::ValidRecords{valid_set},
                                    names, cfg);
  const auto b = train::train_model(train::TrainRecords{train_set}, train::ValidRecords{valid_set},
                                    names, cfg);
  double curve = a.epochs.size() == b.epochs.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(a.epochs.size(), b.epochs.size()); ++i) {
    const double x = a.epochs[i].train_loss, y = b.epochs[i].train_loss;
    curve = std::max(curve, std::abs(x - y) / std::max(std::abs(x), 1e-300));
  }
  const auto bytes_a = models::encode_checkpoint(a.best);
  const bool same_ckpt = bytes_a == models::encode_checkpoint(b.best);

  const auto path = ctx.work / "repro.tfck";
  fs::create_directories(ctx.work);
  models::save_checkpoint(a.best, path);
  const auto loaded = models::load_checkpoint(path);
  auto m1 = models::build_model(a.best);
  auto m2 = models::build_model(loaded);
  auto test = toy_records(2, mix_seed(ctx.seed, 73));
  train::normalize_records(test, a.best.stats);
  const auto p1 = train::predict(m1, test, 7, 1);
  const auto p2 = train::predict(m2, test, 7, 1);
  const bool exact = p1.chunk_probs == p2.chunk_probs && p1.song_pred == p2.song_pred &&
                     models::encode_checkpoint(loaded) == bytes_a;

  std::ostringstream d;
  d << "loss curves rel diff " << fmt("%.1e", curve) << ", checkpoints "
    << (same_ckpt ? "identical" : "DIFFER") << ", round trip " << (exact ? "bit-exact" : "INEXACT");
  return {curve <= 1e-6 && same_ckpt && exact, d.str()};
}

// 8. Every fusion parameter receives gradient
Verdict fusion_gradients(const Context& ctx) {
  std::vector<std::string> dead;
  std::size_t checked = 0;
  for (auto kind : {ModelKind::early_fusion, ModelKind::late_fusion}) {
    models::ModelConfig cfg;
    cfg.kind = kind;
    cfg.classifier.n_classes = 5;
    models::Model<float> model(cfg, mix_seed(ctx.seed, 8));
    Rng rng(mix_seed(ctx.seed, 81));
    auto randn = [&](nn::Shape shape) {
      std::vector<float> v(nn::numel(shape));
      for (auto& x : v) x = static_cast<float>(rng.normal());
      return nn::Tensor<float>::from(shape, std::move(v));
    };
    models::ModelInput<float> in;
    in.mel = randn({4, 1, 128, 200});
    in.fourier = randn({4, 193, 200});
    in.autocorr = randn({4, 384, 200});
    std::vector<std::size_t> labels{0, 1, 2, 3};
    auto loss = nn::cross_entropy(model.forward(in, {true, false, nullptr}),
                                  std::span<const std::size_t>(labels));
    nn::backward(loss);
    for (auto& p : model.parameters()) {
      ++checked;
      const auto g = p.tensor->grad();
      if (g.size() != p.tensor->numel() ||
          std::all_of(g.begin(), g.end(), [](float v) { return v == 0.0f; })) {
        dead.push_back(std::string(models::to_string(kind)) + ":" + p.name);
      }
    }
  }
  std::ostringstream d;
  d << checked << " parameter tensors of full-size early and late fusion, " << dead.size()
    << " without gradient";
  for (const auto& n : dead) d << " " << n;
  return {dead.empty(), d.str()};
}

struct Criterion {
  int id;
  std::string title;
  double limit_s;
  std::function<Verdict(const Context&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  Context ctx;
  bool keep = false;
  ctx.jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  app.add_option("criteria", only, "Criteria to run (default: all)")->check(CLI::Range(1, 8));
  app.add_option("--work-dir", ctx.work, "Scratch directory (default: a fresh temp dir)");
  app.add_flag("--keep", keep, "Keep the scratch directory");
  app.add_option("--jobs,-j", ctx.jobs, "Worker threads");
  app.add_option("--seed", ctx.seed, "Seed");
  CLI11_PARSE(app, argc, argv);

  const bool own_dir = ctx.work.empty();
  if (own_dir) {
    std::random_device rd;
    ctx.work = fs::temp_directory_path() / ("tempofuse-acceptance-" + std::to_string(rd()));
  }
  fs::create_directories(ctx.work);

  const std::vector<Criterion> all{
      {1, "120 s clip gives 25 Mel chunks of 128x200, 168 frames discarded", 5, mel_chunks},
      {2, "15-45 s tempograms are 193x(1293+-1) and 384x(1292+-1)", 10, tempogram_shapes},
      {3, "click-track tempo within one bin for >= 95% of 60 files", 120, tempo_accuracy},
      {4, "gradient check max rel error < 1e-4 over 50 seeds", 300, gradients},
      {5, "synthetic set: ftg/late >= 0.90, early >= 0.85 song accuracy", 1800,
       synthetic_accuracy},
      {6, "vote ties, confusion rows, uniform loss = ln 30 +- 1e-6", 60, evaluation_rules},
      {7, "same seed gives same losses and checkpoints; round trip exact", 300, reproducibility},
      {8, "no all-zero parameter gradient in fusion models", 120, fusion_gradients},
  };

  int failures = 0;
  for (const auto& c : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run(ctx);
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.limit_s;
    const bool pass = v.ok && in_time;
    if (!pass) ++failures;
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << c.id << ": " << c.title << " | "
              << v.detail << " | " << fmt("%.1f", secs) << " s of " << fmt("%.0f", c.limit_s)
              << " s" << (in_time ? "" : " (too slow)") << "\n"
              << std::flush;
  }
  if (own_dir && !keep) {
    std::error_code ec;
    fs::remove_all(ctx.work, ec);
  }
  return failures == 0 ? 0 : 1;
}
